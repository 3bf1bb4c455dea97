//! Dataset ingestion, synthetic corpora and answer normalisation.

mod example;
pub mod fixtures;
mod io;
mod synth;
mod text;

pub use example::{Hyperlink, Paragraph, QAExample, QuestionType, Sentence, SupportingFact};
pub use io::{
    derive_title_links, load_dataset, load_hotpot, parse_hotpot, read_jsonl, title_tokens,
    write_jsonl,
};
pub(crate) use io::find_seq;
pub use synth::{generate_synthetic, SynthConfig};
pub use text::{normalize_answer, normalize_text, tokenize, tokenize_with_offsets};
