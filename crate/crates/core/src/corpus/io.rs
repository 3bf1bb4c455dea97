//! Dataset files: the official distractor-setting JSON array and the
//! internal newline-delimited JSON format (one `QAExample` per line).

use super::example::{missing, Hyperlink, Paragraph, QAExample, Sentence, SupportingFact};
use super::text::tokenize;
use crate::{Error, Result};
use serde_json::Value;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Loads an official HotpotQA file (a JSON array of records).
pub fn load_hotpot(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_hotpot(&text)
}

pub fn parse_hotpot(text: &str) -> Result<Vec<QAExample>> {
    let records: Vec<Value> = serde_json::from_str(text)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(r, i))
        .collect()
}

fn parse_record(r: &Value, position: usize) -> Result<QAExample> {
    let id = r
        .get("_id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| missing(&format!("#{position}"), "_id"))?;
    let str_field = |name: &str| {
        r.get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| missing(&id, name))
    };
    let question = str_field("question")?;
    let answer = str_field("answer")?;
    let qtype = str_field("type")?.parse()?;

    let context = r
        .get("context")
        .and_then(Value::as_array)
        .ok_or_else(|| missing(&id, "context"))?;
    if context.is_empty() {
        return Err(Error::NoParagraphs { id });
    }
    let mut paragraphs = Vec::with_capacity(context.len());
    for entry in context {
        let pair = entry.as_array().filter(|a| a.len() == 2);
        let title = pair
            .and_then(|a| a[0].as_str())
            .ok_or_else(|| missing(&id, "context.title"))?;
        let sents = pair
            .and_then(|a| a[1].as_array())
            .ok_or_else(|| missing(&id, "context.sentences"))?;
        let sentences = sents
            .iter()
            .map(|s| s.as_str().map(Sentence::new))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| missing(&id, "context.sentences"))?;
        paragraphs.push(Paragraph {
            title: title.to_string(),
            sentences,
            hyperlinks: Vec::new(),
        });
    }
    derive_title_links(&mut paragraphs);

    let sfs = r
        .get("supporting_facts")
        .and_then(Value::as_array)
        .ok_or_else(|| missing(&id, "supporting_facts"))?;
    let mut supporting_facts = Vec::with_capacity(sfs.len());
    for sf in sfs {
        let pair = sf.as_array().filter(|a| a.len() == 2);
        let title = pair.and_then(|a| a[0].as_str());
        let idx = pair.and_then(|a| a[1].as_u64());
        let (Some(title), Some(idx)) = (title, idx) else {
            return Err(missing(&id, "supporting_facts"));
        };
        let fact = SupportingFact(title.to_string(), idx as usize);
        let valid = paragraphs
            .iter()
            .find(|p| p.title == fact.0)
            .is_some_and(|p| fact.1 < p.sentences.len());
        if valid {
            if !supporting_facts.contains(&fact) {
                supporting_facts.push(fact);
            }
        } else {
            // The official files contain a handful of facts pointing past the
            // end of their paragraph.
            log::warn!("{id}: dropping dangling supporting fact {fact:?}");
        }
    }

    Ok(QAExample {
        question_tokens: tokenize(&question),
        id,
        question,
        paragraphs,
        answer,
        supporting_facts,
        qtype,
    })
}

/// The distractor files carry no hyperlinks; a sentence is treated as
/// linking to every other paragraph whose title it mentions.
pub fn derive_title_links(paragraphs: &mut [Paragraph]) {
    let titles: Vec<Vec<String>> = paragraphs.iter().map(|p| title_tokens(&p.title)).collect();
    for pi in 0..paragraphs.len() {
        let mut links = Vec::new();
        for (si, s) in paragraphs[pi].sentences.iter().enumerate() {
            let lowered: Vec<String> = s.tokens.iter().map(|t| t.to_lowercase()).collect();
            for (qi, t) in titles.iter().enumerate() {
                if qi != pi && !t.is_empty() && contains_seq(&lowered, t) {
                    links.push(Hyperlink {
                        sentence: si,
                        target: paragraphs[qi].title.clone(),
                    });
                }
            }
        }
        paragraphs[pi].hyperlinks = links;
    }
}

/// Lowercased title tokens with a trailing parenthetical disambiguator
/// removed ("Skiffle (band)" → ["skiffle"]).
pub fn title_tokens(title: &str) -> Vec<String> {
    let base = match title.rfind(" (") {
        Some(i) if title.ends_with(')') => &title[..i],
        _ => title,
    };
    tokenize(base).into_iter().map(|t| t.to_lowercase()).collect()
}

pub(crate) fn contains_seq<S: AsRef<str>>(hay: &[S], needle: &[S]) -> bool {
    find_seq(hay, needle).is_some()
}

pub(crate) fn find_seq<S: AsRef<str>>(hay: &[S], needle: &[S]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| {
        hay[i..i + needle.len()]
            .iter()
            .zip(needle)
            .all(|(a, b)| a.as_ref() == b.as_ref())
    })
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[QAExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(&line)?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

/// Reads either format, sniffing the first non-blank byte: `[` means the
/// official JSON array, anything else the internal JSONL.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    let path = path.as_ref();
    let mut head = [0u8; 64];
    let n = File::open(path)?.read(&mut head)?;
    let first = head[..n].iter().find(|b| !b.is_ascii_whitespace());
    if first == Some(&b'[') {
        load_hotpot(path)
    } else {
        read_jsonl(path)
    }
}
