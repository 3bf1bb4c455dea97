//! Token embeddings, bi-directional attention and node pooling.

use crate::corpus::QAExample;
use crate::graph::HierarchicalGraph;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Shape, Tape, Var};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const OOV: usize = 0;
const OOV_TOKEN: &str = "<unk>";

/// Lowercased token vocabulary. Id 0 is reserved for unknown tokens; the
/// rest are ordered by descending frequency, ties by first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    pub fn build(examples: &[QAExample], max_size: usize) -> Self {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut next = 0;
        let mut see = |t: &str| {
            let e = counts.entry(t.to_lowercase()).or_insert_with(|| {
                next += 1;
                (0, next)
            });
            e.0 += 1;
        };
        for ex in examples {
            ex.question_tokens.iter().for_each(|t| see(t));
            for p in &ex.paragraphs {
                for s in &p.sentences {
                    s.tokens.iter().for_each(|t| see(t));
                }
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let mut words = vec![OOV_TOKEN.to_string()];
        words.extend(
            ranked
                .into_iter()
                .map(|(w, _)| w)
                .filter(|w| w != OOV_TOKEN)
                .take(max_size.saturating_sub(1)),
        );
        words.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(OOV)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub use_bi_attention: bool,
    /// Mix each token with its left and right neighbours inside the same
    /// sentence before attention.
    #[serde(default = "yes")]
    pub local_context: bool,
    /// Add a learned vector to context tokens that also occur in the
    /// question.
    #[serde(default = "yes")]
    pub exact_match: bool,
}

fn yes() -> bool {
    true
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 5000,
            d: 32,
            max_positions: 512,
            dropout: 0.2,
            use_bi_attention: true,
            local_context: true,
            exact_match: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub position: ParamId,
    pub w_c: ParamId,
    pub w_q: ParamId,
    pub w_cq: ParamId,
    pub w_out: ParamId,
    /// `(3d × d, 1 × d)` neighbour-mixing weights, when enabled.
    pub local: Option<(ParamId, ParamId)>,
    /// `1 × d` exact-match vector, when enabled.
    pub exact_match: Option<ParamId>,
}

impl EncoderParams {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.d;
        EncoderParams {
            embedding: store.normal("encoder.embedding", Shape::new(cfg.vocab_size, d), 0.5, rng),
            position: store.normal("encoder.position", Shape::new(cfg.max_positions, d), 0.1, rng),
            w_c: store.glorot("encoder.att.w_c", Shape::new(d, 1), rng),
            w_q: store.glorot("encoder.att.w_q", Shape::new(d, 1), rng),
            w_cq: store.glorot("encoder.att.w_cq", Shape::new(1, d), rng),
            w_out: store.glorot("encoder.att.out", Shape::new(4 * d, d), rng),
            local: cfg.local_context.then(|| {
                (
                    store.glorot("encoder.local.w", Shape::new(3 * d, d), rng),
                    store.zeros("encoder.local.b", Shape::row(d)),
                )
            }),
            exact_match: cfg
                .exact_match
                .then(|| store.normal("encoder.exact_match", Shape::row(d), 0.5, rng)),
        }
    }
}

/// Embedding plus learned position offsets (positions past the table reuse
/// the last row), followed by dropout.
pub fn encode_tokens<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    p: &EncoderParams,
    cfg: &EncoderConfig,
    ids: &[usize],
) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::EmptyContext);
    }
    let vocab = store.tensor(p.embedding).shape().rows;
    let ids: Vec<usize> = ids.iter().map(|&i| if i < vocab { i } else { OOV }).collect();
    let last = cfg.max_positions - 1;
    let pos: Vec<usize> = (0..ids.len()).map(|i| i.min(last)).collect();
    let emb = tape.param(store, p.embedding);
    let pe = tape.param(store, p.position);
    let x = tape.gather_rows(emb, &ids)?;
    let y = tape.gather_rows(pe, &pos)?;
    let out = tape.add(x, y)?;
    Ok(tape.dropout(out, cfg.dropout))
}

/// `x + LeakyReLU([x_{t-1}; x_t; x_{t+1}] · W + b)`, where neighbours in a
/// different segment (or past either end) are zero.
pub fn local_context<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    weights: (ParamId, ParamId),
    x: Var,
    segments: &[usize],
) -> Result<Var> {
    let s = tape.shape(x);
    if segments.len() != s.rows {
        return Err(Error::Layout(format!(
            "{} segment ids for {} tokens",
            segments.len(),
            s.rows
        )));
    }
    let n = s.rows;
    let zero = tape.leaf(Shape::row(s.cols), vec![T::zero(); s.cols], false)?;
    let padded = tape.concat_rows(&[x, zero])?;
    let prev: Vec<usize> = (0..n)
        .map(|t| if t > 0 && segments[t - 1] == segments[t] { t - 1 } else { n })
        .collect();
    let next: Vec<usize> = (0..n)
        .map(|t| if t + 1 < n && segments[t + 1] == segments[t] { t + 1 } else { n })
        .collect();
    let xp = tape.gather_rows(padded, &prev)?;
    let xn = tape.gather_rows(padded, &next)?;
    let cat = tape.concat_cols(&[xp, x, xn])?;
    let w = tape.param(store, weights.0);
    let b = tape.param(store, weights.1);
    let h = tape.matmul(cat, w)?;
    let h = tape.add_row(h, b)?;
    let h = tape.leaky_relu(h, 0.2);
    tape.add(x, h)
}

/// Bi-directional attention of a context (n×d) against a question (m×d).
/// The similarity of context row `i` and question row `j` is
/// `w_c·c_i + w_q·q_j + (c_i∘w_cq)·q_j`; the output row is
/// `[c; ĉ; c∘ĉ; c∘q̂] · W_out`.
pub fn bi_attention<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    p: &EncoderParams,
    context: Var,
    question: Var,
) -> Result<Var> {
    let w_c = tape.param(store, p.w_c);
    let w_q = tape.param(store, p.w_q);
    let w_cq = tape.param(store, p.w_cq);
    let w_out = tape.param(store, p.w_out);

    let sc = tape.matmul(context, w_c)?;
    let sq = tape.matmul(question, w_q)?;
    let sq = tape.transpose(sq);
    let cw = tape.mul_row(context, w_cq)?;
    let qt = tape.transpose(question);
    let s = tape.matmul(cw, qt)?;
    let s = tape.add_row(s, sq)?;
    let s = tape.add_col(s, sc)?;

    let a = tape.row_softmax(s)?;
    let c_hat = tape.matmul(a, question)?;
    let m = tape.row_max(s)?;
    let m = tape.transpose(m);
    let b = tape.row_softmax(m)?;
    let q_hat = tape.matmul(b, context)?;

    let c_c_hat = tape.mul(context, c_hat)?;
    let c_q_hat = tape.mul_row(context, q_hat)?;
    let g = tape.concat_cols(&[context, c_hat, c_c_hat, c_q_hat])?;
    tape.matmul(g, w_out)
}

/// Context tokens, their sentence ids and question-match flags.
#[derive(Debug, Clone, Copy)]
pub struct ContextInput<'a> {
    pub ids: &'a [usize],
    pub segments: &'a [usize],
    pub in_question: &'a [bool],
}

/// Fused token matrix: question rows followed by context rows.
pub fn encode<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    p: &EncoderParams,
    cfg: &EncoderConfig,
    question_ids: &[usize],
    context: ContextInput<'_>,
) -> Result<Var> {
    let mut q = encode_tokens(tape, store, p, cfg, question_ids)?;
    let mut c = encode_tokens(tape, store, p, cfg, context.ids)?;
    let context_segments = context.segments;
    if let Some(w) = p.exact_match {
        if context.in_question.len() != context.ids.len() {
            return Err(Error::Layout("one match flag per context token".into()));
        }
        let flags: Vec<T> = context
            .in_question
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect();
        let col = tape.leaf(Shape::new(flags.len(), 1), flags, false)?;
        let w = tape.param(store, w);
        let em = tape.matmul(col, w)?;
        c = tape.add(c, em)?;
    }
    if let Some(w) = p.local {
        q = local_context(tape, store, w, q, &vec![0; question_ids.len()])?;
        c = local_context(tape, store, w, c, context_segments)?;
    }
    let fused = if cfg.use_bi_attention {
        bi_attention(tape, store, p, c, q)?
    } else {
        c
    };
    tape.concat_rows(&[q, fused])
}

/// Node embeddings: the mean of each node's token span, in node order.
pub fn pool_nodes<T: Real>(
    tape: &mut Tape<'_, T>,
    tokens: Var,
    graph: &HierarchicalGraph,
) -> Result<Var> {
    let spans: Vec<(usize, usize)> = graph.nodes.iter().map(|n| n.span).collect();
    tape.span_mean(tokens, &spans)
}
