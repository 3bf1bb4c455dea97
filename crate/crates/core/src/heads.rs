//! Multi-task output heads, supervision targets, the joint loss and
//! answer/support decoding.

use crate::corpus::{normalize_answer, normalize_text, QAExample};
use crate::graph::{HierarchicalGraph, NodeLevel};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Shape, Tape, Var};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ANSWER_SPAN: usize = 0;
pub const ANSWER_YES: usize = 1;
pub const ANSWER_NO: usize = 2;

/// Two-layer perceptron `in → hidden → out` with LeakyReLU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            w1: store.glorot(&format!("{name}.w1"), Shape::new(input, hidden), rng),
            b1: store.zeros(&format!("{name}.b1"), Shape::row(hidden)),
            w2: store.glorot(&format!("{name}.w2"), Shape::new(hidden, out), rng),
            b2: store.zeros(&format!("{name}.b2"), Shape::row(out)),
        }
    }

    pub fn forward<'p, T: Real>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        x: Var,
        slope: f64,
        dropout: f64,
    ) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.leaky_relu(h, slope);
        let h = tape.dropout(h, dropout);
        let o = tape.matmul(h, w2)?;
        tape.add_row(o, b2)
    }
}

/// Head parameters. Span heads read `[token; query row; row of the token's
/// sentence]`; the answer-type head reads `[query row; mean sentence row;
/// mean paragraph row]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub para: Mlp,
    pub sent: Mlp,
    pub entity: Mlp,
    pub start: Mlp,
    pub end: Mlp,
    pub answer_type: Mlp,
}

impl HeadParams {
    pub fn init<T: Real>(store: &mut ParamStore<T>, d: usize, rng: &mut impl Rng) -> Self {
        HeadParams {
            para: Mlp::init(store, "head.para", d, d, 1, rng),
            sent: Mlp::init(store, "head.sent", d, d, 1, rng),
            entity: Mlp::init(store, "head.entity", d, d, 1, rng),
            start: Mlp::init(store, "head.start", 3 * d, d, 1, rng),
            end: Mlp::init(store, "head.end", 3 * d, d, 1, rng),
            answer_type: Mlp::init(store, "head.type", 3 * d, d, 3, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiTaskOutput {
    pub para: Var,
    pub sent: Var,
    pub entity: Option<Var>,
    pub start: Var,
    pub end: Var,
    pub answer_type: Var,
}

/// `nodes` is the updated `g×d` node matrix, `tokens` the fused token
/// matrix (question rows then context rows).
#[allow(clippy::too_many_arguments)]
pub fn forward_heads<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    p: &HeadParams,
    nodes: Var,
    tokens: Var,
    graph: &HierarchicalGraph,
    slope: f64,
    dropout: f64,
) -> Result<MultiTaskOutput> {
    let g = graph.num_nodes();
    let nq = graph.n_question_tokens;
    let nc = graph.n_context_tokens();
    if tape.shape(nodes).rows != g || tape.shape(tokens).rows != nq + nc || nc == 0 {
        return Err(Error::Layout(format!(
            "heads got {} node rows and {} token rows for a graph with {} nodes and {} tokens",
            tape.shape(nodes).rows,
            tape.shape(tokens).rows,
            g,
            nq + nc
        )));
    }
    let rows = |lvl: NodeLevel| -> Vec<usize> { graph.level_range(lvl).collect() };

    let pr = tape.gather_rows(nodes, &rows(NodeLevel::Paragraph))?;
    let para = p.para.forward(tape, store, pr, slope, dropout)?;
    let sr = tape.gather_rows(nodes, &rows(NodeLevel::Sentence))?;
    let sent = p.sent.forward(tape, store, sr, slope, dropout)?;
    let entity = if graph.n_e > 0 {
        let er = tape.gather_rows(nodes, &rows(NodeLevel::Entity))?;
        Some(p.entity.forward(tape, store, er, slope, dropout)?)
    } else {
        None
    };

    let ctx = tape.slice_rows(tokens, nq, nq + nc)?;
    let q = tape.gather_rows(nodes, &vec![0; nc])?;
    let sidx: Vec<usize> = graph
        .token_sentence
        .iter()
        .map(|&k| graph.sentence_node(k))
        .collect();
    let srow = tape.gather_rows(nodes, &sidx)?;
    let span_in = tape.concat_cols(&[ctx, q, srow])?;
    let start = p.start.forward(tape, store, span_in, slope, dropout)?;
    let end = p.end.forward(tape, store, span_in, slope, dropout)?;

    let ps = graph.level_range(NodeLevel::Paragraph);
    let ss = graph.level_range(NodeLevel::Sentence);
    let pooled = tape.span_mean(nodes, &[(0, 1), (ss.start, ss.end), (ps.start, ps.end)])?;
    let parts: Vec<Var> = (0..3)
        .map(|r| tape.slice_rows(pooled, r, r + 1))
        .collect::<Result<_>>()?;
    let type_in = tape.concat_cols(&parts)?;
    let answer_type = p.answer_type.forward(tape, store, type_in, slope, dropout)?;

    Ok(MultiTaskOutput {
        para,
        sent,
        entity,
        start,
        end,
        answer_type,
    })
}

/// Supervision targets aligned with a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub para: Vec<f64>,
    pub sent: Vec<f64>,
    pub entity: Option<usize>,
    /// Inclusive context-token span of the answer.
    pub span: Option<(usize, usize)>,
    pub answer_type: usize,
}

/// Locates the answer among the context tokens by normalised token
/// sequence. Matches inside supporting sentences win over earlier ones
/// elsewhere.
fn find_answer_span(
    graph: &HierarchicalGraph,
    answer: &[String],
    sent_labels: &[f64],
) -> Option<(usize, usize)> {
    if answer.is_empty() {
        return None;
    }
    let nq = graph.n_question_tokens;
    let mut words: Vec<(usize, String)> = Vec::new();
    for t in 0..graph.n_context_tokens() {
        for w in normalize_answer(&graph.tokens[nq + t]) {
            words.push((t, w));
        }
    }
    let mut first = None;
    for i in 0..words.len() {
        if i + answer.len() > words.len() {
            break;
        }
        if words[i..i + answer.len()].iter().map(|(_, w)| w).eq(answer.iter()) {
            let span = (words[i].0, words[i + answer.len() - 1].0);
            if sent_labels[graph.token_sentence[span.0]] > 0.5 {
                return Some(span);
            }
            first.get_or_insert(span);
        }
    }
    first
}

pub fn make_labels(ex: &QAExample, graph: &HierarchicalGraph) -> Labels {
    let para = graph
        .level_range(NodeLevel::Paragraph)
        .map(|i| {
            let src = graph.nodes[i].source.unwrap_or(usize::MAX);
            f64::from(u8::from(ex.is_gold_paragraph(src)))
        })
        .collect();
    let sent: Vec<f64> = graph
        .sentence_refs()
        .iter()
        .map(|(t, s)| f64::from(u8::from(ex.is_support(t, *s))))
        .collect();
    let answer_type = match ex.yes_no() {
        Some(true) => ANSWER_YES,
        Some(false) => ANSWER_NO,
        None => ANSWER_SPAN,
    };
    let (span, entity) = if answer_type == ANSWER_SPAN {
        let span = find_answer_span(graph, &ex.normalized_answer(), &sent);
        let norm = normalize_text(&ex.answer);
        let ents: Vec<usize> = graph
            .level_range(NodeLevel::Entity)
            .filter(|&i| normalize_text(&graph.nodes[i].label) == norm)
            .collect();
        let in_support = ents.iter().copied().find(|&i| {
            let s = graph.nodes[i].parent.expect("entity has a sentence");
            sent[s - 1 - graph.n_p] > 0.5
        });
        let base = graph.level_range(NodeLevel::Entity).start;
        (span, in_support.or(ents.first().copied()).map(|i| i - base))
    } else {
        (None, None)
    };
    Labels {
        para,
        sent,
        entity,
        span,
        answer_type,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub para: f64,
    pub sent: f64,
    pub entity: f64,
    pub answer_type: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            para: 1.0,
            sent: 2.0,
            entity: 1.0,
            answer_type: 1.0,
        }
    }
}

/// Individual loss terms; masked terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubLosses {
    pub start: f64,
    pub end: f64,
    pub para: f64,
    pub sent: f64,
    pub entity: f64,
    pub answer_type: f64,
}

impl SubLosses {
    pub fn combine(&self, w: &LossWeights) -> f64 {
        self.start
            + self.end
            + w.para * self.para
            + w.sent * self.sent
            + w.entity * self.entity
            + w.answer_type * self.answer_type
    }
}

pub fn joint_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    out: &MultiTaskOutput,
    labels: &Labels,
    w: &LossWeights,
) -> Result<(Var, SubLosses)> {
    let mut parts = SubLosses::default();
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let nc = tape.shape(out.start).numel();

    if let Some((s, e)) = labels.span {
        if s > e || e >= nc {
            return Err(Error::SpanOutOfContext {
                start: s,
                end: e,
                len: nc,
            });
        }
        let ls = tape.cross_entropy(out.start, s)?;
        let le = tape.cross_entropy(out.end, e)?;
        parts.start = tape.scalar(ls).as_f64();
        parts.end = tape.scalar(le).as_f64();
        terms.push((ls, 1.0));
        terms.push((le, 1.0));
    }
    let lp = tape.bce_with_logits(out.para, &labels.para)?;
    parts.para = tape.scalar(lp).as_f64();
    terms.push((lp, w.para));
    let lsn = tape.bce_with_logits(out.sent, &labels.sent)?;
    parts.sent = tape.scalar(lsn).as_f64();
    terms.push((lsn, w.sent));
    if let (Some(ent), Some(target)) = (out.entity, labels.entity) {
        let l = tape.cross_entropy(ent, target)?;
        parts.entity = tape.scalar(l).as_f64();
        terms.push((l, w.entity));
    }
    let lt = tape.cross_entropy(out.answer_type, labels.answer_type)?;
    parts.answer_type = tape.scalar(lt).as_f64();
    terms.push((lt, w.answer_type));

    let mut total: Option<Var> = None;
    for (v, c) in terms {
        let v = if c == 1.0 { v } else { tape.scale(v, c) };
        total = Some(match total {
            None => v,
            Some(t) => tape.add(t, v)?,
        });
    }
    Ok((total.expect("at least the type term"), parts))
}

/// Plain copies of the head outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputValues {
    pub para: Vec<f64>,
    pub sent: Vec<f64>,
    pub entity: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub answer_type: Vec<f64>,
}

impl OutputValues {
    pub fn from_tape<T: Real>(tape: &Tape<'_, T>, out: &MultiTaskOutput) -> Self {
        let v = |x: Var| tape.value(x).iter().map(|t| t.as_f64()).collect::<Vec<f64>>();
        OutputValues {
            para: v(out.para),
            sent: v(out.sent),
            entity: out.entity.map(v).unwrap_or_default(),
            start: v(out.start),
            end: v(out.end),
            answer_type: v(out.answer_type),
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Best inclusive `(start, end)` with `start <= end < start + max_span`.
pub fn best_span(start: &[f64], end: &[f64], max_span: usize) -> (usize, usize) {
    let mut best = (argmax(start), argmax(start));
    let mut score = f64::NEG_INFINITY;
    for s in 0..start.len() {
        for e in s..end.len().min(s + max_span.max(1)) {
            let v = start[s] + end[e];
            if v > score {
                score = v;
                best = (s, e);
            }
        }
    }
    best
}

pub fn decode_answer(out: &OutputValues, graph: &HierarchicalGraph, max_span: usize) -> String {
    match argmax(&out.answer_type) {
        ANSWER_YES => "yes".into(),
        ANSWER_NO => "no".into(),
        _ => {
            let (s, e) = best_span(&out.start, &out.end, max_span);
            graph.detokenize(s, e + 1)
        }
    }
}

/// Sentences with probability above `threshold`, or the two most probable
/// when fewer qualify. Returned in node order.
pub fn decode_supports(
    out: &OutputValues,
    graph: &HierarchicalGraph,
    threshold: f64,
) -> Vec<(String, usize)> {
    let probs: Vec<f64> = out.sent.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
    let mut chosen: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > threshold).collect();
    if chosen.len() < 2 {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        chosen = order.into_iter().take(2).collect();
        chosen.sort_unstable();
    }
    let refs = graph.sentence_refs();
    chosen.into_iter().map(|i| refs[i].clone()).collect()
}
