use super::{compute_edges, EdgeOptions, HierarchicalGraph, Node, NodeLevel};
use crate::{Error, Result};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Sizes for a random graph with random token content. Every paragraph
/// receives at least one sentence, so `n_s >= n_p >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGraphSpec {
    pub n_p: usize,
    pub n_s: usize,
    pub n_e: usize,
    pub vocab: usize,
    pub options: EdgeOptions,
}

impl Default for RandomGraphSpec {
    fn default() -> Self {
        RandomGraphSpec {
            n_p: 2,
            n_s: 5,
            n_e: 4,
            vocab: 20,
            options: EdgeOptions::default(),
        }
    }
}

fn node(level: NodeLevel, span: (usize, usize), parent: Option<usize>, label: String) -> Node {
    Node {
        level,
        span,
        parent,
        label,
        source: None,
        first_hop: false,
        in_question: false,
    }
}

pub fn random_graph(spec: &RandomGraphSpec, rng: &mut impl Rng) -> Result<HierarchicalGraph> {
    if spec.n_p == 0 || spec.n_s < spec.n_p || spec.vocab == 0 {
        return Err(Error::Config(format!(
            "random graph needs n_s >= n_p >= 1, got n_p={} n_s={}",
            spec.n_p, spec.n_s
        )));
    }
    if spec.n_e > 0 && spec.n_s == 0 {
        return Err(Error::Config("entities need sentences".into()));
    }
    let word = |rng: &mut dyn rand::RngCore| format!("w{}", rng.random_range(0..spec.vocab));

    let nq = rng.random_range(2..=5);
    let mut tokens: Vec<String> = (0..nq).map(|_| word(rng)).collect();

    // sentence -> paragraph assignment, each paragraph non-empty, grouped
    let mut owner: Vec<usize> = (0..spec.n_p).collect();
    owner.extend((spec.n_p..spec.n_s).map(|_| rng.random_range(0..spec.n_p)));
    owner.sort();

    let mut token_sentence = Vec::new();
    let mut token_offsets = Vec::new();
    let mut sentences = Vec::new();
    let mut para_spans = vec![(usize::MAX, 0); spec.n_p];
    let mut local_idx = vec![0usize; spec.n_p];
    for (k, &p) in owner.iter().enumerate() {
        let len = rng.random_range(2..=5);
        let start = tokens.len();
        let mut text = String::new();
        for _ in 0..len {
            if !text.is_empty() {
                text.push(' ');
            }
            let w = word(rng);
            token_offsets.push((text.len(), text.len() + w.len()));
            text.push_str(&w);
            tokens.push(w);
            token_sentence.push(k);
        }
        let mut n = node(NodeLevel::Sentence, (start, tokens.len()), Some(1 + p), text);
        n.source = Some(local_idx[p]);
        local_idx[p] += 1;
        sentences.push(n);
        para_spans[p].0 = para_spans[p].0.min(start);
        para_spans[p].1 = tokens.len();
    }

    let mut nodes = vec![node(NodeLevel::Query, (0, nq), None, "question".into())];
    let mut first: Vec<bool> = (0..spec.n_p).map(|_| rng.random_bool(0.5)).collect();
    if !first.iter().any(|&f| f) {
        first[0] = true;
    }
    for p in 0..spec.n_p {
        let mut n = node(NodeLevel::Paragraph, para_spans[p], None, format!("P{p}"));
        n.source = Some(p);
        n.first_hop = first[p];
        nodes.push(n);
    }
    nodes.extend(sentences);

    let mut ent_parents: Vec<usize> = (0..spec.n_e).map(|_| rng.random_range(0..spec.n_s)).collect();
    ent_parents.sort();
    for (i, &s) in ent_parents.iter().enumerate() {
        let snode = 1 + spec.n_p + s;
        let (a, b) = nodes[snode].span;
        let st = rng.random_range(a..b);
        let en = rng.random_range(st + 1..=b.min(st + 2));
        let mut n = node(NodeLevel::Entity, (st, en), Some(snode), format!("E{i}"));
        n.in_question = rng.random_bool(0.4);
        nodes.push(n);
    }

    let mut links = Vec::new();
    let targets: Vec<usize> = (0..spec.n_p).filter(|&p| !first[p]).map(|p| 1 + p).collect();
    for s in 0..spec.n_s {
        let snode = 1 + spec.n_p + s;
        let parent = nodes[snode].parent.unwrap();
        if nodes[parent].first_hop && rng.random_bool(0.5) {
            if let Some(&t) = targets.choose(rng) {
                links.push((snode, t));
            }
        }
    }

    let edges = compute_edges(&nodes, &links, spec.options);
    let g = HierarchicalGraph {
        n_p: spec.n_p,
        n_s: spec.n_s,
        n_e: spec.n_e,
        nodes,
        edges,
        links,
        tokens,
        n_question_tokens: nq,
        token_sentence,
        token_offsets,
        options: spec.options,
    };
    g.validate()?;
    Ok(g)
}
