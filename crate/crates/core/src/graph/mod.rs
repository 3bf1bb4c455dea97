//! Hierarchical question/paragraph/sentence/entity graph.

mod build;
mod entities;
mod random;
mod select;

pub use build::{build_graph, GraphConfig};
pub use entities::{extract_entities, question_entities, EntitySpan};
pub use random::{random_graph, RandomGraphSpec};
pub use select::{first_hop, select_paragraphs};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLevel {
    Query,
    Paragraph,
    Sentence,
    Entity,
}

impl NodeLevel {
    pub const ALL: [NodeLevel; 4] = [
        NodeLevel::Query,
        NodeLevel::Paragraph,
        NodeLevel::Sentence,
        NodeLevel::Entity,
    ];

    pub fn letter(self) -> char {
        match self {
            NodeLevel::Query => 'q',
            NodeLevel::Paragraph => 'p',
            NodeLevel::Sentence => 's',
            NodeLevel::Entity => 'e',
        }
    }
}

impl FromStr for NodeLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "q" | "query" => Ok(NodeLevel::Query),
            "p" | "paragraph" => Ok(NodeLevel::Paragraph),
            "s" | "sentence" => Ok(NodeLevel::Sentence),
            "e" | "entity" => Ok(NodeLevel::Entity),
            other => Err(Error::Config(format!(
                "unknown level `{other}` (expected one of q, p, s, e)"
            ))),
        }
    }
}

impl fmt::Display for NodeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter().to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    /// Question to a first-hop paragraph.
    QP1,
    PP,
    SS,
    /// Paragraph to one of its own sentences.
    PS,
    /// Second-hop paragraph to the first-hop sentence that links to it.
    P2S,
    QE,
    SE,
    QS,
    #[serde(rename = "SELF")]
    SelfLoop,
}

impl EdgeType {
    pub const COUNT: usize = 9;
    pub const ALL: [EdgeType; 9] = [
        EdgeType::QP1,
        EdgeType::PP,
        EdgeType::SS,
        EdgeType::PS,
        EdgeType::P2S,
        EdgeType::QE,
        EdgeType::SE,
        EdgeType::QS,
        EdgeType::SelfLoop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::QP1 => "QP1",
            EdgeType::PP => "PP",
            EdgeType::SS => "SS",
            EdgeType::PS => "PS",
            EdgeType::P2S => "P2S",
            EdgeType::QE => "QE",
            EdgeType::SE => "SE",
            EdgeType::QS => "QS",
            EdgeType::SelfLoop => "SELF",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An undirected typed edge, stored with `src <= dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeType,
}

impl Edge {
    pub fn new(a: usize, b: usize, kind: EdgeType) -> Self {
        Edge {
            src: a.min(b),
            dst: a.max(b),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub level: NodeLevel,
    /// Half-open token range into `HierarchicalGraph::tokens`.
    pub span: (usize, usize),
    /// Paragraph of a sentence, sentence of an entity.
    pub parent: Option<usize>,
    /// Question text, paragraph title, sentence text or entity surface form.
    pub label: String,
    /// Index of the source paragraph in the example (paragraph nodes) or of
    /// the sentence within its paragraph (sentence nodes).
    pub source: Option<usize>,
    /// Paragraph title mentioned in the question.
    #[serde(default)]
    pub first_hop: bool,
    /// Entity whose normalized text matches a question entity.
    #[serde(default)]
    pub in_question: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeOptions {
    pub qs_edges: bool,
    pub ss_all_pairs: bool,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        EdgeOptions {
            qs_edges: true,
            ss_all_pairs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalGraph {
    pub n_p: usize,
    pub n_s: usize,
    pub n_e: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Hyperlink pairs `(sentence node, paragraph node)` eligible for P2S.
    pub links: Vec<(usize, usize)>,
    /// Question tokens followed by the tokens of every selected sentence.
    pub tokens: Vec<String>,
    pub n_question_tokens: usize,
    /// For each context token: the ordinal of its sentence node (0-based
    /// among sentences) and its byte range in that sentence's text.
    pub token_sentence: Vec<usize>,
    pub token_offsets: Vec<(usize, usize)>,
    pub options: EdgeOptions,
}

/// Per-node neighbor lists in compressed form. Neighbors of node `i` are
/// `neighbors[offsets[i]..offsets[i+1]]`, sorted by (neighbor, type).
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub types: Vec<EdgeType>,
}

impl Adjacency {
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn of(&self, i: usize) -> impl Iterator<Item = (usize, EdgeType)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.neighbors[r.clone()]
            .iter()
            .copied()
            .zip(self.types[r].iter().copied())
    }
}

impl HierarchicalGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_context_tokens(&self) -> usize {
        self.tokens.len() - self.n_question_tokens
    }

    pub fn level_range(&self, level: NodeLevel) -> std::ops::Range<usize> {
        let (p, s) = (1 + self.n_p, 1 + self.n_p + self.n_s);
        match level {
            NodeLevel::Query => 0..1,
            NodeLevel::Paragraph => 1..p,
            NodeLevel::Sentence => p..s,
            NodeLevel::Entity => s..s + self.n_e,
        }
    }

    pub fn count(&self, level: NodeLevel) -> usize {
        self.level_range(level).len()
    }

    pub fn sentence_node(&self, ordinal: usize) -> usize {
        1 + self.n_p + ordinal
    }

    pub fn edge_count(&self, kind: EdgeType) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Each stored edge contributes both directions; a self-loop once.
    pub fn adjacency(&self) -> Adjacency {
        let g = self.nodes.len();
        let mut lists: Vec<Vec<(usize, EdgeType)>> = vec![Vec::new(); g];
        for e in &self.edges {
            lists[e.src].push((e.dst, e.kind));
            if e.src != e.dst {
                lists[e.dst].push((e.src, e.kind));
            }
        }
        let mut adj = Adjacency {
            offsets: Vec::with_capacity(g + 1),
            neighbors: Vec::new(),
            types: Vec::new(),
        };
        adj.offsets.push(0);
        for mut l in lists {
            l.sort();
            for (j, t) in l {
                adj.neighbors.push(j);
                adj.types.push(t);
            }
            adj.offsets.push(adj.neighbors.len());
        }
        adj
    }

    /// Sentence nodes as `(title, sentence index)` pairs, in node order.
    pub fn sentence_refs(&self) -> Vec<(String, usize)> {
        self.level_range(NodeLevel::Sentence)
            .map(|i| {
                let n = &self.nodes[i];
                let p = n.parent.expect("sentence has a paragraph");
                (self.nodes[p].label.clone(), n.source.unwrap_or(0))
            })
            .collect()
    }

    /// Context token range of sentence ordinal `k`, relative to the context.
    pub fn sentence_context_span(&self, k: usize) -> (usize, usize) {
        let (a, b) = self.nodes[self.sentence_node(k)].span;
        (a - self.n_question_tokens, b - self.n_question_tokens)
    }

    /// Surface text for context tokens `start..end`. Within one sentence the
    /// original characters are returned; across sentences pieces are joined
    /// with a space.
    pub fn detokenize(&self, start: usize, end: usize) -> String {
        let end = end.min(self.n_context_tokens());
        if start >= end {
            return String::new();
        }
        let mut pieces = Vec::new();
        let mut t = start;
        while t < end {
            let k = self.token_sentence[t];
            let mut u = t;
            while u + 1 < end && self.token_sentence[u + 1] == k {
                u += 1;
            }
            let text = &self.nodes[self.sentence_node(k)].label;
            pieces.push(&text[self.token_offsets[t].0..self.token_offsets[u].1]);
            t = u + 1;
        }
        pieces.join(" ")
    }

    /// Checks layout and edge invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Layout(m));
        let g = self.nodes.len();
        if g != 1 + self.n_p + self.n_s + self.n_e {
            return bad(format!("{} nodes for counts {}/{}/{}", g, self.n_p, self.n_s, self.n_e));
        }
        for lvl in NodeLevel::ALL {
            for i in self.level_range(lvl) {
                if self.nodes[i].level != lvl {
                    return bad(format!("node {i} has level {} expected {lvl}", self.nodes[i].level));
                }
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.span.0 >= n.span.1 || n.span.1 > self.tokens.len() {
                return bad(format!("node {i} span {:?} out of range", n.span));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.src > e.dst || e.dst >= g {
                return bad(format!("malformed edge {e:?}"));
            }
            if !seen.insert(*e) {
                return bad(format!("duplicate edge {e:?}"));
            }
        }
        let adj = self.adjacency();
        if let Some(i) = (0..g).find(|&i| adj.degree(i) == 0) {
            return Err(Error::IsolatedNode(i));
        }
        Ok(())
    }
}

/// Applies the edge rules to a node list. Returns edges sorted and unique.
pub(crate) fn compute_edges(
    nodes: &[Node],
    links: &[(usize, usize)],
    opts: EdgeOptions,
) -> Vec<Edge> {
    let mut out = BTreeSet::new();
    let of = |lvl: NodeLevel| -> Vec<usize> {
        (0..nodes.len()).filter(|&i| nodes[i].level == lvl).collect()
    };
    let (ps, ss, es) = (
        of(NodeLevel::Paragraph),
        of(NodeLevel::Sentence),
        of(NodeLevel::Entity),
    );
    for &p in &ps {
        if nodes[p].first_hop {
            out.insert(Edge::new(0, p, EdgeType::QP1));
        }
    }
    for (a, &p) in ps.iter().enumerate() {
        for &q in &ps[a + 1..] {
            out.insert(Edge::new(p, q, EdgeType::PP));
        }
    }
    for &p in &ps {
        let own: Vec<usize> = ss.iter().copied().filter(|&s| nodes[s].parent == Some(p)).collect();
        for (a, &s) in own.iter().enumerate() {
            out.insert(Edge::new(p, s, EdgeType::PS));
            if opts.ss_all_pairs {
                for &t in &own[a + 1..] {
                    out.insert(Edge::new(s, t, EdgeType::SS));
                }
            } else if let Some(&t) = own.get(a + 1) {
                out.insert(Edge::new(s, t, EdgeType::SS));
            }
        }
    }
    for &(s, p) in links {
        out.insert(Edge::new(p, s, EdgeType::P2S));
    }
    for &e in &es {
        if nodes[e].in_question {
            out.insert(Edge::new(0, e, EdgeType::QE));
        }
        if let Some(s) = nodes[e].parent {
            out.insert(Edge::new(s, e, EdgeType::SE));
        }
    }
    if opts.qs_edges {
        for &s in &ss {
            out.insert(Edge::new(0, s, EdgeType::QS));
        }
    }
    for i in 0..nodes.len() {
        out.insert(Edge::new(i, i, EdgeType::SelfLoop));
    }
    out.into_iter().collect()
}
