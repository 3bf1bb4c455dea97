//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use gath_core::corpus::{tokenize, QAExample};
use gath_core::graph::{Edge, EdgeType, HierarchicalGraph, NodeLevel};

fn strip_disambiguator(title: &str) -> &str {
    if let (Some(i), true) = (title.rfind(" ("), title.ends_with(')')) {
        &title[..i]
    } else {
        title
    }
}

fn spaced_lower(tokens: &[String]) -> String {
    let words: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    format!(" {} ", words.join(" "))
}

/// Brute-force edge enumeration: every node pair is tested against every
/// edge rule, reading paragraph titles, hyperlinks and the question from
/// the raw example. Only entity-question matching is taken from the node
/// flag, since it belongs to entity extraction rather than to the rules.
pub fn edge_oracle(ex: &QAExample, g: &HierarchicalGraph) -> Vec<Edge> {
    let n = g.nodes.len();
    let lvl = |i: usize| g.nodes[i].level;
    let parent = |i: usize| g.nodes[i].parent;
    let question = spaced_lower(&ex.question_tokens);
    let first_hop = |p: usize| {
        let t = tokenize(strip_disambiguator(&g.nodes[p].label));
        !t.is_empty() && question.contains(&spaced_lower(&t))
    };
    let linked = |s: usize, p: usize| {
        let own = parent(s).unwrap();
        if own == p || !first_hop(own) || first_hop(p) {
            return false;
        }
        let raw = &ex.paragraphs[g.nodes[own].source.unwrap()];
        let si = g.nodes[s].source.unwrap();
        raw.hyperlinks
            .iter()
            .any(|h| h.sentence == si && h.target == g.nodes[p].label)
    };
    let opts = g.options;
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            let (a, b) = (lvl(i), lvl(j));
            use NodeLevel::*;
            let rules = [
                (EdgeType::SelfLoop, i == j),
                (EdgeType::QP1, i == 0 && b == Paragraph && first_hop(j)),
                (EdgeType::PP, i != j && a == Paragraph && b == Paragraph),
                (
                    EdgeType::SS,
                    i != j
                        && a == Sentence
                        && b == Sentence
                        && parent(i) == parent(j)
                        && (opts.ss_all_pairs || j == i + 1),
                ),
                (EdgeType::PS, a == Paragraph && b == Sentence && parent(j) == Some(i)),
                (EdgeType::P2S, a == Paragraph && b == Sentence && linked(j, i)),
                (EdgeType::QE, i == 0 && b == Entity && g.nodes[j].in_question),
                (EdgeType::SE, a == Sentence && b == Entity && parent(j) == Some(i)),
                (EdgeType::QS, opts.qs_edges && i == 0 && b == Sentence),
            ];
            for (kind, holds) in rules {
                if holds {
                    out.push(Edge { src: i, dst: j, kind });
                }
            }
        }
    }
    out.sort();
    out
}

pub fn sorted_edges(g: &HierarchicalGraph) -> Vec<Edge> {
    let mut e = g.edges.clone();
    e.sort();
    e
}

pub fn connected(g: &HierarchicalGraph) -> bool {
    let n = g.nodes.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for e in &g.edges {
            let other = if e.src == i {
                e.dst
            } else if e.dst == i {
                e.src
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Straightforward loop implementation of one attention update over the
/// rows `targets`: per head, logits over the neighbour list, softmax,
/// weighted sum of transformed neighbours, LeakyReLU, concatenated heads.
/// `att_dst[h][t]` / `att_src[h][t]` are the two halves of the attention
/// vector of head `h` and edge type `t`, each of length `d`.
pub struct NaiveGat<'a> {
    pub w: &'a [Vec<f64>],
    pub att_dst: &'a [Vec<Vec<f64>>],
    pub att_src: &'a [Vec<Vec<f64>>],
    pub slope: f64,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl NaiveGat<'_> {
    /// Neighbours of `i` with edge types, both directions, self-loops once.
    pub fn neighbours(g: &HierarchicalGraph, i: usize) -> Vec<(usize, EdgeType)> {
        let mut out = Vec::new();
        for e in &g.edges {
            if e.src == i {
                out.push((e.dst, e.kind));
            } else if e.dst == i {
                out.push((e.src, e.kind));
            }
        }
        out
    }

    pub fn alpha(&self, g: &HierarchicalGraph, h: &[Vec<f64>], i: usize, head: usize) -> Vec<(usize, f64)> {
        let nb = Self::neighbours(g, i);
        let logits: Vec<f64> = nb
            .iter()
            .map(|&(j, t)| {
                let ti = t.index();
                leaky(
                    dot(&h[i], &self.att_dst[head][ti]) + dot(&h[j], &self.att_src[head][ti]),
                    self.slope,
                )
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        nb.iter().zip(ex).map(|(&(j, _), e)| (j, e / z)).collect()
    }

    pub fn update(&self, g: &HierarchicalGraph, h: &[Vec<f64>], targets: &[usize], heads: usize) -> Vec<Vec<f64>> {
        let d = h[0].len();
        let dh = d / heads;
        let transformed: Vec<Vec<f64>> = h
            .iter()
            .map(|row| (0..d).map(|c| (0..d).map(|r| row[r] * self.w[r][c]).sum()).collect())
            .collect();
        let mut out = h.to_vec();
        for &i in targets {
            let mut row = vec![0.0; d];
            for head in 0..heads {
                for (j, a) in self.alpha(g, h, i, head) {
                    for c in head * dh..(head + 1) * dh {
                        row[c] += a * transformed[j][c];
                    }
                }
            }
            out[i] = row.into_iter().map(|x| leaky(x, self.slope)).collect();
        }
        out
    }
}

/// Unpacks one parameter set into the nested layout `NaiveGat` reads.
pub struct GatWeights {
    pub w: Vec<Vec<f64>>,
    pub att_dst: Vec<Vec<Vec<f64>>>,
    pub att_src: Vec<Vec<Vec<f64>>>,
}

impl GatWeights {
    pub fn from_store(
        store: &gath_core::params::ParamStore<f64>,
        layer: &gath_core::gath::LayerParams,
        heads: usize,
    ) -> Self {
        let w = store.tensor(layer.w);
        let d = w.shape().rows;
        let rows = |t: &gath_core::tensor::Tensor<f64>| -> Vec<Vec<f64>> {
            let c = t.shape().cols;
            t.values().chunks(c).map(|r| r.to_vec()).collect()
        };
        let split = |t: &gath_core::tensor::Tensor<f64>| -> Vec<Vec<Vec<f64>>> {
            let width = t.shape().cols;
            (0..heads)
                .map(|k| {
                    (0..EdgeType::COUNT)
                        .map(|e| (0..d).map(|r| t.values()[r * width + k * EdgeType::COUNT + e]).collect())
                        .collect()
                })
                .collect()
        };
        GatWeights {
            w: rows(w),
            att_dst: split(store.tensor(layer.att_dst)),
            att_src: split(store.tensor(layer.att_src)),
        }
    }

    pub fn naive(&self, slope: f64) -> NaiveGat<'_> {
        NaiveGat {
            w: &self.w,
            att_dst: &self.att_dst,
            att_src: &self.att_src,
            slope,
        }
    }
}

/// A graph from explicit levels, parents and edges. Self-loops are added.
pub fn small_graph(
    levels: &[NodeLevel],
    parents: &[Option<usize>],
    edges: &[(usize, usize, EdgeType)],
) -> HierarchicalGraph {
    use gath_core::graph::{EdgeOptions, Node};
    let count = |l| levels.iter().filter(|&&x| x == l).count();
    let nodes = levels
        .iter()
        .zip(parents)
        .map(|(&level, &parent)| Node {
            level,
            span: (0, 1),
            parent,
            label: String::new(),
            source: None,
            first_hop: false,
            in_question: false,
        })
        .collect();
    let mut all: Vec<Edge> = edges.iter().map(|&(a, b, k)| Edge::new(a, b, k)).collect();
    all.extend((0..levels.len()).map(|i| Edge::new(i, i, EdgeType::SelfLoop)));
    HierarchicalGraph {
        n_p: count(NodeLevel::Paragraph),
        n_s: count(NodeLevel::Sentence),
        n_e: count(NodeLevel::Entity),
        nodes,
        edges: all,
        links: Vec::new(),
        tokens: vec!["x".into()],
        n_question_tokens: 1,
        token_sentence: Vec::new(),
        token_offsets: Vec::new(),
        options: EdgeOptions::default(),
    }
}

/// Relabels nodes by `perm` (old index to new index), which must keep
/// every node inside its level block.
pub fn permute_graph(g: &HierarchicalGraph, perm: &[usize]) -> HierarchicalGraph {
    let mut out = g.clone();
    for (old, node) in g.nodes.iter().enumerate() {
        let mut n = node.clone();
        n.parent = node.parent.map(|p| perm[p]);
        out.nodes[perm[old]] = n;
    }
    out.edges = g
        .edges
        .iter()
        .map(|e| Edge::new(perm[e.src], perm[e.dst], e.kind))
        .collect();
    out.links = g.links.iter().map(|&(s, p)| (perm[s], perm[p])).collect();
    out
}

/// One hand-scored prediction. Expected values are `(em, precision,
/// recall, f1)` for answer, support and joint.
pub struct ScoreCase {
    pub name: &'static str,
    pub gold_answer: &'static str,
    pub gold_sp: Vec<(&'static str, usize)>,
    pub answer: &'static str,
    pub sp: Vec<(&'static str, usize)>,
    pub ans: [f64; 4],
    pub sup: [f64; 4],
    pub joint: [f64; 4],
}

pub fn gold_example(id: &str, answer: &str, sp: &[(&str, usize)], qtype: gath_core::corpus::QuestionType) -> QAExample {
    use gath_core::corpus::SupportingFact;
    QAExample {
        id: id.into(),
        question: "q".into(),
        question_tokens: vec!["q".into()],
        paragraphs: Vec::new(),
        answer: answer.into(),
        supporting_facts: sp.iter().map(|&(t, i)| SupportingFact(t.into(), i)).collect(),
        qtype,
    }
}

/// Ten cases worked out by hand from token and pair counts.
pub fn score_cases() -> Vec<ScoreCase> {
    let ab = vec![("A", 0), ("B", 1)];
    let one = [1.0; 4];
    let zero = [0.0; 4];
    vec![
        ScoreCase {
            name: "exact",
            gold_answer: "united states",
            gold_sp: ab.clone(),
            answer: "United States",
            sp: ab.clone(),
            ans: one,
            sup: one,
            joint: one,
        },
        ScoreCase {
            // 2 shared tokens of 4 predicted and 2 gold
            name: "longer answer",
            gold_answer: "united states",
            gold_sp: ab.clone(),
            answer: "united states of america",
            sp: ab.clone(),
            ans: [0.0, 0.5, 1.0, 2.0 / 3.0],
            sup: one,
            joint: [0.0, 0.5, 1.0, 2.0 / 3.0],
        },
        ScoreCase {
            name: "articles and punctuation",
            gold_answer: "beatles",
            gold_sp: ab.clone(),
            answer: "The Beatles!",
            sp: ab.clone(),
            ans: one,
            sup: one,
            joint: one,
        },
        ScoreCase {
            name: "yes against no",
            gold_answer: "no",
            gold_sp: ab.clone(),
            answer: "yes",
            sp: ab.clone(),
            ans: zero,
            sup: one,
            joint: zero,
        },
        ScoreCase {
            // one of two gold facts found: P = 1, R = 1/2
            name: "answer right, support incomplete",
            gold_answer: "yes",
            gold_sp: ab.clone(),
            answer: "yes",
            sp: vec![("A", 0)],
            ans: one,
            sup: [0.0, 1.0, 0.5, 2.0 / 3.0],
            joint: [0.0, 1.0, 0.5, 2.0 / 3.0],
        },
        ScoreCase {
            name: "noanswer",
            gold_answer: "paris",
            gold_sp: ab.clone(),
            answer: "noanswer",
            sp: ab.clone(),
            ans: zero,
            sup: one,
            joint: zero,
        },
        ScoreCase {
            // answer: 2 shared of 4 predicted, 3 gold; support 1 of 2 each way
            name: "repeated tokens and half support",
            gold_answer: "new york city",
            gold_sp: ab.clone(),
            answer: "new york new york",
            sp: vec![("A", 0), ("C", 2)],
            ans: [0.0, 0.5, 2.0 / 3.0, 4.0 / 7.0],
            sup: [0.0, 0.5, 0.5, 0.5],
            joint: [0.0, 0.25, 1.0 / 3.0, 2.0 / 7.0],
        },
        ScoreCase {
            name: "empty prediction",
            gold_answer: "x",
            gold_sp: ab.clone(),
            answer: "",
            sp: vec![],
            ans: zero,
            sup: zero,
            joint: zero,
        },
        ScoreCase {
            // 2 of 3 predicted pairs are gold
            name: "irrelevant extra support",
            gold_answer: "skiffle",
            gold_sp: ab.clone(),
            answer: "Skiffle",
            sp: vec![("A", 0), ("B", 1), ("Z", 5)],
            ans: one,
            sup: [0.0, 2.0 / 3.0, 1.0, 0.8],
            joint: [0.0, 2.0 / 3.0, 1.0, 0.8],
        },
        ScoreCase {
            name: "hyphen removed and duplicate pairs",
            gold_answer: "eichenzelllütter",
            gold_sp: ab.clone(),
            answer: "Eichenzell-Lütter",
            sp: vec![("A", 0), ("A", 0), ("B", 1)],
            ans: one,
            sup: one,
            joint: one,
        },
    ]
}

pub fn owned_pairs(p: &[(&str, usize)]) -> Vec<(String, usize)> {
    p.iter().map(|&(t, i)| (t.to_string(), i)).collect()
}

/// Gold set and predictions for the fixture suite, ids `case0..case9`.
pub fn score_fixture() -> (Vec<QAExample>, gath_core::score::Predictions) {
    let mut gold = Vec::new();
    let mut preds = gath_core::score::Predictions::default();
    for (k, c) in score_cases().iter().enumerate() {
        let id = format!("case{k}");
        gold.push(gold_example(&id, c.gold_answer, &c.gold_sp, gath_core::corpus::QuestionType::Bridge));
        preds.answer.insert(id.clone(), c.answer.into());
        preds.sp.insert(id, owned_pairs(&c.sp));
    }
    (gold, preds)
}

pub fn prf_array(p: &gath_core::score::Prf) -> [f64; 4] {
    [p.em, p.precision, p.recall, p.f1]
}
