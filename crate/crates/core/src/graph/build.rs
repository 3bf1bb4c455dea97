use super::entities::{extract_entities, question_entities};
use super::select::first_hop;
use super::{compute_edges, EdgeOptions, HierarchicalGraph, Node, NodeLevel};
use crate::corpus::{tokenize_with_offsets, QAExample};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub max_paragraphs: usize,
    pub qs_edges: bool,
    pub ss_all_pairs: bool,
    pub entities: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            max_paragraphs: 4,
            qs_edges: true,
            ss_all_pairs: false,
            entities: true,
        }
    }
}

impl GraphConfig {
    pub fn edge_options(&self) -> EdgeOptions {
        EdgeOptions {
            qs_edges: self.qs_edges,
            ss_all_pairs: self.ss_all_pairs,
        }
    }
}

/// Builds the graph over `selected` paragraphs (indices into
/// `ex.paragraphs`, in the given order). Sentences without tokens are
/// skipped; paragraphs left without sentences are dropped.
pub fn build_graph(
    ex: &QAExample,
    selected: &[usize],
    cfg: &GraphConfig,
) -> Result<HierarchicalGraph> {
    let selected: Vec<usize> = selected
        .iter()
        .copied()
        .filter(|&p| ex.paragraphs[p].sentences.iter().any(|s| !s.tokens.is_empty()))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    if ex.question_tokens.is_empty() {
        return Err(Error::EmptyContext);
    }

    let mut tokens: Vec<String> = ex.question_tokens.clone();
    let nq = tokens.len();
    let mut token_sentence = Vec::new();
    let mut token_offsets = Vec::new();

    let mut paragraphs = Vec::new();
    let mut sentences = Vec::new();
    // (selected position, sentence index, token start) per sentence node
    let mut sent_meta = Vec::new();
    for (k, &p) in selected.iter().enumerate() {
        let para = &ex.paragraphs[p];
        let start = tokens.len();
        for (si, s) in para.sentences.iter().enumerate() {
            if s.tokens.is_empty() {
                continue;
            }
            let ordinal = sentences.len();
            let s0 = tokens.len();
            let offs = tokenize_with_offsets(&s.text);
            let aligned = offs.len() == s.tokens.len();
            for (t, tok) in s.tokens.iter().enumerate() {
                tokens.push(tok.clone());
                token_sentence.push(ordinal);
                token_offsets.push(if aligned {
                    (offs[t].1, offs[t].2)
                } else {
                    (0, s.text.len())
                });
            }
            sentences.push(Node {
                level: NodeLevel::Sentence,
                span: (s0, tokens.len()),
                parent: Some(1 + k),
                label: s.text.clone(),
                source: Some(si),
                first_hop: false,
                in_question: false,
            });
            sent_meta.push((k, si, s0));
        }
        paragraphs.push(Node {
            level: NodeLevel::Paragraph,
            span: (start, tokens.len()),
            parent: None,
            label: para.title.clone(),
            source: Some(p),
            first_hop: first_hop(ex, p),
            in_question: false,
        });
    }
    let n_p = paragraphs.len();
    let n_s = sentences.len();

    let mut entities = Vec::new();
    if cfg.entities {
        let per_sentence = extract_entities(ex, &selected);
        let q_ents = question_entities(ex, &selected);
        for (ordinal, &(k, si, s0)) in sent_meta.iter().enumerate() {
            for e in &per_sentence[k][si] {
                entities.push(Node {
                    level: NodeLevel::Entity,
                    span: (s0 + e.start, s0 + e.end),
                    parent: Some(1 + n_p + ordinal),
                    label: e.text.clone(),
                    source: None,
                    first_hop: false,
                    in_question: q_ents.contains(&e.norm),
                });
            }
        }
    }
    let n_e = entities.len();

    let mut nodes = Vec::with_capacity(1 + n_p + n_s + n_e);
    nodes.push(Node {
        level: NodeLevel::Query,
        span: (0, nq),
        parent: None,
        label: ex.question.clone(),
        source: None,
        first_hop: false,
        in_question: false,
    });
    nodes.extend(paragraphs);
    nodes.extend(sentences);
    nodes.extend(entities);

    // A first-hop sentence hyperlinking to a selected paragraph reached only
    // through that link.
    let mut links = Vec::new();
    for (ordinal, &(k, si, _)) in sent_meta.iter().enumerate() {
        let pnode = 1 + k;
        if !nodes[pnode].first_hop {
            continue;
        }
        let para = &ex.paragraphs[selected[k]];
        for link in para.hyperlinks.iter().filter(|l| l.sentence == si) {
            let target = (1..=n_p).find(|&q| nodes[q].label == link.target);
            if let Some(q) = target {
                let pair = (1 + n_p + ordinal, q);
                if q != pnode && !nodes[q].first_hop && !links.contains(&pair) {
                    links.push(pair);
                }
            }
        }
    }

    let options = cfg.edge_options();
    let edges = compute_edges(&nodes, &links, options);
    let g = HierarchicalGraph {
        n_p,
        n_s,
        n_e,
        nodes,
        edges,
        links,
        tokens,
        n_question_tokens: nq,
        token_sentence,
        token_offsets,
        options,
    };
    g.validate()?;
    Ok(g)
}
