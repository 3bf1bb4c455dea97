mod common;

use common::{connected, edge_oracle, sorted_edges};
use gath_core::corpus::fixtures::skiffle;
use gath_core::corpus::{generate_synthetic, QAExample, SynthConfig};
use gath_core::graph::{
    build_graph, random_graph, select_paragraphs, Edge, EdgeOptions, EdgeType, GraphConfig,
    HierarchicalGraph, NodeLevel, RandomGraphSpec,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn corpus(n: usize) -> Vec<QAExample> {
    generate_synthetic(&SynthConfig {
        num_examples: n,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn configs() -> Vec<GraphConfig> {
    let mut out = Vec::new();
    for qs_edges in [true, false] {
        for ss_all_pairs in [false, true] {
            for entities in [true, false] {
                out.push(GraphConfig {
                    max_paragraphs: 4,
                    qs_edges,
                    ss_all_pairs,
                    entities,
                });
            }
        }
    }
    out
}

fn fig1() -> (QAExample, HierarchicalGraph) {
    let ex = skiffle();
    let sel = select_paragraphs(&ex, 2, false);
    let g = build_graph(&ex, &sel, &GraphConfig::default()).unwrap();
    (ex, g)
}

fn kinds(g: &HierarchicalGraph) -> BTreeSet<EdgeType> {
    g.edges.iter().map(|e| e.kind).collect()
}

#[test]
fn fig1_selection_and_layout() {
    let (_, g) = fig1();
    assert_eq!(g.nodes[1].label, "Die Rhöner Säuwäntzt");
    assert_eq!(g.nodes[2].label, "Skiffle");
    assert_eq!((g.n_p, g.n_s), (2, 3));
    assert!(g.nodes[1].first_hop && !g.nodes[2].first_hop);
    assert_eq!(g.nodes[3].parent, Some(1));
    assert_eq!(g.nodes[4].parent, Some(2));
    assert_eq!(g.nodes[5].parent, Some(2));
}

#[test]
fn fig1_hand_listed_edges() {
    let (_, g) = fig1();
    let has = |a, b, k| g.edges.contains(&Edge::new(a, b, k));
    assert!(has(0, 1, EdgeType::QP1));
    assert!(!has(0, 2, EdgeType::QP1));
    assert!(has(1, 2, EdgeType::PP));
    assert!(has(1, 3, EdgeType::PS));
    assert!(has(2, 4, EdgeType::PS));
    assert!(has(2, 5, EdgeType::PS));
    assert!(has(4, 5, EdgeType::SS));
    assert!(has(2, 3, EdgeType::P2S));
    for s in 3..6 {
        assert!(has(0, s, EdgeType::QS));
    }
    let qe = g.edges.iter().filter(|e| e.kind == EdgeType::QE).count();
    assert!(qe >= 1, "the band name is both a question and a context entity");
    for i in 0..g.num_nodes() {
        assert!(has(i, i, EdgeType::SelfLoop));
    }
}

#[test]
fn fig1_matches_oracle() {
    let (ex, g) = fig1();
    assert_eq!(sorted_edges(&g), edge_oracle(&ex, &g));
}

#[test]
fn synthetic_graphs_match_oracle() {
    let data = corpus(1000);
    let mut seen = BTreeSet::new();
    for cfg in configs() {
        for ex in &data {
            for force in [false, true] {
                let sel = select_paragraphs(ex, cfg.max_paragraphs, force);
                let g = build_graph(ex, &sel, &cfg).unwrap();
                assert_eq!(sorted_edges(&g), edge_oracle(ex, &g), "{} {cfg:?}", ex.id);
                seen.extend(kinds(&g));
            }
        }
    }
    assert_eq!(seen.len(), 9, "every edge type occurs somewhere: {seen:?}");
}

#[test]
fn no_duplicate_edges_and_canonical_orientation() {
    for ex in &corpus(200) {
        let g = build_graph(ex, &select_paragraphs(ex, 4, false), &GraphConfig::default()).unwrap();
        let set: BTreeSet<Edge> = g.edges.iter().copied().collect();
        assert_eq!(set.len(), g.edges.len());
        assert!(g.edges.iter().all(|e| e.src <= e.dst && e.dst < g.num_nodes()));
        g.validate().unwrap();
    }
}

#[test]
fn qs_edges_connect_every_graph_and_count_sentences() {
    for ex in &corpus(1000) {
        let g = build_graph(ex, &select_paragraphs(ex, 4, false), &GraphConfig::default()).unwrap();
        assert!(connected(&g), "{}", ex.id);
        let qs = g.edges.iter().filter(|e| e.kind == EdgeType::QS).count();
        assert_eq!(qs, g.n_s);
    }
}

#[test]
fn disabling_qs_leaves_only_the_other_types() {
    let base: BTreeSet<EdgeType> = [
        EdgeType::QP1,
        EdgeType::PP,
        EdgeType::SS,
        EdgeType::PS,
        EdgeType::P2S,
        EdgeType::QE,
        EdgeType::SE,
        EdgeType::SelfLoop,
    ]
    .into();
    let para_sent: BTreeSet<EdgeType> = [
        EdgeType::QP1,
        EdgeType::PP,
        EdgeType::SS,
        EdgeType::PS,
        EdgeType::P2S,
        EdgeType::SelfLoop,
    ]
    .into();
    for ex in &corpus(300) {
        let sel = select_paragraphs(ex, 4, false);
        let off = GraphConfig {
            qs_edges: false,
            ..GraphConfig::default()
        };
        let g = build_graph(ex, &sel, &off).unwrap();
        assert!(kinds(&g).is_subset(&base));
        let bare = GraphConfig {
            entities: false,
            ..off
        };
        let g = build_graph(ex, &sel, &bare).unwrap();
        assert!(kinds(&g).is_subset(&para_sent));
    }
}

#[test]
fn qs_toggle_differs_by_exactly_the_qs_edges() {
    for ex in &corpus(300) {
        let sel = select_paragraphs(ex, 4, false);
        let on = build_graph(ex, &sel, &GraphConfig::default()).unwrap();
        let off = build_graph(
            ex,
            &sel,
            &GraphConfig {
                qs_edges: false,
                ..GraphConfig::default()
            },
        )
        .unwrap();
        let a: BTreeSet<Edge> = on.edges.iter().copied().collect();
        let b: BTreeSet<Edge> = off.edges.iter().copied().collect();
        assert!(b.is_subset(&a));
        let diff: Vec<&Edge> = a.difference(&b).collect();
        assert_eq!(diff.len(), on.n_s);
        assert!(diff
            .iter()
            .all(|e| e.kind == EdgeType::QS && e.src == 0 && on.nodes[e.dst].level == NodeLevel::Sentence));
    }
}

#[test]
fn node_layout_is_query_paragraphs_sentences_entities() {
    for ex in &corpus(200) {
        let g = build_graph(ex, &select_paragraphs(ex, 4, false), &GraphConfig::default()).unwrap();
        for level in [NodeLevel::Query, NodeLevel::Paragraph, NodeLevel::Sentence, NodeLevel::Entity] {
            for i in g.level_range(level) {
                assert_eq!(g.nodes[i].level, level);
            }
        }
        assert_eq!(g.num_nodes(), 1 + g.n_p + g.n_s + g.n_e);
        for s in g.level_range(NodeLevel::Sentence) {
            let p = g.nodes[s].parent.unwrap();
            assert!(g.level_range(NodeLevel::Paragraph).contains(&p));
            let (a, b) = g.nodes[s].span;
            let (pa, pb) = g.nodes[p].span;
            assert!(pa <= a && b <= pb);
        }
        for e in g.level_range(NodeLevel::Entity) {
            let s = g.nodes[e].parent.unwrap();
            let (a, b) = g.nodes[e].span;
            let (sa, sb) = g.nodes[s].span;
            assert!(sa <= a && a < b && b <= sb);
        }
    }
}

#[test]
fn construction_is_deterministic() {
    let data = corpus(50);
    for ex in &data {
        let sel = select_paragraphs(ex, 4, true);
        let a = build_graph(ex, &sel, &GraphConfig::default()).unwrap();
        let b = build_graph(ex, &sel, &GraphConfig::default()).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(data, corpus(50));
}

#[test]
fn selection_puts_title_matches_first_and_respects_the_cap() {
    for ex in &corpus(500) {
        let sel = select_paragraphs(ex, 4, false);
        assert!(!sel.is_empty() && sel.len() <= 4);
        let set: BTreeSet<usize> = sel.iter().copied().collect();
        assert_eq!(set.len(), sel.len());
        let g = build_graph(ex, &sel, &GraphConfig::default()).unwrap();
        let flags: Vec<bool> = g.level_range(NodeLevel::Paragraph).map(|p| g.nodes[p].first_hop).collect();
        let first_false = flags.iter().position(|f| !f).unwrap_or(flags.len());
        assert!(flags[first_false..].iter().all(|f| !f), "{}: {flags:?}", ex.id);

        let forced = select_paragraphs(ex, 4, true);
        for gold in ex.gold_paragraphs() {
            assert!(forced.contains(&gold), "{}", ex.id);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_with_qs_are_connected(
        n_p in 1usize..4,
        extra in 0usize..5,
        n_e in 0usize..6,
        seed in any::<u64>(),
    ) {
        let spec = RandomGraphSpec { n_p, n_s: n_p + extra, n_e, vocab: 20, options: EdgeOptions::default() };
        let g = random_graph(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(connected(&g));
        prop_assert_eq!(g.edges.iter().filter(|e| e.kind == EdgeType::QS).count(), g.n_s);
        prop_assert!(g.validate().is_ok());
    }
}
