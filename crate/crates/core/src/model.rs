//! The full network: encoder, node pooling, graph attention and heads.

use crate::corpus::QAExample;
use crate::encoder::{encode, pool_nodes, ContextInput, EncoderConfig, EncoderParams, Vocab};
use crate::gath::{gath_forward, GathConfig, GathParams, StageRecord};
use crate::graph::{build_graph, select_paragraphs, GraphConfig, HierarchicalGraph};
use crate::heads::{
    decode_answer, decode_supports, forward_heads, joint_loss, make_labels, HeadParams, Labels,
    LossWeights, MultiTaskOutput, OutputValues, SubLosses,
};
use crate::params::ParamStore;
use crate::tensor::{Real, Tape, Var};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gath: GathConfig,
    pub graph: GraphConfig,
    pub loss: LossWeights,
    pub max_span: usize,
    pub support_threshold: f64,
    /// Initialisation seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            gath: GathConfig::default(),
            graph: GraphConfig::default(),
            loss: LossWeights::default(),
            max_span: 30,
            support_threshold: 0.5,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.d == 0 || e.max_positions == 0 || e.vocab_size == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&e.dropout) {
            return Err(Error::Config("encoder dropout must lie in [0, 1)".into()));
        }
        if self.graph.max_paragraphs == 0 {
            return Err(Error::Config("max_paragraphs must be positive".into()));
        }
        if self.max_span == 0 {
            return Err(Error::Config("max_span must be positive".into()));
        }
        self.gath.validate(e.d)
    }
}

/// A prepared example: its graph, token ids and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub graph: HierarchicalGraph,
    pub question_ids: Vec<usize>,
    pub context_ids: Vec<usize>,
    /// Context tokens whose lowercase form occurs in the question.
    pub context_in_question: Vec<bool>,
    pub labels: Labels,
}

fn question_matches(graph: &HierarchicalGraph) -> Vec<bool> {
    let nq = graph.n_question_tokens;
    let q: std::collections::HashSet<String> =
        graph.tokens[..nq].iter().map(|t| t.to_lowercase()).collect();
    graph.tokens[nq..]
        .iter()
        .map(|t| q.contains(&t.to_lowercase()))
        .collect()
}

impl Instance {
    /// Random token ids and targets on a given graph, for tests and
    /// gradient checks.
    pub fn random(graph: HierarchicalGraph, vocab: usize, rng: &mut impl Rng) -> Self {
        let nq = graph.n_question_tokens;
        let nc = graph.n_context_tokens();
        let mut bits = |n: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
            if n > 0 {
                v[0] = 1.0;
            }
            v
        };
        let para = bits(graph.n_p);
        let sent = bits(graph.n_s);
        let s = rng.random_range(0..nc);
        let e = rng.random_range(s..nc);
        let entity = (graph.n_e > 0).then(|| rng.random_range(0..graph.n_e));
        Instance {
            id: "random".into(),
            question_ids: (0..nq).map(|_| rng.random_range(0..vocab)).collect(),
            context_ids: (0..nc).map(|_| rng.random_range(0..vocab)).collect(),
            context_in_question: question_matches(&graph),
            labels: Labels {
                para,
                sent,
                entity,
                span: Some((s, e)),
                answer_type: 0,
            },
            graph,
        }
    }
}

pub struct Forward {
    pub tokens: Var,
    pub nodes_in: Var,
    pub nodes_out: Var,
    pub stages: Vec<StageRecord>,
    pub output: MultiTaskOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: String,
    pub supports: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore<T>,
    pub encoder: EncoderParams,
    pub gath: GathParams,
    pub heads: HeadParams,
}

impl<T: Real> Model<T> {
    /// Parameters are created in a fixed order from a generator seeded by
    /// `config.seed`. The embedding table has one row per vocabulary entry.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let enc_cfg = EncoderConfig {
            vocab_size: vocab.len().max(1),
            ..config.encoder
        };
        let encoder = EncoderParams::init(&mut store, &enc_cfg, &mut rng);
        let gath = GathParams::init(&mut store, config.encoder.d, &config.gath, &mut rng);
        let heads = HeadParams::init(&mut store, config.encoder.d, &mut rng);
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            gath,
            heads,
        })
    }

    /// Builds the graph and targets for `ex`. Training instances always
    /// contain the gold paragraphs.
    pub fn instance(&self, ex: &QAExample, training: bool) -> Result<Instance> {
        let sel = select_paragraphs(ex, self.config.graph.max_paragraphs, training);
        let graph = build_graph(ex, &sel, &self.config.graph)?;
        Ok(self.instance_from_graph(ex, graph))
    }

    pub fn instance_from_graph(&self, ex: &QAExample, graph: HierarchicalGraph) -> Instance {
        let nq = graph.n_question_tokens;
        Instance {
            id: ex.id.clone(),
            question_ids: self.vocab.ids(&graph.tokens[..nq]),
            context_ids: self.vocab.ids(&graph.tokens[nq..]),
            context_in_question: question_matches(&graph),
            labels: make_labels(ex, &graph),
            graph,
        }
    }

    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, T>, inst: &Instance) -> Result<Forward> {
        let cfg = &self.config;
        let tokens = encode(
            tape,
            &self.store,
            &self.encoder,
            &cfg.encoder,
            &inst.question_ids,
            ContextInput {
                ids: &inst.context_ids,
                segments: &inst.graph.token_sentence,
                in_question: &inst.context_in_question,
            },
        )?;
        let nodes_in = pool_nodes(tape, tokens, &inst.graph)?;
        let (nodes_out, stages) =
            gath_forward(tape, &self.store, &self.gath, &cfg.gath, &inst.graph, nodes_in)?;
        let output = forward_heads(
            tape,
            &self.store,
            &self.heads,
            nodes_out,
            tokens,
            &inst.graph,
            cfg.gath.slope,
            cfg.gath.dropout,
        )?;
        Ok(Forward {
            tokens,
            nodes_in,
            nodes_out,
            stages,
            output,
        })
    }

    pub fn loss<'p>(&'p self, tape: &mut Tape<'p, T>, inst: &Instance) -> Result<(Var, SubLosses)> {
        let f = self.forward(tape, inst)?;
        joint_loss(tape, &f.output, &inst.labels, &self.config.loss)
    }

    /// Evaluation-mode loss value.
    pub fn eval_loss(&self, inst: &Instance) -> Result<f64> {
        let mut tape = Tape::new();
        let (l, _) = self.loss(&mut tape, inst)?;
        Ok(tape.scalar(l).as_f64())
    }

    pub fn outputs(&self, inst: &Instance) -> Result<OutputValues> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inst)?;
        Ok(OutputValues::from_tape(&tape, &f.output))
    }

    pub fn predict(&self, inst: &Instance) -> Result<Prediction> {
        let out = self.outputs(inst)?;
        Ok(Prediction {
            answer: decode_answer(&out, &inst.graph, self.config.max_span),
            supports: decode_supports(&out, &inst.graph, self.config.support_threshold),
        })
    }
}
