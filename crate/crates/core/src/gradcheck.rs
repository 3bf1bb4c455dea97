//! Central finite-difference check of the full model gradient.

use crate::encoder::Vocab;
use crate::graph::{random_graph, RandomGraphSpec};
use crate::model::{Instance, Model, ModelConfig};
use crate::params::Gradients;
use crate::tensor::Tape;
use crate::Result;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Entries probed per parameter group; larger groups are sampled,
    /// preferring entries with a nonzero analytic gradient.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-6,
            tolerance: 1e-4,
            max_entries: 256,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    /// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖) over the probed entries.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compares the backward pass of the eval-mode joint loss with central
/// differences, one row per parameter group.
pub fn check_gradients(
    model: &mut Model<f64>,
    inst: &Instance,
    cfg: &GradCheckConfig,
) -> Result<Vec<GroupCheck>> {
    let n_params = model.store.len();
    let analytic = {
        let mut tape = Tape::new();
        let (loss, _) = model.loss(&mut tape, inst)?;
        tape.backward(loss)?;
        Gradients::from_tape(&tape, n_params)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = model.store.ids().collect();
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = model.store.tensor(id).values().len();
        let zeros = vec![0.0; numel];
        let grad = analytic.get(id).unwrap_or(&zeros).to_vec();

        let mut probe: Vec<usize> = (0..numel).collect();
        if numel > cfg.max_entries {
            let (mut live, mut dead): (Vec<usize>, Vec<usize>) =
                probe.into_iter().partition(|&k| grad[k] != 0.0);
            live.shuffle(&mut rng);
            dead.shuffle(&mut rng);
            live.truncate(cfg.max_entries);
            let fill = cfg.max_entries - live.len();
            live.extend(dead.into_iter().take(fill));
            live.sort_unstable();
            probe = live;
        }

        let mut a = Vec::with_capacity(probe.len());
        let mut n = Vec::with_capacity(probe.len());
        for &k in &probe {
            let orig = model.store.tensor(id).values()[k];
            model.store.tensor_mut(id).values_mut()[k] = orig + cfg.epsilon;
            let plus = model.eval_loss(inst)?;
            model.store.tensor_mut(id).values_mut()[k] = orig - cfg.epsilon;
            let minus = model.eval_loss(inst)?;
            model.store.tensor_mut(id).values_mut()[k] = orig;
            a.push(grad[k]);
            n.push((plus - minus) / (2.0 * cfg.epsilon));
        }
        let err = rel_err(&a, &n);
        let max_abs_err = a
            .iter()
            .zip(&n)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        rows.push(GroupCheck {
            name: model.store.name(id).to_string(),
            numel,
            checked: probe.len(),
            rel_err: err,
            max_abs_err,
            passed: err < cfg.tolerance,
        });
    }
    Ok(rows)
}

/// Model and instance on a random graph, both derived from `seed`.
pub fn random_setup(
    config: ModelConfig,
    spec: &RandomGraphSpec,
    seed: u64,
) -> Result<(Model<f64>, Instance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph_spec = *spec;
    graph_spec.options = config.graph.edge_options();
    let graph = random_graph(&graph_spec, &mut rng)?;
    let words: Vec<String> = std::iter::once("<unk>".to_string())
        .chain((0..spec.vocab).map(|k| format!("w{k}")))
        .collect();
    let vocab = Vocab::from(words);
    let model = Model::new(ModelConfig { seed, ..config }, vocab)?;
    let inst = Instance::random(graph, model.vocab.len(), &mut rng);
    Ok((model, inst))
}
