//! Mini-batch training, evaluation and prediction files.

use crate::corpus::QAExample;
use crate::model::{Instance, Model, Prediction};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Gradients, ParamStore};
use crate::score::{score, MetricsReport, Predictions};
use crate::tensor::{Real, Tape};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 5,
            seed: 7,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    /// Set on the last step of each epoch.
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    pub best_epoch: usize,
    pub best_dev_loss: Option<f64>,
}

impl TrainReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,train_loss,dev_loss")?;
        for p in &self.curve {
            match p.dev_loss {
                Some(d) => writeln!(f, "{},{},{}", p.step, p.train_loss, d)?,
                None => writeln!(f, "{},{},", p.step, p.train_loss)?,
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// SplitMix64 finaliser, used to derive independent per-example streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ epoch as u64) ^ index as u64))
}

/// Builds instances in parallel, keeping input order.
pub fn prepare<T: Real>(
    model: &Model<T>,
    examples: &[QAExample],
    training: bool,
) -> Result<Vec<Instance>> {
    examples
        .par_iter()
        .map(|ex| model.instance(ex, training))
        .collect()
}

/// Mean evaluation-mode loss.
pub fn mean_loss<T: Real>(model: &Model<T>, insts: &[Instance]) -> Result<f64> {
    if insts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses: Vec<f64> = insts
        .par_iter()
        .map(|i| model.eval_loss(i))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains in place. After the last epoch the parameters of the epoch with
/// the lowest dev loss are restored (the last epoch when `dev` is empty).
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Instance],
    dev_set: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, train_set, dev_set, cfg, |_, _, _| {})
}

/// [`train`] with a callback after every epoch receiving the epoch, its
/// loss point and the current model.
pub fn train_with<T: Real>(
    model: &mut Model<T>,
    train_set: &[Instance],
    dev_set: &[Instance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossPoint, &Model<T>),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_params = model.store.len();
    let mut adam = Adam::new(cfg.adam, &model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(mix(cfg.seed));
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        for batch in order.chunks(cfg.batch_size) {
            let m: &Model<T> = model;
            let results: Vec<(f64, Gradients<T>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::training(stream(cfg.seed, epoch, i));
                    let (loss, _) = m.loss(&mut tape, &train_set[i])?;
                    let value = tape.scalar(loss).as_f64();
                    tape.backward(loss)?;
                    Ok((value, Gradients::from_tape(&tape, n_params)))
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::empty(n_params);
            let mut total = 0.0;
            for (l, g) in &results {
                total += l;
                grads.merge(g);
            }
            let loss = total / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.store, &grads);
            curve.push(LossPoint {
                step,
                epoch,
                train_loss: loss,
                dev_loss: None,
            });
            step += 1;
        }
        if !model.store.all_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                loss: f64::NAN,
            });
        }
        if !dev_set.is_empty() {
            let dev = mean_loss(model, dev_set)?;
            log::info!("epoch {epoch}: train {:.4} dev {dev:.4}", curve.last().unwrap().train_loss);
            curve.last_mut().expect("epoch has steps").dev_loss = Some(dev);
            if best.as_ref().is_none_or(|b| dev < b.0) {
                best = Some((dev, epoch, model.store.clone()));
            }
        } else {
            log::info!("epoch {epoch}: train {:.4}", curve.last().unwrap().train_loss);
        }
        on_epoch(epoch, curve.last().expect("epoch has steps"), model);
    }
    let (best_epoch, best_dev_loss) = match best {
        Some((dev, e, store)) => {
            model.store = store;
            (e, Some(dev))
        }
        None => (cfg.epochs - 1, None),
    };
    Ok(TrainReport {
        curve,
        best_epoch,
        best_dev_loss,
    })
}

pub fn predict_all<T: Real>(model: &Model<T>, insts: &[Instance]) -> Result<Predictions> {
    let preds: Vec<Prediction> = insts
        .par_iter()
        .map(|i| model.predict(i))
        .collect::<Result<_>>()?;
    let mut out = Predictions::default();
    for (inst, p) in insts.iter().zip(preds) {
        out.answer.insert(inst.id.clone(), p.answer);
        out.sp.insert(inst.id.clone(), p.supports);
    }
    Ok(out)
}

/// Predicts on unassisted (evaluation-mode) graphs and scores.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    examples: &[QAExample],
) -> Result<(Predictions, MetricsReport)> {
    let insts = prepare(model, examples, false)?;
    let preds = predict_all(model, &insts)?;
    let report = score(&preds, examples)?;
    Ok((preds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::skiffle;
    use crate::encoder::Vocab;
    use crate::model::ModelConfig;

    fn tiny() -> (Model<f64>, Vec<Instance>) {
        tiny_with(ModelConfig::default())
    }

    fn tiny_with(config: ModelConfig) -> (Model<f64>, Vec<Instance>) {
        let ex = skiffle();
        let vocab = Vocab::build(std::slice::from_ref(&ex), 100);
        let model = Model::new(config, vocab).unwrap();
        let inst = prepare(&model, &[ex], true).unwrap();
        (model, inst)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut model, inst) = tiny();
        let before = model.store.clone();
        let cfg = TrainConfig {
            epochs: 2,
            adam: AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        train(&mut model, &inst, &[], &cfg).unwrap();
        for (id, p) in before.iter() {
            assert_eq!(p.tensor.values(), model.store.tensor(id).values());
        }
    }

    #[test]
    fn single_example_overfits() {
        let mut config = ModelConfig::default();
        config.encoder.dropout = 0.0;
        config.gath.dropout = 0.0;
        let (mut model, inst) = tiny_with(config);
        let start = mean_loss(&model, &inst).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let rep = train(&mut model, &inst, &[], &cfg).unwrap();
        assert_eq!(rep.curve.len(), 200);
        let first = rep.curve[0].train_loss;
        let last = rep.curve.last().unwrap().train_loss;
        assert!(last <= 0.1 * first, "{first} -> {last}");
        assert!(mean_loss(&model, &inst).unwrap() < 0.1 * start);
    }

    #[test]
    fn same_seed_same_curve() {
        let run = || {
            let (mut model, inst) = tiny();
            let cfg = TrainConfig {
                epochs: 5,
                ..Default::default()
            };
            train(&mut model, &inst, &inst, &cfg).unwrap().curve
        };
        assert_eq!(run(), run());
    }
}
