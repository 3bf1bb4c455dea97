//! Propagation-order ablation: one model per configuration, shared seed.

use crate::corpus::QAExample;
use crate::encoder::Vocab;
use crate::gath::{GatMode, LevelOrder};
use crate::model::{Model, ModelConfig};
use crate::score::{metrics_table, MetricsReport};
use crate::tensor::Real;
use crate::train::{evaluate, prepare, train, TrainConfig, TrainReport};
use crate::{Error, Result};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub label: String,
    pub mode: GatMode,
    pub order: Option<LevelOrder>,
    pub qs_edges: bool,
}

impl Variant {
    pub fn gat(layers: usize, qs_edges: bool) -> Self {
        let mode = if layers == 2 { GatMode::Gat2 } else { GatMode::Gat1 };
        let mut label = format!("GAT {layers}-layer");
        if qs_edges {
            label.push_str(" + QS");
        }
        Variant {
            label,
            mode,
            order: None,
            qs_edges,
        }
    }

    pub fn gath(order: LevelOrder, qs_edges: bool) -> Self {
        let groups: Vec<String> = order
            .groups()
            .iter()
            .map(|g| g.iter().map(|l| l.letter().to_ascii_uppercase().to_string()).collect::<Vec<_>>().join("+"))
            .collect();
        let mut label = format!("GATH {}", groups.join("/"));
        if qs_edges {
            label.push_str(" + QS");
        }
        Variant {
            label,
            mode: GatMode::Gath,
            order: Some(order),
            qs_edges,
        }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.gath.mode = self.mode;
        if let Some(o) = &self.order {
            c.gath.level_order = o.clone();
        }
        c.graph.qs_edges = self.qs_edges;
        c
    }
}

/// Rows for `orders` (QS edges off). With `baselines`, the GAT 1-layer and
/// 2-layer rows, GAT with QS edges, and GATH S/E/P with QS edges are added.
pub fn plan(orders: &[LevelOrder], baselines: bool) -> Result<Vec<Variant>> {
    if orders.is_empty() {
        return Err(Error::Config("ablation needs at least one level order".into()));
    }
    let mut rows = Vec::new();
    if baselines {
        rows.push(Variant::gat(1, false));
        rows.push(Variant::gat(2, false));
        rows.push(Variant::gat(1, true));
    }
    rows.extend(orders.iter().map(|o| Variant::gath(o.clone(), false)));
    if baselines {
        rows.push(Variant::gath("s,e,p".parse()?, true));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricsReport,
    pub train: TrainReport,
    pub seconds: f64,
}

/// Trains every variant on `train_set` (best checkpoint by `dev_set` loss)
/// and scores it on `test_set`. All rows share the vocabulary, the model
/// seed and the batch order.
pub fn run<T: Real>(
    train_set: &[QAExample],
    dev_set: &[QAExample],
    test_set: &[QAExample],
    base: &ModelConfig,
    cfg: &TrainConfig,
    variants: &[Variant],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one configuration".into()));
    }
    let vocab = Vocab::build(train_set, base.encoder.vocab_size);
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let t0 = Instant::now();
        log::info!("ablation: training {}", v.label);
        let mut model: Model<T> = Model::new(v.apply(base), vocab.clone())?;
        let tr = prepare(&model, train_set, true)?;
        let dv = prepare(&model, dev_set, false)?;
        let report_train = train(&mut model, &tr, &dv, cfg)?;
        let (_, report) = evaluate(&model, test_set)?;
        let row = AblationRow {
            variant: v.clone(),
            report,
            train: report_train,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn table(rows: &[AblationRow]) -> String {
    let labelled: Vec<(String, &MetricsReport)> = rows
        .iter()
        .map(|r| (r.variant.label.clone(), &r.report))
        .collect();
    metrics_table(&labelled)
}
