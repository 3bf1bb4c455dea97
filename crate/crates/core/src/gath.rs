//! Multi-head typed-edge graph attention, applied either to all levels at
//! once or level group by level group.

use crate::graph::{Adjacency, EdgeType, HierarchicalGraph, NodeLevel};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Shape, Tape, Var};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatMode {
    Gat1,
    Gat2,
    Gath,
}

impl FromStr for GatMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat1" => Ok(GatMode::Gat1),
            "gat2" => Ok(GatMode::Gat2),
            "gath" => Ok(GatMode::Gath),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected gat1, gat2 or gath)"
            ))),
        }
    }
}

impl fmt::Display for GatMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatMode::Gat1 => "gat1",
            GatMode::Gat2 => "gat2",
            GatMode::Gath => "gath",
        })
    }
}

/// Ordered level groups such as `p,s,e` or `p+s+e` (a single group).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LevelOrder(pub Vec<Vec<NodeLevel>>);

impl LevelOrder {
    pub fn groups(&self) -> &[Vec<NodeLevel>] {
        &self.0
    }

    pub fn paper_orders() -> Vec<LevelOrder> {
        ["p,s,e", "e,s,p", "s,e,p", "s,p,e"]
            .iter()
            .map(|s| s.parse().expect("valid order"))
            .collect()
    }

    pub fn single_group() -> LevelOrder {
        "p+s+e".parse().expect("valid order")
    }
}

impl FromStr for LevelOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let usage = || {
            Error::Config(format!(
                "invalid level order `{s}`: expected groups of q/p/s/e separated by `,` \
                 (use `+` to update levels together), e.g. p,s,e or s,e,p or p+s+e"
            ))
        };
        let mut groups = Vec::new();
        let mut seen = Vec::new();
        for g in s.split([',', '/']) {
            let mut group = Vec::new();
            for l in g.split('+') {
                let lvl: NodeLevel = l.parse().map_err(|_| usage())?;
                if seen.contains(&lvl) {
                    return Err(usage());
                }
                seen.push(lvl);
                group.push(lvl);
            }
            groups.push(group);
        }
        for need in [NodeLevel::Paragraph, NodeLevel::Sentence, NodeLevel::Entity] {
            if !seen.contains(&need) {
                return Err(usage());
            }
        }
        Ok(LevelOrder(groups))
    }
}

impl fmt::Display for LevelOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self
            .0
            .iter()
            .map(|g| g.iter().map(|l| l.letter().to_string()).collect::<Vec<_>>().join("+"))
            .collect();
        f.write_str(&s.join(","))
    }
}

impl TryFrom<String> for LevelOrder {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LevelOrder> for String {
    fn from(o: LevelOrder) -> String {
        o.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GathConfig {
    pub heads: usize,
    pub mode: GatMode,
    pub level_order: LevelOrder,
    pub include_query_level: bool,
    pub dropout: f64,
    pub slope: f64,
    /// Separate parameters for every stage instead of one shared set.
    pub per_stage_params: bool,
}

impl Default for GathConfig {
    fn default() -> Self {
        GathConfig {
            heads: 4,
            mode: GatMode::Gath,
            level_order: "s,e,p".parse().expect("valid order"),
            include_query_level: false,
            dropout: 0.3,
            slope: 0.2,
            per_stage_params: false,
        }
    }
}

impl GathConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide width {d}",
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("attention dropout must lie in [0, 1)".into()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config("leaky slope must lie in (0, 1)".into()));
        }
        let lists_query = self.level_order.0.iter().flatten().any(|&l| l == NodeLevel::Query);
        if lists_query && !self.include_query_level {
            return Err(Error::Config(
                "level order lists q but the query level is excluded".into(),
            ));
        }
        Ok(())
    }

    /// Level groups updated by each stage, in order. In GAT modes every
    /// included level is updated together. An included query level that the
    /// order does not mention runs as its own first stage.
    pub fn stages(&self) -> Vec<Vec<NodeLevel>> {
        let mut all = vec![NodeLevel::Paragraph, NodeLevel::Sentence, NodeLevel::Entity];
        if self.include_query_level {
            all.insert(0, NodeLevel::Query);
        }
        match self.mode {
            GatMode::Gat1 => vec![all],
            GatMode::Gat2 => vec![all.clone(), all],
            GatMode::Gath => {
                let mut st = self.level_order.0.clone();
                let listed = st.iter().flatten().any(|&l| l == NodeLevel::Query);
                if self.include_query_level && !listed {
                    st.insert(0, vec![NodeLevel::Query]);
                }
                st
            }
        }
    }

    pub fn num_param_sets(&self) -> usize {
        match self.mode {
            GatMode::Gat1 => 1,
            GatMode::Gat2 => 2,
            GatMode::Gath if self.per_stage_params => self.stages().len(),
            GatMode::Gath => 1,
        }
    }
}

/// One set of attention parameters: `w` holds the head transforms as
/// column blocks (`d × d`, head `k` owns columns `k·d/K..(k+1)·d/K`); column
/// `k·9 + e` of `att_dst`/`att_src` is the target/neighbour half of the
/// attention vector for head `k` and edge type `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub w: ParamId,
    pub att_dst: ParamId,
    pub att_src: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GathParams {
    pub layers: Vec<LayerParams>,
}

impl GathParams {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        d: usize,
        cfg: &GathConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let width = cfg.heads * EdgeType::COUNT;
        let layers = (0..cfg.num_param_sets())
            .map(|l| LayerParams {
                w: store.glorot(&format!("gath.{l}.w"), Shape::new(d, d), rng),
                att_dst: store.glorot(&format!("gath.{l}.att_dst"), Shape::new(d, width), rng),
                att_src: store.glorot(&format!("gath.{l}.att_src"), Shape::new(d, width), rng),
            })
            .collect();
        GathParams { layers }
    }

    fn for_stage(&self, s: usize) -> &LayerParams {
        &self.layers[s.min(self.layers.len() - 1)]
    }
}

/// Attention edges for a set of target nodes, grouped by target.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    pub targets: Vec<usize>,
    /// Position of each target in `targets`, one per edge entry.
    pub local: Vec<usize>,
    pub target: Vec<usize>,
    pub neighbor: Vec<usize>,
    pub kind: Vec<EdgeType>,
    /// Segment bounds per target within one head.
    pub offsets: Vec<usize>,
}

impl Neighborhoods {
    pub fn new(adj: &Adjacency, targets: &[usize]) -> Result<Self> {
        let mut n = Neighborhoods {
            targets: targets.to_vec(),
            local: Vec::new(),
            target: Vec::new(),
            neighbor: Vec::new(),
            kind: Vec::new(),
            offsets: vec![0],
        };
        for (li, &i) in targets.iter().enumerate() {
            if adj.degree(i) == 0 {
                return Err(Error::EmptyNeighborhood);
            }
            for (j, t) in adj.of(i) {
                n.local.push(li);
                n.target.push(i);
                n.neighbor.push(j);
                n.kind.push(t);
            }
            n.offsets.push(n.neighbor.len());
        }
        Ok(n)
    }

    pub fn nnz(&self) -> usize {
        self.neighbor.len()
    }
}

/// Result of one update stage.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub levels: Vec<NodeLevel>,
    pub neighborhoods: Neighborhoods,
    /// Attention weights, `heads × nnz`, head-major, before dropout.
    pub alpha: Option<Var>,
    pub output: Var,
}

impl StageRecord {
    pub fn alpha_row<'a, T: Real>(&self, tape: &'a Tape<'_, T>, head: usize, local: usize) -> &'a [T] {
        let a = self.alpha.expect("stage with targets");
        let nnz = self.neighborhoods.nnz();
        let o = &self.neighborhoods.offsets;
        &tape.value(a)[head * nnz + o[local]..head * nnz + o[local + 1]]
    }
}

/// Attention coefficients `heads × nnz` (head-major) for the given edges,
/// before dropout.
pub fn attention_coeffs<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    layer: &LayerParams,
    heads: usize,
    slope: f64,
    h: Var,
    nb: &Neighborhoods,
) -> Result<Var> {
    let width = heads * EdgeType::COUNT;
    let a_dst = tape.param(store, layer.att_dst);
    let a_src = tape.param(store, layer.att_src);
    let t_dst = tape.matmul(h, a_dst)?;
    let t_src = tape.matmul(h, a_src)?;
    let nnz = nb.nnz();
    let mut idx_dst = Vec::with_capacity(heads * nnz);
    let mut idx_src = Vec::with_capacity(heads * nnz);
    for k in 0..heads {
        for e in 0..nnz {
            let col = k * EdgeType::COUNT + nb.kind[e].index();
            idx_dst.push(nb.target[e] * width + col);
            idx_src.push(nb.neighbor[e] * width + col);
        }
    }
    let l_dst = tape.gather(t_dst, &idx_dst)?;
    let l_src = tape.gather(t_src, &idx_src)?;
    let logits = tape.add(l_dst, l_src)?;
    let logits = tape.leaky_relu(logits, slope);
    let mut offsets = Vec::with_capacity(heads * nb.targets.len() + 1);
    offsets.push(0);
    for k in 0..heads {
        offsets.extend(nb.offsets[1..].iter().map(|&o| k * nnz + o));
    }
    tape.segment_softmax(logits, &offsets)
}

/// Replaces the rows of `targets` by the attention update computed from
/// `h`; all other rows are carried over unchanged.
#[allow(clippy::too_many_arguments)]
pub fn update_level<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    layer: &LayerParams,
    cfg: &GathConfig,
    adj: &Adjacency,
    h: Var,
    targets: &[usize],
    levels: Vec<NodeLevel>,
) -> Result<StageRecord> {
    let nb = Neighborhoods::new(adj, targets)?;
    if targets.is_empty() {
        return Ok(StageRecord {
            levels,
            neighborhoods: nb,
            alpha: None,
            output: h,
        });
    }
    let alpha = attention_coeffs(tape, store, layer, cfg.heads, cfg.slope, h, &nb)?;
    let dropped = tape.dropout(alpha, cfg.dropout);
    let w = tape.param(store, layer.w);
    let hw = tape.matmul(h, w)?;
    let agg = tape.head_spmm(dropped, hw, &nb.local, &nb.neighbor, targets.len(), cfg.heads)?;
    let act = tape.leaky_relu(agg, cfg.slope);
    let output = tape.scatter_rows(h, targets, act)?;
    Ok(StageRecord {
        levels,
        neighborhoods: nb,
        alpha: Some(alpha),
        output,
    })
}

fn nodes_of(graph: &HierarchicalGraph, levels: &[NodeLevel]) -> Vec<usize> {
    let mut v: Vec<usize> = levels.iter().flat_map(|&l| graph.level_range(l)).collect();
    v.sort_unstable();
    v
}

/// Runs every stage of `cfg` over `h` (the `g×d` node matrix). Returns the
/// final node matrix and one record per stage.
pub fn gath_forward<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    params: &GathParams,
    cfg: &GathConfig,
    graph: &HierarchicalGraph,
    h: Var,
) -> Result<(Var, Vec<StageRecord>)> {
    let d = tape.shape(h).cols;
    cfg.validate(d)?;
    if tape.shape(h).rows != graph.num_nodes() {
        return Err(Error::Layout(format!(
            "node matrix has {} rows, graph has {} nodes",
            tape.shape(h).rows,
            graph.num_nodes()
        )));
    }
    let adj = graph.adjacency();
    let mut cur = h;
    let mut records = Vec::new();
    for (s, levels) in cfg.stages().into_iter().enumerate() {
        let targets = nodes_of(graph, &levels);
        let rec = update_level(tape, store, params.for_stage(s), cfg, &adj, cur, &targets, levels)?;
        cur = rec.output;
        records.push(rec);
    }
    Ok((cur, records))
}

/// Simultaneous update of all included levels with `layers` parameter sets
/// applied one after another.
pub fn gat_forward<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    store: &'p ParamStore<T>,
    params: &GathParams,
    cfg: &GathConfig,
    graph: &HierarchicalGraph,
    h: Var,
    layers: usize,
) -> Result<(Var, Vec<StageRecord>)> {
    let mode = match layers {
        1 => GatMode::Gat1,
        2 => GatMode::Gat2,
        n => return Err(Error::Config(format!("GAT supports 1 or 2 layers, got {n}"))),
    };
    if params.layers.len() < layers {
        return Err(Error::Config(format!(
            "{layers}-layer GAT needs {layers} parameter sets, have {}",
            params.layers.len()
        )));
    }
    let cfg = GathConfig {
        mode,
        ..cfg.clone()
    };
    gath_forward(tape, store, params, &cfg, graph, h)
}
