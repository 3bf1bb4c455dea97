use super::{Real, Shape, Tensor};
use crate::params::{ParamId, ParamStore};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::borrow::Cow;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulRow(Var, Var),
    LeakyRelu(Var, T),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterRows { base: Var, rows: Vec<usize>, src: Var },
    SpanMean(Var, Vec<(usize, usize)>),
    Gather(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    MaskedSoftmax(Var, Vec<bool>),
    RowMax(Var, Vec<usize>),
    HeadSpmm {
        alpha: Var,
        dense: Var,
        rows: Vec<usize>,
        cols: Vec<usize>,
        heads: usize,
    },
    Dropout(Var, Vec<T>),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Bce { logits: Var, targets: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::AddCol(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Transpose(a)
            | Op::GatherRows(a, _)
            | Op::SpanMean(a, _)
            | Op::Gather(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::MaskedSoftmax(a, _)
            | Op::RowMax(a, _)
            | Op::Dropout(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::ScatterRows { base, src, .. } => vec![*base, *src],
            Op::HeadSpmm { alpha, dense, .. } => vec![*alpha, *dense],
            Op::CrossEntropy { logits, .. } | Op::Bce { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'p, T: Clone> {
    value: Cow<'p, [T]>,
    shape: Shape,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of a forward computation.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied, so many
/// tapes (one per example) can read one store concurrently. Gradients of
/// leaves accumulate across [`Tape::backward`] calls.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
    rng: Option<ChaCha8Rng>,
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape in evaluation mode: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            rng: None,
        }
    }

    /// A tape in training mode; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Tape {
            rng: Some(rng),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape, n.value.to_vec()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound parameter that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grad(v).map(|g| (id, g)))
    }

    fn push(&mut self, value: Vec<T>, shape: Shape, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), shape.numel());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Shape, values: Vec<T>, requires_grad: bool) -> Result<Var> {
        if shape.numel() != values.len() {
            return Err(Error::Shape {
                op: "leaf",
                lhs: shape,
                rhs: Shape::row(values.len()),
            });
        }
        self.nodes.push(Node {
            value: Cow::Owned(values),
            shape,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t.values().to_vec()),
            shape: t.shape(),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter by reference. Binding the same id twice returns the
    /// same variable, so its gradient is collected in one place.
    pub fn param(&mut self, store: &'p ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let t = store.tensor(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(t.values()),
            shape: t.shape(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((id, v));
        v
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = matmul_raw(self.value(a), self.value(b), sa.rows, sa.cols, sb.cols);
        Ok(self.push(out, Shape::new(sa.rows, sb.cols), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let out = transpose_raw(self.value(a), s.rows, s.cols);
        self.push(out, Shape::new(s.cols, s.rows), Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, s, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, s, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, s, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::real(c);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let s = self.shape(a);
        self.push(out, s, Op::Scale(a, c))
    }

    /// `x (m×n) + b (1×n)`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.rows != 1 || sb.cols != sx.cols {
            return Err(Error::Shape {
                op: "add_row",
                lhs: sx,
                rhs: sb,
            });
        }
        let bv = self.value(b);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % sx.cols])
            .collect();
        Ok(self.push(out, sx, Op::AddRow(x, b)))
    }

    /// `x (m×n) + c (m×1)`, broadcasting `c` over columns.
    pub fn add_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (sx, sc) = (self.shape(x), self.shape(c));
        if sc.cols != 1 || sc.rows != sx.rows {
            return Err(Error::Shape {
                op: "add_col",
                lhs: sx,
                rhs: sc,
            });
        }
        let cv = self.value(c);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + cv[i / sx.cols.max(1)])
            .collect();
        Ok(self.push(out, sx, Op::AddCol(x, c)))
    }

    /// `x (m×n) ∘ r (1×n)`, broadcasting `r` over rows.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(r));
        if sr.rows != 1 || sr.cols != sx.cols {
            return Err(Error::Shape {
                op: "mul_row",
                lhs: sx,
                rhs: sr,
            });
        }
        let rv = self.value(r);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * rv[i % sx.cols])
            .collect();
        Ok(self.push(out, sx, Op::MulRow(x, r)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        debug_assert!(slope > 0.0 && slope < 1.0, "leaky slope must be in (0,1)");
        let s = T::real(slope);
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v >= T::zero() { v } else { v * s })
            .collect();
        let shape = self.shape(x);
        self.push(out, shape, Op::LeakyRelu(x, s))
    }

    // ---- structural -----------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&v| self.shape(v).rows);
        for &p in parts {
            if self.shape(p).rows != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&v| self.shape(v).cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).cols;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(out, Shape::new(rows, cols), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&v| self.shape(v).cols);
        for &p in parts {
            if self.shape(p).cols != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(p),
                });
            }
        }
        let rows: usize = parts.iter().map(|&v| self.shape(v).rows).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(out, Shape::new(rows, cols), Op::ConcatRows(parts.to_vec())))
    }

    /// Row `r` of the output is row `idx[r]` of `x`. Rows may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        let mut out = Vec::with_capacity(idx.len() * s.cols);
        for &i in idx {
            if i >= s.rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: s.rows,
                });
            }
            out.extend_from_slice(&self.value(x)[i * s.cols..(i + 1) * s.cols]);
        }
        Ok(self.push(
            out,
            Shape::new(idx.len(), s.cols),
            Op::GatherRows(x, idx.to_vec()),
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(x, &idx)
    }

    /// Copy of `base` with row `rows[r]` replaced by row `r` of `src`.
    /// Rows not listed are copied bit-for-bit.
    pub fn scatter_rows(&mut self, base: Var, rows: &[usize], src: Var) -> Result<Var> {
        let (sb, ss) = (self.shape(base), self.shape(src));
        if ss.rows != rows.len() || ss.cols != sb.cols {
            return Err(Error::Shape {
                op: "scatter_rows",
                lhs: sb,
                rhs: ss,
            });
        }
        let mut seen = vec![false; sb.rows];
        for &r in rows {
            if r >= sb.rows || std::mem::replace(&mut seen[r], true) {
                return Err(Error::Index {
                    what: "scatter_rows",
                    index: r,
                    len: sb.rows,
                });
            }
        }
        let c = sb.cols;
        let mut out = self.value(base).to_vec();
        let sv = self.value(src);
        for (k, &r) in rows.iter().enumerate() {
            out[r * c..(r + 1) * c].copy_from_slice(&sv[k * c..(k + 1) * c]);
        }
        Ok(self.push(
            out,
            sb,
            Op::ScatterRows {
                base,
                rows: rows.to_vec(),
                src,
            },
        ))
    }

    /// Row `r` of the output is the mean of rows `spans[r].0..spans[r].1`.
    pub fn span_mean(&mut self, x: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let s = self.shape(x);
        let c = s.cols;
        let mut out = vec![T::zero(); spans.len() * c];
        let xv = self.value(x);
        for (r, &(a, b)) in spans.iter().enumerate() {
            if a >= b {
                return Err(Error::EmptySpan(r));
            }
            if b > s.rows {
                return Err(Error::Index {
                    what: "span_mean",
                    index: b,
                    len: s.rows,
                });
            }
            let inv = T::one() / T::real((b - a) as f64);
            let dst = &mut out[r * c..(r + 1) * c];
            for t in a..b {
                for (o, &v) in dst.iter_mut().zip(&xv[t * c..(t + 1) * c]) {
                    *o += v;
                }
            }
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(
            out,
            Shape::new(spans.len(), c),
            Op::SpanMean(x, spans.to_vec()),
        ))
    }

    /// Flat element gather into a `1×idx.len()` row.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            match xv.get(i) {
                Some(&v) => out.push(v),
                None => {
                    return Err(Error::Index {
                        what: "gather",
                        index: i,
                        len: xv.len(),
                    })
                }
            }
        }
        Ok(self.push(out, Shape::row(idx.len()), Op::Gather(x, idx.to_vec())))
    }

    // ---- normalization --------------------------------------------------

    /// Softmax within each contiguous segment `offsets[k]..offsets[k+1]` of
    /// the flattened values.
    pub fn segment_softmax(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if offsets.first() != Some(&0) || offsets.last() != Some(&xv.len()) {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: self.shape(x),
                rhs: Shape::row(offsets.last().copied().unwrap_or(0)),
            });
        }
        let mut out = vec![T::zero(); xv.len()];
        for w in offsets.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a >= b {
                return Err(Error::EmptyNeighborhood);
            }
            softmax_into(&xv[a..b], &mut out[a..b]);
        }
        let s = self.shape(x);
        Ok(self.push(out, s, Op::SegmentSoftmax(x, offsets.to_vec())))
    }

    /// Softmax across each row of a matrix.
    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let offsets: Vec<usize> = (0..=s.rows).map(|r| r * s.cols).collect();
        self.segment_softmax(x, &offsets)
    }

    /// Softmax over the positions where `mask` is true; masked-out positions
    /// are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::Shape {
                op: "masked_softmax",
                lhs: self.shape(x),
                rhs: Shape::row(mask.len()),
            });
        }
        let live: Vec<T> = xv
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        if live.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        let mut probs = vec![T::zero(); live.len()];
        softmax_into(&live, &mut probs);
        let mut it = probs.into_iter();
        let out = mask
            .iter()
            .map(|&m| if m { it.next().unwrap() } else { T::zero() })
            .collect();
        let s = self.shape(x);
        Ok(self.push(out, s, Op::MaskedSoftmax(x, mask.to_vec())))
    }

    /// Maximum of each row, as an `m×1` column.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.cols == 0 {
            return Err(Error::Shape {
                op: "row_max",
                lhs: s,
                rhs: Shape::new(s.rows, 1),
            });
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(s.rows);
        let mut arg = Vec::with_capacity(s.rows);
        for r in 0..s.rows {
            let row = &xv[r * s.cols..(r + 1) * s.cols];
            let (mut bi, mut bv) = (0, row[0]);
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > bv {
                    bi = i;
                    bv = v;
                }
            }
            out.push(bv);
            arg.push(bi);
        }
        Ok(self.push(out, Shape::new(s.rows, 1), Op::RowMax(x, arg)))
    }

    /// Multi-head sparse aggregation. `alpha` holds `heads × nnz` weights
    /// (head-major); entry `e` of head `h` adds
    /// `alpha[h·nnz+e] · dense[cols[e], block h]` into `out[rows[e], block h]`,
    /// where block `h` is the `h`-th group of `d/heads` columns.
    pub fn head_spmm(
        &mut self,
        alpha: Var,
        dense: Var,
        rows: &[usize],
        cols: &[usize],
        n_rows: usize,
        heads: usize,
    ) -> Result<Var> {
        let sd = self.shape(dense);
        let nnz = rows.len();
        if cols.len() != nnz
            || heads == 0
            || sd.cols % heads != 0
            || self.shape(alpha).numel() != heads * nnz
        {
            return Err(Error::Shape {
                op: "head_spmm",
                lhs: self.shape(alpha),
                rhs: sd,
            });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::Index {
                what: "head_spmm row",
                index: r,
                len: n_rows,
            });
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= sd.rows) {
            return Err(Error::Index {
                what: "head_spmm col",
                index: c,
                len: sd.rows,
            });
        }
        let d = sd.cols;
        let dh = d / heads;
        let (av, dv) = (self.value(alpha), self.value(dense));
        let mut out = vec![T::zero(); n_rows * d];
        for h in 0..heads {
            for e in 0..nnz {
                let w = av[h * nnz + e];
                let src = &dv[cols[e] * d + h * dh..cols[e] * d + (h + 1) * dh];
                let dst = &mut out[rows[e] * d + h * dh..rows[e] * d + (h + 1) * dh];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(self.push(
            out,
            Shape::new(n_rows, d),
            Op::HeadSpmm {
                alpha,
                dense,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
                heads,
            },
        ))
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. In evaluation
    /// mode (or with `p == 0`) the input variable is returned unchanged.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if p <= 0.0 {
            return x;
        }
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        let keep = 1.0 - p;
        let scale = T::real(1.0 / keep);
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = zip_map(self.value(x), &mask, |a, m| a * m);
        let s = self.shape(x);
        self.push(out, s, Op::Dropout(x, mask))
    }

    // ---- reductions and losses ------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        self.push(vec![s], Shape::scalar(), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::real(v.len().max(1) as f64);
        let s: T = v.iter().copied().sum::<T>() / n;
        self.push(vec![s], Shape::scalar(), Op::Mean(x))
    }

    /// Categorical cross-entropy `logsumexp(x) − x[target]` over the
    /// flattened logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let xv = self.value(logits);
        if target >= xv.len() {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: target,
                len: xv.len(),
            });
        }
        let mut probs = vec![T::zero(); xv.len()];
        softmax_into(xv, &mut probs);
        let m = xv.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + xv.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        let loss = lse - xv[target];
        Ok(self.push(
            vec![loss],
            Shape::scalar(),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy with logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let xv = self.value(logits);
        if targets.len() != xv.len() || xv.is_empty() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: self.shape(logits),
                rhs: Shape::row(targets.len()),
            });
        }
        let t: Vec<T> = targets.iter().map(|&y| T::real(y)).collect();
        let n = T::real(xv.len() as f64);
        let loss = xv
            .iter()
            .zip(&t)
            .map(|(&x, &y)| x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln())
            .sum::<T>()
            / n;
        Ok(self.push(
            vec![loss],
            Shape::scalar(),
            Op::Bce {
                logits,
                targets: t,
            },
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Propagates `d loss / d ·` to every reachable leaf that requires a
    /// gradient. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s.numel() != 1 {
            return Err(Error::NonScalarLoss(s));
        }
        let mut local: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let acc = self
                    .grads
                    .get_mut(i)
                    .and_then(Option::as_mut);
                match acc {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        if self.grads.len() <= i {
                            self.grads.resize(i + 1, None);
                        }
                        self.grads[i] = Some(g);
                    }
                }
                continue;
            }
            self.backprop_node(i, &g, &mut local);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], local: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let shape = node.shape;
        // Gradient buffer for input `v`, or None if it does not need one.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.len();
                    Some(local[v.0].get_or_insert_with(|| vec![T::zero(); n]))
                } else {
                    None
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa.rows, sa.cols, sb.cols);
                if let Some(da) = buf!(*a) {
                    // dA = G · Bᵀ
                    let bv = self.value(*b);
                    for r in 0..m {
                        for c in 0..k {
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc += g[r * n + j] * bv[c * n + j];
                            }
                            da[r * k + c] += acc;
                        }
                    }
                }
                if let Some(db) = buf!(*b) {
                    // dB = Aᵀ · G
                    let av = self.value(*a);
                    for r in 0..m {
                        for c in 0..k {
                            let x = av[r * k + c];
                            if x == T::zero() {
                                continue;
                            }
                            let row = &g[r * n..(r + 1) * n];
                            for (d, &gv) in db[c * n..(c + 1) * n].iter_mut().zip(row) {
                                *d += x * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = buf!(*b) {
                    add_into(db, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = buf!(*b) {
                    db.iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = buf!(*a) {
                    let bv = self.value(*b);
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                }
                if let Some(db) = buf!(*b) {
                    let av = self.value(*a);
                    for ((d, &x), &y) in db.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = buf!(*a) {
                    da.iter_mut().zip(g).for_each(|(d, &x)| *d += x * *c);
                }
            }
            Op::AddRow(x, b) => {
                let cols = shape.cols;
                if let Some(dx) = buf!(*x) {
                    add_into(dx, g);
                }
                if let Some(db) = buf!(*b) {
                    for (i, &v) in g.iter().enumerate() {
                        db[i % cols] += v;
                    }
                }
            }
            Op::AddCol(x, c) => {
                let cols = shape.cols.max(1);
                if let Some(dx) = buf!(*x) {
                    add_into(dx, g);
                }
                if let Some(dc) = buf!(*c) {
                    for (i, &v) in g.iter().enumerate() {
                        dc[i / cols] += v;
                    }
                }
            }
            Op::MulRow(x, r) => {
                let cols = shape.cols;
                if let Some(dx) = buf!(*x) {
                    let rv = self.value(*r);
                    for (i, (d, &v)) in dx.iter_mut().zip(g).enumerate() {
                        *d += v * rv[i % cols];
                    }
                }
                if let Some(dr) = buf!(*r) {
                    let xv = self.value(*x);
                    for (i, (&v, &xx)) in g.iter().zip(xv.iter()).enumerate() {
                        dr[i % cols] += v * xx;
                    }
                }
            }
            Op::LeakyRelu(x, s) => {
                if let Some(dx) = buf!(*x) {
                    let xv = self.value(*x);
                    for ((d, &v), &xx) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if xx >= T::zero() { v } else { v * *s };
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(dx) = buf!(*x) {
                    // output is cols×rows of the input
                    let gt = transpose_raw(g, shape.rows, shape.cols);
                    add_into(dx, &gt);
                }
            }
            Op::ConcatCols(parts) => {
                let total = shape.cols;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).cols;
                    if let Some(dp) = buf!(p) {
                        for r in 0..shape.rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            add_into(&mut dp[r * c..(r + 1) * c], src);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p).numel();
                    if let Some(dp) = buf!(p) {
                        add_into(dp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(x, idx) => {
                let c = shape.cols;
                if let Some(dx) = buf!(*x) {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut dx[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::ScatterRows { base, rows, src } => {
                let c = shape.cols;
                if let Some(db) = buf!(*base) {
                    let mut masked = g.to_vec();
                    for &r in rows {
                        masked[r * c..(r + 1) * c].iter_mut().for_each(|v| *v = T::zero());
                    }
                    add_into(db, &masked);
                }
                if let Some(ds) = buf!(*src) {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut ds[k * c..(k + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::SpanMean(x, spans) => {
                let c = shape.cols;
                if let Some(dx) = buf!(*x) {
                    for (r, &(a, b)) in spans.iter().enumerate() {
                        let inv = T::one() / T::real((b - a) as f64);
                        let gr = &g[r * c..(r + 1) * c];
                        for t in a..b {
                            for (d, &v) in dx[t * c..(t + 1) * c].iter_mut().zip(gr) {
                                *d += v * inv;
                            }
                        }
                    }
                }
            }
            Op::Gather(x, idx) => {
                if let Some(dx) = buf!(*x) {
                    for (e, &src) in idx.iter().enumerate() {
                        dx[src] += g[e];
                    }
                }
            }
            Op::SegmentSoftmax(x, offsets) => {
                if let Some(dx) = buf!(*x) {
                    for w in offsets.windows(2) {
                        let (a, b) = (w[0], w[1]);
                        softmax_backward(&out[a..b], &g[a..b], &mut dx[a..b]);
                    }
                }
            }
            Op::MaskedSoftmax(x, mask) => {
                if let Some(dx) = buf!(*x) {
                    let dot: T = out
                        .iter()
                        .zip(g)
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|((&y, &gv), _)| y * gv)
                        .sum();
                    for (k, &m) in mask.iter().enumerate() {
                        if m {
                            dx[k] += out[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::RowMax(x, arg) => {
                let c = self.shape(*x).cols;
                if let Some(dx) = buf!(*x) {
                    for (r, &a) in arg.iter().enumerate() {
                        dx[r * c + a] += g[r];
                    }
                }
            }
            Op::HeadSpmm {
                alpha,
                dense,
                rows,
                cols,
                heads,
            } => {
                let d = shape.cols;
                let dh = d / heads;
                let nnz = rows.len();
                if let Some(da) = buf!(*alpha) {
                    let dv = self.value(*dense);
                    for h in 0..*heads {
                        for e in 0..nnz {
                            let gr = &g[rows[e] * d + h * dh..rows[e] * d + (h + 1) * dh];
                            let src = &dv[cols[e] * d + h * dh..cols[e] * d + (h + 1) * dh];
                            da[h * nnz + e] += gr.iter().zip(src).map(|(&a, &b)| a * b).sum();
                        }
                    }
                }
                if let Some(dd) = buf!(*dense) {
                    let av = self.value(*alpha);
                    for h in 0..*heads {
                        for e in 0..nnz {
                            let w = av[h * nnz + e];
                            let gr = &g[rows[e] * d + h * dh..rows[e] * d + (h + 1) * dh];
                            let dst = &mut dd[cols[e] * d + h * dh..cols[e] * d + (h + 1) * dh];
                            for (o, &v) in dst.iter_mut().zip(gr) {
                                *o += w * v;
                            }
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, &v), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += v * m;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = buf!(*x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = buf!(*x) {
                    let n = T::real(dx.len().max(1) as f64);
                    let v = g[0] / n;
                    dx.iter_mut().for_each(|d| *d += v);
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                if let Some(dx) = buf!(*logits) {
                    for (k, (d, &p)) in dx.iter_mut().zip(probs).enumerate() {
                        let y = if k == *target { T::one() } else { T::zero() };
                        *d += g[0] * (p - y);
                    }
                }
            }
            Op::Bce { logits, targets } => {
                if let Some(dx) = buf!(*logits) {
                    let xv = self.value(*logits);
                    let n = T::real(xv.len() as f64);
                    for ((d, &x), &y) in dx.iter_mut().zip(xv).zip(targets) {
                        *d += g[0] * (sigmoid(x) - y) / n;
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_into<T: Real>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

fn softmax_backward<T: Real>(y: &[T], g: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
    for ((d, &yy), &gg) in dx.iter_mut().zip(y).zip(g) {
        *d += yy * (gg - dot);
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose_raw<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
