//! A small reverse-mode automatic differentiation tape over 2-D `f64` matrices.
//!
//! Every value on the tape is an `Array2<f64>`. Scalars are `1 × 1` matrices.
//! Operations record their inputs; [`Tape::backward`] walks the tape in reverse
//! and accumulates gradients for every node that depends on a trainable
//! parameter. Parameters enter the tape through [`Tape::param`] and are keyed by
//! their registry name, so the returned [`Gradients`] map back onto a
//! [`ParamStore`].

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::params::ParamStore;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    GatherMean {
        table: Var,
        groups: Arc<Vec<Vec<usize>>>,
    },
    BiasLookup {
        table: Var,
        index: Arc<Array2<usize>>,
        head: usize,
    },
    ZeroRows {
        x: Var,
        rows: Vec<usize>,
    },
    Im2Col {
        x: Var,
        height: usize,
        width: usize,
        kernel: usize,
    },
    AvgPool2 {
        x: Var,
        height: usize,
        width: usize,
    },
    RoiPool {
        x: Var,
        bins: Arc<Vec<Vec<Vec<usize>>>>,
    },
    Mae {
        pred: Var,
        target: Array2<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Array2<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Array2<f64>,
    },
    Sum(Vec<Var>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to named parameters.
pub type Gradients = BTreeMap<String, Array2<f64>>;

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    frozen_prefixes: Vec<String>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameters whose names start with any of these prefixes enter the
    /// tape as constants.
    pub fn with_frozen(prefixes: &[String]) -> Self {
        Self {
            frozen_prefixes: prefixes.to_vec(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts (once per tape) the parameter `name` from `store`.
    ///
    /// Panics if the parameter is missing; model code only asks for names it
    /// registered at initialization.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not registered"))
            .clone();
        let trainable = !self.frozen_prefixes.iter().any(|p| name.starts_with(p));
        let v = self.push(value, Op::Leaf, trainable);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Adds a `1 × d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(r.ncols(), self.value(a).ncols(), "add_row: width mismatch");
        let value = self.value(a) + r;
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// Adds an `n × 1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let c = self.value(col);
        assert_eq!(c.ncols(), 1, "add_col: bias must be a single column");
        assert_eq!(c.nrows(), self.value(a).nrows(), "add_col: height mismatch");
        let value = self.value(a) + c;
        let ng = self.ng(a) || self.ng(col);
        self.push(value, Op::AddCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, factor), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let ng = self.ng(a);
        self.push(value, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a).view());
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise layer normalization with `1 × d` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                xhat[[i, j]] = (row[j] - mean) * is;
            }
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(x);
        self.push(value, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select(Axis(0), rows);
        let ng = self.ng(x);
        self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    /// Output row `i` is the mean of `table` rows listed in `groups[i]`.
    pub fn gather_mean(&mut self, table: Var, groups: Arc<Vec<Vec<usize>>>) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((groups.len(), t.ncols()));
        for (i, group) in groups.iter().enumerate() {
            assert!(!group.is_empty(), "gather_mean: empty group {i}");
            let w = 1.0 / group.len() as f64;
            let mut out = value.row_mut(i);
            for &r in group {
                out.scaled_add(w, &t.row(r));
            }
        }
        let ng = self.ng(table);
        self.push(value, Op::GatherMean { table, groups }, ng)
    }

    /// `out[i, j] = table[index[i, j], head]`
    pub fn bias_lookup(&mut self, table: Var, index: Arc<Array2<usize>>, head: usize) -> Var {
        let t = self.value(table);
        let value = index.mapv(|k| t[[k, head]]);
        let ng = self.ng(table);
        self.push(value, Op::BiasLookup { table, index, head }, ng)
    }

    pub fn zero_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let mut value = self.value(x).clone();
        for &r in rows {
            value.row_mut(r).fill(0.0);
        }
        let ng = self.ng(x);
        self.push(
            value,
            Op::ZeroRows {
                x,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    /// Unfolds a `C × (H·W)` feature map into `(C·k·k) × (H·W)` patches with
    /// edge-replicate "same" padding, so a convolution becomes a matrix product.
    pub fn im2col(&mut self, x: Var, height: usize, width: usize, kernel: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ncols(), height * width, "im2col: spatial size mismatch");
        let value = im2col(xv.view(), height, width, kernel);
        let ng = self.ng(x);
        self.push(
            value,
            Op::Im2Col {
                x,
                height,
                width,
                kernel,
            },
            ng,
        )
    }

    /// 2×2 average pooling with stride 2 on a `C × (H·W)` map (H, W even).
    pub fn avg_pool2(&mut self, x: Var, height: usize, width: usize) -> Var {
        let xv = self.value(x);
        let (oh, ow) = (height / 2, width / 2);
        let mut value = Array2::zeros((xv.nrows(), oh * ow));
        for c in 0..xv.nrows() {
            for y in 0..oh {
                for xx in 0..ow {
                    let a = xv[[c, (2 * y) * width + 2 * xx]];
                    let b = xv[[c, (2 * y) * width + 2 * xx + 1]];
                    let d = xv[[c, (2 * y + 1) * width + 2 * xx]];
                    let e = xv[[c, (2 * y + 1) * width + 2 * xx + 1]];
                    value[[c, y * ow + xx]] = 0.25 * (a + b + d + e);
                }
            }
        }
        let ng = self.ng(x);
        self.push(value, Op::AvgPool2 { x, height, width }, ng)
    }

    /// Average-pools a `C × (H·W)` map over precomputed cell bins.
    ///
    /// `bins[u][b]` lists the flat cells of bin `b` for output row `u`; the
    /// output is `units × (C·bins)` with column `c·bins + b`.
    pub fn roi_pool(&mut self, x: Var, bins: Arc<Vec<Vec<Vec<usize>>>>) -> Var {
        let xv = self.value(x);
        let channels = xv.nrows();
        let nb = bins.first().map_or(0, Vec::len);
        let mut value = Array2::zeros((bins.len(), channels * nb));
        for (u, unit_bins) in bins.iter().enumerate() {
            for (b, cells) in unit_bins.iter().enumerate() {
                let w = 1.0 / cells.len() as f64;
                for c in 0..channels {
                    let sum: f64 = cells.iter().map(|&k| xv[[c, k]]).sum();
                    value[[u, c * nb + b]] = sum * w;
                }
            }
        }
        let ng = self.ng(x);
        self.push(value, Op::RoiPool { x, bins }, ng)
    }

    /// Mean absolute error against a constant target.
    pub fn mae(&mut self, pred: Var, target: Array2<f64>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "mae: shape mismatch");
        let n = p.len().max(1) as f64;
        let loss = Zip::from(p)
            .and(&target)
            .fold(0.0, |acc, a, b| acc + (a - b).abs())
            / n;
        let ng = self.ng(pred);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::Mae { pred, target },
            ng,
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len(), "cross_entropy: target count");
        let probs = softmax_rows(l.view());
        let n = targets.len().max(1) as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -log_softmax_at(&l.row(i).to_vec(), t))
            .sum::<f64>()
            / n;
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// `Σ x ⊙ weights` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2<f64>) -> Var {
        let v = (self.value(x) * &weights).sum();
        let ng = self.ng(x);
        self.push(Array2::from_elem((1, 1), v), Op::WeightedSum { x, weights }, ng)
    }

    /// Sum of same-shaped values.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum: no inputs");
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            value += self.value(p);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::Sum(parts.to_vec()), ng)
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter inserted through [`Tape::param`].
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        self.params
            .iter()
            .filter(|(_, v)| self.ng(**v))
            .map(|(name, v)| {
                let g = grads[v.0]
                    .take()
                    .unwrap_or_else(|| Array2::zeros(self.value(*v).dim()));
                (name.clone(), g)
            })
            .collect()
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddCol(a, col) => {
                acc(*a, g.clone());
                acc(*col, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, f) => acc(*a, g * *f),
            Op::Gelu(a) => {
                let d = self.value(*a).mapv(gelu_grad);
                acc(*a, g * &d);
            }
            Op::Relu(a) => {
                let d = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                acc(*a, g * &d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(p, q)| p * q).sum();
                    for j in 0..y.ncols() {
                        ga[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.ng(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let gam = self.value(*gamma);
                    let (n, d) = xhat.dim();
                    let mut gx = Array2::zeros((n, d));
                    for i in 0..n {
                        let gh: Vec<f64> = (0..d).map(|j| g[[i, j]] * gam[[0, j]]).collect();
                        let mean_gh = gh.iter().sum::<f64>() / d as f64;
                        let mean_ghx =
                            (0..d).map(|j| gh[j] * xhat[[i, j]]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[[i, j]] = inv_std[i] * (gh[j] - mean_gh - xhat[[i, j]] * mean_ghx);
                        }
                    }
                    acc(*x, gx);
                }
            }
            Op::SliceCols { x, start } => {
                let mut gx = Array2::zeros(self.value(*x).dim());
                gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(p, g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    acc(p, g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
            }
            Op::SelectRows { x, rows } => {
                let mut gx = Array2::zeros(self.value(*x).dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = gx.row_mut(r);
                    dst += &g.row(i);
                }
                acc(*x, gx);
            }
            Op::GatherMean { table, groups } => {
                let mut gt = Array2::zeros(self.value(*table).dim());
                for (i, group) in groups.iter().enumerate() {
                    let w = 1.0 / group.len() as f64;
                    for &r in group {
                        gt.row_mut(r).scaled_add(w, &g.row(i));
                    }
                }
                acc(*table, gt);
            }
            Op::BiasLookup { table, index, head } => {
                let mut gt = Array2::zeros(self.value(*table).dim());
                Zip::from(index.as_ref()).and(g).for_each(|&k, &v| gt[[k, *head]] += v);
                acc(*table, gt);
            }
            Op::ZeroRows { x, rows } => {
                let mut gx = g.clone();
                for &r in rows {
                    gx.row_mut(r).fill(0.0);
                }
                acc(*x, gx);
            }
            Op::Im2Col {
                x,
                height,
                width,
                kernel,
            } => {
                let channels = self.value(*x).nrows();
                acc(*x, col2im(g.view(), channels, *height, *width, *kernel));
            }
            Op::AvgPool2 { x, height, width } => {
                let (oh, ow) = (height / 2, width / 2);
                let mut gx = Array2::zeros(self.value(*x).dim());
                for c in 0..g.nrows() {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let v = 0.25 * g[[c, y * ow + xx]];
                            gx[[c, (2 * y) * width + 2 * xx]] += v;
                            gx[[c, (2 * y) * width + 2 * xx + 1]] += v;
                            gx[[c, (2 * y + 1) * width + 2 * xx]] += v;
                            gx[[c, (2 * y + 1) * width + 2 * xx + 1]] += v;
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::RoiPool { x, bins } => {
                let mut gx = Array2::zeros(self.value(*x).dim());
                let channels = gx.nrows();
                for (u, unit_bins) in bins.iter().enumerate() {
                    let nb = unit_bins.len();
                    for (b, cells) in unit_bins.iter().enumerate() {
                        let w = 1.0 / cells.len() as f64;
                        for c in 0..channels {
                            let v = g[[u, c * nb + b]] * w;
                            for &k in cells {
                                gx[[c, k]] += v;
                            }
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::Mae { pred, target } => {
                let p = self.value(*pred);
                let scale = g[[0, 0]] / p.len().max(1) as f64;
                let mut gp = Array2::zeros(p.dim());
                Zip::from(&mut gp).and(p).and(target).for_each(|o, &a, &b| {
                    *o = scale * sign(a - b);
                });
                acc(*pred, gp);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g[[0, 0]] / targets.len().max(1) as f64;
                let mut gl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    gl[[i, t]] -= 1.0;
                }
                acc(*logits, gl * scale);
            }
            Op::WeightedSum { x, weights } => acc(*x, weights * g[[0, 0]]),
            Op::Sum(parts) => {
                for &p in parts {
                    acc(p, g.clone());
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// `log softmax(row)[t]` computed with the log-sum-exp shift.
pub fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

fn im2col(x: ArrayView2<f64>, height: usize, width: usize, kernel: usize) -> Array2<f64> {
    let channels = x.nrows();
    let mut out = Array2::zeros((channels * kernel * kernel, height * width));
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                for y in 0..height {
                    let sy = clamp_tap(y, ky, kernel, height);
                    for xx in 0..width {
                        let sx = clamp_tap(xx, kx, kernel, width);
                        out[[row, y * width + xx]] = x[[c, sy * width + sx]];
                    }
                }
            }
        }
    }
    out
}

/// Source coordinate of kernel tap `k` at output `pos` under edge-replicate
/// padding.
fn clamp_tap(pos: usize, k: usize, kernel: usize, len: usize) -> usize {
    let p = pos as isize + k as isize - (kernel / 2) as isize;
    p.clamp(0, len as isize - 1) as usize
}

fn col2im(
    g: ArrayView2<f64>,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros((channels, height * width));
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                for y in 0..height {
                    let sy = clamp_tap(y, ky, kernel, height);
                    for xx in 0..width {
                        let sx = clamp_tap(xx, kx, kernel, width);
                        out[[c, sy * width + sx]] += g[[row, y * width + xx]];
                    }
                }
            }
        }
    }
    out
}
