//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so replaying them backwards is a valid
//! topological order. Only the operations the model needs are provided;
//! vectors are `1×k` matrices and scalars are `1×1`.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Variance floor shared by layer and group normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Rows with an L2 norm below this are treated as zero by [`Graph::normalize_rows`].
pub const ZERO_NORM: f64 = 1e-12;
/// Lower clamp for the denominator of the KL divergence.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    ScaleRows(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    GroupNorm {
        x: Var,
        gain: Var,
        bias: Var,
        groups: usize,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectCols(Var, Vec<usize>),
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    MeanRows(Var),
    Sum(Var),
    SumSquares(Var),
    KlRows(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

fn im2col_source(t: usize, k: usize, stride: usize, pad: usize, rows: usize) -> usize {
    let pos = (t * stride + k) as isize - pad as isize;
    pos.clamp(0, rows as isize - 1) as usize
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` that blocks gradients.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    /// Adds the `1×k` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        assert_eq!(self.shape(r).0, 1, "add_row: bias must be a row");
        assert_eq!(self.shape(a).1, self.shape(r).1, "add_row: width mismatch");
        let v = self.value(a) + self.value(r);
        let rg = self.rg(&[a, r]);
        self.push(v, Op::AddRow(a, r), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// Multiplies `a` by the `1×1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar: expected 1x1 factor");
        let v = self.value(a) * self.scalar_value(s);
        let rg = self.rg(&[a, s]);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    /// Row `i` of `a` (n×c) multiplied by entry `i` of the `1×n` row `w`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(w), (1, n), "scale_rows: weight shape");
        let mut v = self.value(a).clone();
        let wv = self.value(w);
        for (i, mut row) in v.axis_iter_mut(Axis(0)).enumerate() {
            row *= wv[[0, i]];
        }
        let rg = self.rg(&[a, w]);
        self.push(v, Op::ScaleRows(a, w), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(super::ops::sigmoid_scalar);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked out.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros(x.dim());
        for (i, (xr, mut vr)) in x.outer_iter().zip(v.outer_iter_mut()).enumerate() {
            let width = if causal { (i + 1).min(xr.len()) } else { xr.len() };
            let src: Vec<f64> = xr.iter().take(width).copied().collect();
            for (dst, p) in vr.iter_mut().zip(super::ops::softmax_unchecked(&src)) {
                *dst = p;
            }
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        assert_eq!(self.shape(gain), (1, cols));
        assert_eq!(self.shape(bias), (1, cols));
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (xr, mut hr) in xv.outer_iter().zip(xhat.outer_iter_mut()) {
            let mean = xr.sum() / cols as f64;
            let var = xr.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            Zip::from(&mut hr).and(&xr).for_each(|h, &e| *h = (e - mean) * inv);
            inv_std.push(inv);
        }
        let v = &xhat * self.value(gain) + self.value(bias);
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Group normalization of a `T×C` feature map: channels split into
    /// `groups` contiguous blocks, each normalized over all frames.
    pub fn group_norm(&mut self, x: Var, gain: Var, bias: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        assert!(groups > 0 && cols % groups == 0, "group_norm: channels not divisible");
        assert_eq!(self.shape(gain), (1, cols));
        assert_eq!(self.shape(bias), (1, cols));
        let width = cols / groups;
        let count = (rows * width) as f64;
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(groups);
        for k in 0..groups {
            let block = xv.slice(s![.., k * width..(k + 1) * width]);
            let mean = block.sum() / count;
            let var = block.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / count;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            xhat.slice_mut(s![.., k * width..(k + 1) * width])
                .zip_mut_with(&block, |h, &e| *h = (e - mean) * inv);
            inv_std.push(inv);
        }
        let v = &xhat * self.value(gain) + self.value(bias);
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            v,
            Op::GroupNorm {
                x,
                gain,
                bias,
                groups,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Scales each row to unit L2 norm; rows with norm below [`ZERO_NORM`] become zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut v = xv.clone();
        let mut norms = Vec::with_capacity(xv.nrows());
        for mut row in v.outer_iter_mut() {
            let n = row.iter().map(|e| e * e).sum::<f64>().sqrt();
            if n < ZERO_NORM {
                row.fill(0.0);
            } else {
                row /= n;
            }
            norms.push(n);
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::NormalizeRows { x, norms }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let v = self.value(a).select(Axis(1), cols);
        let rg = self.rg(&[a]);
        self.push(v, Op::SelectCols(a, cols.to_vec()), rg)
    }

    /// Unfolds a `T×C` sequence into `T_out×(kernel·C)` patches with
    /// edge-replicating padding of `kernel / 2` frames, so a 1-D
    /// convolution becomes one matrix product.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        assert!(rows > 0 && kernel > 0 && stride > 0);
        let pad = kernel / 2;
        let out_rows = (rows + 2 * pad - kernel) / stride + 1;
        let mut v = Array2::zeros((out_rows, kernel * cols));
        for t in 0..out_rows {
            for k in 0..kernel {
                let src = im2col_source(t, k, stride, pad, rows);
                v.slice_mut(s![t, k * cols..(k + 1) * cols]).assign(&xv.row(src));
            }
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::Im2Col { x, kernel, stride }, rg)
    }

    /// Column means, `T×C → 1×C`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("mean_rows: empty").insert_axis(Axis(0));
        let rg = self.rg(&[a]);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).iter().map(|e| e * e).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::SumSquares(a), rg)
    }

    /// `Σ_rows Σ_i p·ln(p / max(q, ε))` for row-stochastic `p` and `q`.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Var {
        assert_eq!(self.shape(p), self.shape(q), "kl_rows: shape mismatch");
        let mut total = 0.0;
        Zip::from(self.value(p)).and(self.value(q)).for_each(|&pi, &qi| {
            total += super::ops::kl_term(pi, qi);
        });
        let rg = self.rg(&[p, q]);
        self.push(scalar(total), Op::KlRows(p, q), rg)
    }

    /// Sum of several `1×1` nodes.
    pub fn add_scalars(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Gradients of the `1×1` node `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.dot(&val(*b).t()));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], val(*a).t().dot(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.dot(val(*b)));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.t().dot(val(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::AddRow(a, r) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*r) {
                    accumulate(&mut grads[r.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], -g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g * val(*b));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g * val(*a));
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g * *s);
                }
            }
            Op::MulScalar(a, s) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g * val(*s)[[0, 0]]);
                }
                if self.wants(*s) {
                    accumulate(&mut grads[s.0], scalar((g * val(*a)).sum()));
                }
            }
            Op::ScaleRows(a, w) => {
                let wv = val(*w);
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for (i, mut row) in ga.axis_iter_mut(Axis(0)).enumerate() {
                        row *= wv[[0, i]];
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if self.wants(*w) {
                    let gw = (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(0));
                    accumulate(&mut grads[w.0], gw);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(&mut grads[a.0], g * &y.mapv(|e| e * (1.0 - e)));
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                accumulate(&mut grads[a.0], ga);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut ga = g * y;
                for (mut row, yr) in ga.outer_iter_mut().zip(y.outer_iter()) {
                    let dot = row.sum();
                    Zip::from(&mut row).and(&yr).for_each(|d, &yi| *d -= yi * dot);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if self.wants(*gain) {
                    accumulate(&mut grads[gain.0], (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*bias) {
                    accumulate(&mut grads[bias.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let dxhat = g * val(*gain);
                    let cols = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for (r, mut out) in gx.outer_iter_mut().enumerate() {
                        let d = dxhat.row(r);
                        let h = xhat.row(r);
                        let mean_d = d.sum() / cols;
                        let mean_dh = d.dot(&h) / cols;
                        let inv = inv_std[r];
                        Zip::from(&mut out)
                            .and(&d)
                            .and(&h)
                            .for_each(|o, &di, &hi| *o = inv * (di - mean_d - hi * mean_dh));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::GroupNorm {
                x,
                gain,
                bias,
                groups,
                xhat,
                inv_std,
            } => {
                if self.wants(*gain) {
                    accumulate(&mut grads[gain.0], (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*bias) {
                    accumulate(&mut grads[bias.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let dxhat = g * val(*gain);
                    let (rows, cols) = xhat.dim();
                    let width = cols / groups;
                    let count = (rows * width) as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for k in 0..*groups {
                        let sl = s![.., k * width..(k + 1) * width];
                        let d = dxhat.slice(sl);
                        let h = xhat.slice(sl);
                        let mean_d = d.sum() / count;
                        let mean_dh = (&d * &h).sum() / count;
                        let inv = inv_std[k];
                        Zip::from(gx.slice_mut(sl))
                            .and(&d)
                            .and(&h)
                            .for_each(|o, &di, &hi| *o = inv * (di - mean_d - hi * mean_dh));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut gx = Array2::zeros(y.dim());
                for (r, mut out) in gx.outer_iter_mut().enumerate() {
                    if norms[r] < ZERO_NORM {
                        continue;
                    }
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let dot = gr.dot(&yr);
                    Zip::from(&mut out)
                        .and(&gr)
                        .and(&yr)
                        .for_each(|o, &gi, &yi| *o = (gi - yi * dot) / norms[r]);
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).ncols();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(val(*a).dim());
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accumulate(&mut grads[a.0], ga);
            }
            Op::SliceRows(a, start) => {
                let mut ga = Array2::zeros(val(*a).dim());
                ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                accumulate(&mut grads[a.0], ga);
            }
            Op::SelectCols(a, cols) => {
                let mut ga = Array2::zeros(val(*a).dim());
                for (j, &c) in cols.iter().enumerate() {
                    let mut dst = ga.column_mut(c);
                    dst += &g.column(j);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Im2Col { x, kernel, stride } => {
                let (rows, cols) = val(*x).dim();
                let pad = kernel / 2;
                let mut gx = Array2::zeros((rows, cols));
                for t in 0..g.nrows() {
                    for k in 0..*kernel {
                        let src = im2col_source(t, k, *stride, pad, rows);
                        let mut dst = gx.row_mut(src);
                        dst += &g.slice(s![t, k * cols..(k + 1) * cols]);
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::MeanRows(a) => {
                let rows = val(*a).nrows();
                let ga = Array2::from_shape_fn(val(*a).dim(), |(_, c)| g[[0, c]] / rows as f64);
                accumulate(&mut grads[a.0], ga);
            }
            Op::Sum(a) => {
                accumulate(&mut grads[a.0], Array2::from_elem(val(*a).dim(), g[[0, 0]]));
            }
            Op::SumSquares(a) => {
                accumulate(&mut grads[a.0], val(*a) * (2.0 * g[[0, 0]]));
            }
            Op::KlRows(p, q) => {
                let g0 = g[[0, 0]];
                if self.wants(*p) {
                    let mut gp = Array2::zeros(val(*p).dim());
                    Zip::from(&mut gp).and(val(*p)).and(val(*q)).for_each(|o, &pi, &qi| {
                        if pi > 0.0 {
                            *o = g0 * (pi.ln() - qi.max(KL_EPS).ln() + 1.0);
                        }
                    });
                    accumulate(&mut grads[p.0], gp);
                }
                if self.wants(*q) {
                    let mut gq = Array2::zeros(val(*q).dim());
                    Zip::from(&mut gq).and(val(*p)).and(val(*q)).for_each(|o, &pi, &qi| {
                        if qi > KL_EPS {
                            *o = -g0 * pi / qi;
                        }
                    });
                    accumulate(&mut grads[q.0], gq);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_gradient_matches_hand_derivation() {
        let mut g = Graph::new();
        let a = g.param(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = g.constant(array![[1.0], [-1.0]]);
        let y = g.matmul(a, b);
        let l = g.sum(y);
        let grads = g.backward(l);
        assert_eq!(grads.get(a).unwrap(), &array![[1.0, -1.0], [1.0, -1.0]]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn causal_softmax_masks_future_entries() {
        let mut g = Graph::new();
        let x = g.constant(Array2::zeros((3, 3)));
        let y = g.softmax_rows(x, true);
        let v = g.value(y);
        assert_eq!(v[[0, 0]], 1.0);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v[[1, 0]] - 0.5).abs() < 1e-15);
        assert!((v[[2, 2]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn im2col_replicates_edges() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0], [2.0], [3.0]]);
        let p = g.im2col(x, 3, 1);
        assert_eq!(g.value(p), &array![[1.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 3.0]]);
        let q = g.im2col(x, 3, 2);
        assert_eq!(g.value(q), &array![[1.0, 1.0, 2.0], [2.0, 3.0, 3.0]]);
    }

    #[test]
    fn zero_rows_normalize_to_zero() {
        let mut g = Graph::new();
        let x = g.param(array![[0.0, 0.0], [3.0, 4.0]]);
        let y = g.normalize_rows(x);
        assert_eq!(g.value(y), &array![[0.0, 0.0], [0.6, 0.8]]);
        let l = g.sum(y);
        let grads = g.backward(l);
        assert_eq!(grads.get(x).unwrap().row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(array![[2.0]]);
        let x = g.param(array![[3.0]]);
        let y = g.matmul(x, w);
        let l = g.sum_squares(y);
        let grads = g.backward(l);
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 24.0);
    }
}
