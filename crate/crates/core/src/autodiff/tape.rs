use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norm below which a row is treated as degenerate by [`Tape::row_l2_normalize`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a user-registered op: `(inputs, output, output_grad) -> input grads`.
pub type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Scale(Var, T),
    AddRowBias(Var, Var),
    Transpose(Var),
    RowL2Normalize { input: Var, norms: Vec<T> },
    LogMeanExp(Var),
    RowLogSumExp(Var),
    Diagonal(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    PermuteRows(Var, Vec<usize>),
    Clamp { input: Var, lo: T, hi: T },
    Custom { name: String, inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::Scale(..) => "scale",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Transpose(..) => "transpose",
            Op::RowL2Normalize { .. } => "row_l2_normalize",
            Op::LogMeanExp(..) => "log_mean_exp",
            Op::RowLogSumExp(..) => "row_log_sum_exp",
            Op::Diagonal(..) => "diagonal",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ConcatCols(..) => "concat_cols",
            Op::PermuteRows(..) => "permute_rows",
            Op::Clamp { .. } => "clamp",
            Op::Custom { name, .. } => name,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRowBias(a, b) => {
                vec![*a, *b]
            }
            Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::LogMeanExp(a)
            | Op::RowLogSumExp(a)
            | Op::Diagonal(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::PermuteRows(a, _) => vec![*a],
            Op::RowL2Normalize { input, .. } | Op::Clamp { input, .. } => vec![*input],
            Op::ConcatCols(v) => v.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Summary of one recorded node: op kind, inputs, whether it is on a gradient path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapeNode {
    pub op: String,
    pub inputs: Vec<Var>,
    pub requires_grad: bool,
}

/// Linear record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A tape is meant to live for one training step.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked by caller")
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn node(&self, v: Var) -> TapeNode {
        let n = &self.nodes[v.0];
        TapeNode { op: n.op.name().to_string(), inputs: n.op.inputs(), requires_grad: n.requires_grad }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        let out = self.value(a).map(T::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// `a[n×d] + bias[1×d]`, the bias broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim("add_row_bias", av.shape(), bv.shape()));
        }
        let cols = av.cols();
        let data = av.data().iter().enumerate().map(|(i, &x)| x + bv.data()[i % cols]).collect();
        let out = Tensor::new(av.rows(), cols, data)?;
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut norms = Vec::with_capacity(av.rows());
        let mut data = Vec::with_capacity(av.len());
        for (i, row) in av.iter_rows().enumerate() {
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if !(norm.to_f64_lossy() >= MIN_ROW_NORM) {
                return Err(Error::DegenerateEmbedding { row: i, norm: norm.to_f64_lossy() });
            }
            norms.push(norm);
            data.extend(row.iter().map(|&x| x / norm));
        }
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::RowL2Normalize { input: a, norms }))
    }

    /// `log(mean(exp(v)))` over all entries, stabilized by max subtraction.
    pub fn log_mean_exp(&mut self, v: Var) -> Result<Var> {
        let vv = self.value(v);
        if vv.is_empty() {
            return Err(Error::Arity { op: "log_mean_exp" });
        }
        let n = T::from_usize(vv.len()).expect("length fits in scalar");
        let out = log_sum_exp(vv.data()) - n.ln();
        Ok(self.push(Tensor::scalar(out), Op::LogMeanExp(v)))
    }

    /// Per-row log-sum-exp: `[n×m] -> [n×1]`.
    pub fn row_log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.cols() == 0 {
            return Err(Error::Arity { op: "row_log_sum_exp" });
        }
        let data: Vec<T> = av.iter_rows().map(log_sum_exp).collect();
        let out = Tensor::column(&data);
        Ok(self.push(out, Op::RowLogSumExp(a)))
    }

    /// Main diagonal of a square matrix as a column.
    pub fn diagonal(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(Error::dim("diagonal", av.shape(), (av.cols(), av.rows())));
        }
        let data: Vec<T> = (0..av.rows()).map(|i| av.get(i, i)).collect();
        Ok(self.push(Tensor::column(&data), Op::Diagonal(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::Arity { op: "mean" });
        }
        let n = T::from_usize(av.len()).expect("length fits in scalar");
        let s = av.data().iter().copied().sum::<T>() / n;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a)))
    }

    /// Horizontal concatenation `[a | b | ...]` of equally tall values.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Arity { op: "concat_cols" });
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::hcat(&values)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Output row `i` is input row `perm[i]`. `perm` must be a permutation.
    pub fn permute_rows(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let mut seen = vec![false; av.rows()];
        if perm.len() != av.rows() || perm.iter().any(|&p| p >= av.rows() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute_rows", av.shape(), (perm.len(), 1)));
        }
        let out = av.select_rows(perm);
        Ok(self.push(out, Op::PermuteRows(a, perm.to_vec())))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(out, Op::Clamp { input: a, lo, hi })
    }

    /// Records an op with a caller-supplied value and backward rule.
    pub fn custom(&mut self, name: &str, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        self.push(value, Op::Custom { name: name.to_string(), inputs: inputs.to_vec(), backward })
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every differentiable leaf gets a gradient slot; leaves the loss does not
    /// depend on receive exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Rank(lv.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(1, 1));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            // intermediate grads are not part of the result
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let slot = slot(grads, *a, m, k);
                    T::gemm(m, n, k, T::one(), g.data(), (n as isize, 1), bv.data(), (1, n as isize), T::one(), slot.data_mut(), (k as isize, 1));
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let slot = slot(grads, *b, k, n);
                    T::gemm(k, m, n, T::one(), av.data(), (1, k as isize), g.data(), (n as isize, 1), T::one(), slot.data_mut(), (n as isize, 1));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.data().iter().copied());
                self.acc(grads, *b, g.data().iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.data().iter().copied());
                self.acc(grads, *b, g.data().iter().map(|&x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, g.data().iter().zip(bv.data()).map(|(&d, &x)| d * x));
                self.acc(grads, *b, g.data().iter().zip(av.data()).map(|(&d, &x)| d * x));
            }
            Op::Exp(a) => self.acc(grads, *a, g.data().iter().zip(y.data()).map(|(&d, &e)| d * e)),
            Op::Log(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, g.data().iter().zip(av.data()).map(|(&d, &x)| d / x));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, g.data().iter().zip(av.data()).map(|(&d, &x)| if x > T::zero() { d } else { T::zero() }));
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.data().iter().map(|&d| d * *c)),
            Op::AddRowBias(a, bias) => {
                self.acc(grads, *a, g.data().iter().copied());
                if self.wants(*bias) {
                    let cols = g.cols();
                    let mut colsum = vec![T::zero(); cols];
                    for row in g.iter_rows() {
                        for (s, &d) in colsum.iter_mut().zip(row) {
                            *s += d;
                        }
                    }
                    self.acc(grads, *bias, colsum.into_iter());
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.acc(grads, *a, gt.data().iter().copied());
            }
            Op::RowL2Normalize { input, norms } => {
                // dx = (dy - y (y·dy)) / ‖x‖
                let cols = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                for (i, (yr, gr)) in y.iter_rows().zip(g.iter_rows()).enumerate() {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend((0..cols).map(|j| (gr[j] - yr[j] * dot) / norms[i]));
                }
                self.acc(grads, *input, dx.into_iter());
            }
            Op::LogMeanExp(v) => {
                let vv = self.value(*v);
                let d = g.data()[0];
                let n = T::from_usize(vv.len()).expect("length fits in scalar");
                let out = y.data()[0];
                self.acc(grads, *v, vv.data().iter().map(|&x| d * (x - out).exp() / n));
            }
            Op::RowLogSumExp(a) => {
                let av = self.value(*a);
                let cols = av.cols();
                let it = av.data().iter().enumerate().map(|(idx, &x)| {
                    let r = idx / cols;
                    g.data()[r] * (x - y.data()[r]).exp()
                });
                self.acc(grads, *a, it);
            }
            Op::Diagonal(a) => {
                let n = y.rows();
                let mut d = vec![T::zero(); n * n];
                for i in 0..n {
                    d[i * n + i] = g.data()[i];
                }
                self.acc(grads, *a, d.into_iter());
            }
            Op::Sum(a) => {
                let d = g.data()[0];
                let len = self.value(*a).len();
                self.acc(grads, *a, std::iter::repeat_n(d, len));
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let d = g.data()[0] / T::from_usize(len).expect("length fits in scalar");
                self.acc(grads, *a, std::iter::repeat_n(d, len));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let it = g.iter_rows().flat_map(|row| row[offset..offset + w].iter().copied());
                        let piece: Vec<T> = it.collect();
                        self.acc(grads, p, piece.into_iter());
                    }
                    offset += w;
                }
            }
            Op::PermuteRows(a, perm) => {
                if self.wants(*a) {
                    let cols = g.cols();
                    let mut d = vec![T::zero(); g.len()];
                    for (i, &src) in perm.iter().enumerate() {
                        d[src * cols..(src + 1) * cols].copy_from_slice(g.row(i));
                    }
                    self.acc(grads, *a, d.into_iter());
                }
            }
            Op::Clamp { input, lo, hi } => {
                let av = self.value(*input);
                let it = g.data().iter().zip(av.data()).map(|(&d, &x)| if x >= *lo && x <= *hi { d } else { T::zero() });
                self.acc(grads, *input, it);
            }
            Op::Custom { inputs, backward, .. } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let dins = backward(&vals, y, g);
                for (&v, d) in inputs.iter().zip(dins) {
                    self.acc(grads, v, d.into_data().into_iter());
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: impl Iterator<Item = T>) {
        if !self.wants(v) {
            return;
        }
        let (r, c) = self.value(v).shape();
        let s = slot(grads, v, r, c);
        for (x, d) in s.data_mut().iter_mut().zip(delta) {
            *x += d;
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, rows: usize, cols: usize) -> &mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}
