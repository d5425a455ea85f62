//! Reverse-mode automatic differentiation on a tape.
//!
//! Operations execute eagerly and append a record to the tape; records are
//! replayed in reverse by [`Tape::backward`] to accumulate vector–Jacobian
//! products. Nodes are identified by [`Var`] handles, which are plain
//! indices: construction order is the topological order, so the reverse
//! sweep needs no sorting and is bit-deterministic run to run.
//!
//! The operation set is exactly what the grounding model needs — dense
//! matrix products, row-wise softmax, gating nonlinearities, scatter/gather
//! of rows and columns, a numerically stable log-sum-exp, and a
//! Gumbel-Softmax whose hard mode emits one-hot rows in the forward pass
//! while routing gradients through the underlying soft distribution
//! (straight-through). Nothing here allocates behind an `Rc` or a lock; a
//! tape is a plain value that lives for one forward/backward pass.

use crate::error::{Error, Result};
use crate::numkit::rng::RngStream;
use crate::numkit::scalar::Scalar;
use crate::numkit::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only meaningful on the tape that
/// produced it; using it elsewhere is reported as a dangling reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sampling mode for [`Tape::gumbel_softmax_rows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GumbelMode {
    /// One-hot rows in the forward pass; gradients flow through the soft
    /// distribution (straight-through estimator).
    Hard,
    /// Relaxed rows: the tempered softmax itself.
    Soft,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `y = mul * x + add`, element-wise with constant coefficients.
    Affine(Var, T, T),
    Matmul(Var, Var),
    /// Row vector times matrix: `[k] · [k,n] -> [n]`.
    VecMat(Var, Var),
    /// Matrix times column vector: `[r,c] · [c] -> [r]`.
    MatVec(Var, Var),
    /// Weighted sum of matrix rows: `w^T A` for `A: [r,c], w: [r] -> [c]`.
    WeightedRowSum(Var, Var),
    /// Add a vector to every row of a matrix.
    AddRowBroadcast(Var, Var),
    /// Scale row `r` of a matrix by `s[r]`.
    ScaleRows(Var, Var),
    Row(Var, usize),
    Column(Var, usize),
    ConcatVec(Var, Var),
    StackScalars(Vec<Var>),
    /// Two `[k]` vectors into a `[k,2]` matrix, columns in argument order.
    StackCols(Var, Var),
    RowSoftmax(Var),
    SoftmaxVec(Var),
    LogSoftmaxVec(Var),
    /// `ln(max(x, floor))`; zero gradient on floored elements.
    LogFloor(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var),
    L2Normalize(Var),
    GumbelSoftmaxRows {
        logits: Var,
        /// Tempered softmax of the noised logits, kept for the backward pass.
        soft: Tensor<T>,
        tau: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of one scalar with respect to tape nodes.
///
/// Leaves registered with `requires_grad` always have an entry (zeros if the
/// loss does not depend on them); constant leaves are absent.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, if one was accumulated.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Wengert list: eager values plus the operation record for reverse mode.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. `requires_grad` marks it as a parameter
    /// whose gradient [`backward`](Self::backward) must report.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Registers data that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Forward value of a node. Panics on a foreign handle; fallible ops
    /// validate handles first.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::DanglingNode {
                index: v.0,
                len: self.nodes.len(),
            });
        }
        let _ = op;
        Ok(())
    }

    fn needs_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- element-wise ----------------------------------------------------

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        self.check(a, op_name)?;
        self.check(b, op_name)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op_name, format!("{sa:?} vs {sb:?}")));
        }
        Ok((a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.binary_same_shape("add", a, b)?;
        let data = zip(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.binary_same_shape("sub", a, b)?;
        let data = zip(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b), rg))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.binary_same_shape("mul", a, b)?;
        let data = zip(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), rg))
    }

    /// `mul * x + add`, element-wise with constants.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Result<Var> {
        self.check(x, "affine")?;
        if !mul.is_finite() || !add.is_finite() {
            return Err(Error::invalid("affine", "coefficients must be finite"));
        }
        let out = self.value(x).map(|v| mul * v + add);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(out, Op::Affine(x, mul, add), rg))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.affine(x, c, T::zero())
    }

    /// `1 - x`, the complement of a gate or mixing weight.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::one())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sigmoid")?;
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.needs_grad(&[x]);
        Ok(self.push(out, Op::Sigmoid(x), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x, "tanh")?;
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.needs_grad(&[x]);
        Ok(self.push(out, Op::Tanh(x), rg))
    }

    /// `ln(max(x, floor))`. The floor guards probabilities that underflowed
    /// to zero; floored elements get zero gradient.
    pub fn log_floor(&mut self, x: Var, floor: T) -> Result<Var> {
        self.check(x, "log_floor")?;
        if !(floor > T::zero()) {
            return Err(Error::invalid("log_floor", "floor must be positive"));
        }
        let out = self.value(x).map(|v| if v > floor { v.ln() } else { floor.ln() });
        let rg = self.needs_grad(&[x]);
        Ok(self.push(out, Op::LogFloor(x, floor), rg))
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = ta.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate().take(k) {
                let brow = &tb.data()[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + aip * bv;
                }
            }
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::Matmul(a, b),
            rg,
        ))
    }

    /// Row vector times matrix: `x[k] · W[k,n] -> [n]`.
    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x, "vecmat")?;
        self.check(w, "vecmat")?;
        let (tx, tw) = (self.value(x), self.value(w));
        if !tx.is_vector() || !tw.is_matrix() || tx.len() != tw.rows() {
            return Err(Error::shape(
                "vecmat",
                format!("{:?} x {:?}", tx.shape(), tw.shape()),
            ));
        }
        let (k, n) = (tw.rows(), tw.cols());
        let mut out = vec![T::zero(); n];
        for p in 0..k {
            let xv = tx.data()[p];
            let wrow = &tw.data()[p * n..(p + 1) * n];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o = *o + xv * wv;
            }
        }
        let rg = self.needs_grad(&[x, w]);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::VecMat(x, w), rg))
    }

    /// Matrix times column vector: `A[r,c] · x[c] -> [r]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        self.check(a, "matvec")?;
        self.check(x, "matvec")?;
        let (ta, tx) = (self.value(a), self.value(x));
        if !ta.is_matrix() || !tx.is_vector() || ta.cols() != tx.len() {
            return Err(Error::shape(
                "matvec",
                format!("{:?} x {:?}", ta.shape(), tx.shape()),
            ));
        }
        let r = ta.rows();
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            out.push(dot_slices(ta.row(i), tx.data()));
        }
        let rg = self.needs_grad(&[a, x]);
        Ok(self.push(Tensor::from_parts(vec![r], out), Op::MatVec(a, x), rg))
    }

    /// Weighted sum of rows, `Σ_r w[r] · A[r,:]` — i.e. `wᵀA` without
    /// materializing a transpose.
    pub fn weighted_row_sum(&mut self, a: Var, w: Var) -> Result<Var> {
        self.check(a, "weighted_row_sum")?;
        self.check(w, "weighted_row_sum")?;
        let (ta, tw) = (self.value(a), self.value(w));
        if !ta.is_matrix() || !tw.is_vector() || ta.rows() != tw.len() {
            return Err(Error::shape(
                "weighted_row_sum",
                format!("{:?} weighted by {:?}", ta.shape(), tw.shape()),
            ));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            let wi = tw.data()[i];
            for (o, &av) in out.iter_mut().zip(ta.row(i)) {
                *o = *o + wi * av;
            }
        }
        let rg = self.needs_grad(&[a, w]);
        Ok(self.push(
            Tensor::from_parts(vec![c], out),
            Op::WeightedRowSum(a, w),
            rg,
        ))
    }

    /// Adds vector `b` to every row of matrix `a` (bias broadcast).
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "add_row_broadcast")?;
        self.check(b, "add_row_broadcast")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_vector() || ta.cols() != tb.len() {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (j, &av) in ta.row(i).iter().enumerate() {
                out.push(av + tb.data()[j]);
            }
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::AddRowBroadcast(a, b),
            rg,
        ))
    }

    /// Scales row `r` of `a` by `s[r]`. With a 0/1 `s` this is row masking,
    /// and masked rows are exactly zero (not merely small).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a, "scale_rows")?;
        self.check(s, "scale_rows")?;
        let (ta, ts) = (self.value(a), self.value(s));
        if !ta.is_matrix() || !ts.is_vector() || ta.rows() != ts.len() {
            return Err(Error::shape(
                "scale_rows",
                format!("{:?} scaled by {:?}", ta.shape(), ts.shape()),
            ));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let si = ts.data()[i];
            out.extend(ta.row(i).iter().map(|&av| si * av));
        }
        let rg = self.needs_grad(&[a, s]);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::ScaleRows(a, s),
            rg,
        ))
    }

    /// Copies row `i` of a matrix out as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.check(a, "row")?;
        let ta = self.value(a);
        if !ta.is_matrix() || i >= ta.rows() {
            return Err(Error::shape(
                "row",
                format!("row {i} of shape {:?}", ta.shape()),
            ));
        }
        let out = ta.row(i).to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::Row(a, i),
            rg,
        ))
    }

    /// Copies column `j` of a matrix out as a vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.check(a, "column")?;
        let ta = self.value(a);
        if !ta.is_matrix() || j >= ta.cols() {
            return Err(Error::shape(
                "column",
                format!("column {j} of shape {:?}", ta.shape()),
            ));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let out: Vec<T> = (0..r).map(|i| ta.data()[i * c + j]).collect();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Tensor::from_parts(vec![r], out), Op::Column(a, j), rg))
    }

    pub fn concat_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "concat_vec")?;
        self.check(b, "concat_vec")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_vector() || !tb.is_vector() {
            return Err(Error::shape(
                "concat_vec",
                format!("{:?} ++ {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.data().to_vec();
        out.extend_from_slice(tb.data());
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::ConcatVec(a, b),
            rg,
        ))
    }

    /// Stacks single-element tensors into a vector.
    pub fn stack_scalars(&mut self, vs: &[Var]) -> Result<Var> {
        if vs.is_empty() {
            return Err(Error::invalid("stack_scalars", "empty input list"));
        }
        let mut out = Vec::with_capacity(vs.len());
        for &v in vs {
            self.check(v, "stack_scalars")?;
            let tv = self.value(v);
            if !tv.is_scalar() {
                return Err(Error::shape(
                    "stack_scalars",
                    format!("expected scalars, got {:?}", tv.shape()),
                ));
            }
            out.push(tv.item());
        }
        let rg = self.needs_grad(vs);
        Ok(self.push(
            Tensor::from_parts(vec![vs.len()], out),
            Op::StackScalars(vs.to_vec()),
            rg,
        ))
    }

    /// Two `[k]` vectors side by side into a `[k,2]` matrix.
    pub fn stack_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "stack_cols")?;
        self.check(b, "stack_cols")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_vector() || !tb.is_vector() || ta.len() != tb.len() {
            return Err(Error::shape(
                "stack_cols",
                format!("{:?} | {:?}", ta.shape(), tb.shape()),
            ));
        }
        let k = ta.len();
        let mut out = Vec::with_capacity(k * 2);
        for i in 0..k {
            out.push(ta.data()[i]);
            out.push(tb.data()[i]);
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![k, 2], out),
            Op::StackCols(a, b),
            rg,
        ))
    }

    // ---- reductions and normalizations ------------------------------------

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "dot")?;
        self.check(b, "dot")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_vector() || !tb.is_vector() || ta.len() != tb.len() {
            return Err(Error::shape(
                "dot",
                format!("{:?} · {:?}", ta.shape(), tb.shape()),
            ));
        }
        let s = dot_slices(ta.data(), tb.data());
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sum")?;
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x, "mean")?;
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let n = T::from_f64(tx.len() as f64);
        let s = tx.data().iter().fold(T::zero(), |acc, &v| acc + v) / n;
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Stable softmax over each row of a matrix. Rows sum to one.
    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x, "row_softmax")?;
        let tx = self.value(x);
        if !tx.is_matrix() {
            return Err(Error::shape(
                "row_softmax",
                format!("expected matrix, got {:?}", tx.shape()),
            ));
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            softmax_slice(tx.row(i), &mut out[i * c..(i + 1) * c]);
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::RowSoftmax(x),
            rg,
        ))
    }

    /// Stable softmax over a vector.
    pub fn softmax_vec(&mut self, x: Var) -> Result<Var> {
        self.check(x, "softmax_vec")?;
        let tx = self.value(x);
        if !tx.is_vector() || tx.is_empty() {
            return Err(Error::shape(
                "softmax_vec",
                format!("expected non-empty vector, got {:?}", tx.shape()),
            ));
        }
        let mut out = vec![T::zero(); tx.len()];
        softmax_slice(tx.data(), &mut out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::SoftmaxVec(x),
            rg,
        ))
    }

    /// Stable log-softmax over a vector.
    pub fn log_softmax_vec(&mut self, x: Var) -> Result<Var> {
        self.check(x, "log_softmax_vec")?;
        let tx = self.value(x);
        if !tx.is_vector() || tx.is_empty() {
            return Err(Error::shape(
                "log_softmax_vec",
                format!("expected non-empty vector, got {:?}", tx.shape()),
            ));
        }
        let lse = logsumexp_slice(tx.data());
        let out: Vec<T> = tx.data().iter().map(|&v| v - lse).collect();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::LogSoftmaxVec(x),
            rg,
        ))
    }

    /// Stable `ln Σ exp(x_i)` of a vector, as a scalar node.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        self.check(x, "logsumexp")?;
        let tx = self.value(x);
        if !tx.is_vector() || tx.is_empty() {
            return Err(Error::shape(
                "logsumexp",
                format!("expected non-empty vector, got {:?}", tx.shape()),
            ));
        }
        let s = logsumexp_slice(tx.data());
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::LogSumExp(x), rg))
    }

    /// `x / ‖x‖₂`. Errors on the zero vector rather than emitting NaN.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.check(x, "l2_normalize")?;
        let tx = self.value(x);
        if !tx.is_vector() {
            return Err(Error::shape(
                "l2_normalize",
                format!("expected vector, got {:?}", tx.shape()),
            ));
        }
        let norm = dot_slices(tx.data(), tx.data()).sqrt();
        if !(norm > T::zero()) {
            return Err(Error::invalid("l2_normalize", "zero vector"));
        }
        let out: Vec<T> = tx.data().iter().map(|&v| v / norm).collect();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::L2Normalize(x),
            rg,
        ))
    }

    /// Gumbel-Softmax over each row of a logits matrix.
    ///
    /// Per row, draws one Gumbel per element (row-major draw order from
    /// `rng`), tempers `(logits + g) / tau`, and takes a stable softmax.
    /// `Hard` mode emits the one-hot argmax of that distribution — ties
    /// resolve to the lowest column index — while the backward pass uses the
    /// soft distribution in both modes, so hard selections still train the
    /// score functions that produced them.
    pub fn gumbel_softmax_rows(
        &mut self,
        logits: Var,
        tau: T,
        mode: GumbelMode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        self.check(logits, "gumbel_softmax_rows")?;
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::invalid(
                "gumbel_softmax_rows",
                format!("temperature must be positive and finite, got {tau}"),
            ));
        }
        let tx = self.value(logits);
        if !tx.is_matrix() {
            return Err(Error::shape(
                "gumbel_softmax_rows",
                format!("expected matrix, got {:?}", tx.shape()),
            ));
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut noised = vec![T::zero(); r * c];
        for (n, &x) in noised.iter_mut().zip(tx.data()) {
            *n = (x + T::from_f64(rng.gumbel())) / tau;
        }
        let mut soft = vec![T::zero(); r * c];
        for i in 0..r {
            softmax_slice(&noised[i * c..(i + 1) * c], &mut soft[i * c..(i + 1) * c]);
        }
        let soft = Tensor::from_parts(vec![r, c], soft);
        let out = match mode {
            GumbelMode::Soft => soft.clone(),
            GumbelMode::Hard => {
                let mut hard = vec![T::zero(); r * c];
                for i in 0..r {
                    let row = soft.row(i);
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    hard[i * c + best] = T::one();
                }
                Tensor::from_parts(vec![r, c], hard)
            }
        };
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(out, Op::GumbelSoftmaxRows { logits, soft, tau }, rg))
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Accumulates `∂loss/∂node` for every node the scalar `loss` depends
    /// on, replaying the tape in reverse. Leaves registered with
    /// `requires_grad` that the loss does not reach get explicit zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss, "backward")?;
        let loss_t = self.value(loss);
        if !loss_t.is_scalar() {
            return Err(Error::NonScalarLoss { len: loss_t.len() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(idx);
            let g = hi[0].as_ref().expect("checked above");
            let nodes = &self.nodes;
            let rg = |v: Var| nodes[v.0].requires_grad;
            // Accumulate `f(slot_data)` into the gradient slot for `v`.
            let into = |lo: &mut [Option<Tensor<T>>], v: Var, f: &mut dyn FnMut(&mut [T])| {
                let slot = &mut lo[v.0];
                if slot.is_none() {
                    *slot = Some(Tensor::zeros(nodes[v.0].value.shape()));
                }
                f(slot.as_mut().expect("just filled").data_mut());
            };

            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for &v in &[*a, *b] {
                        if rg(v) {
                            into(lo, v, &mut |d| axpy(d, T::one(), g.data()));
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if rg(*a) {
                        into(lo, *a, &mut |d| axpy(d, T::one(), g.data()));
                    }
                    if rg(*b) {
                        into(lo, *b, &mut |d| axpy(d, -T::one(), g.data()));
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if rg(*a) {
                        into(lo, *a, &mut |d| {
                            for ((d, &gv), &bv) in d.iter_mut().zip(g.data()).zip(vb.data()) {
                                *d = *d + gv * bv;
                            }
                        });
                    }
                    if rg(*b) {
                        into(lo, *b, &mut |d| {
                            for ((d, &gv), &av) in d.iter_mut().zip(g.data()).zip(va.data()) {
                                *d = *d + gv * av;
                            }
                        });
                    }
                }
                Op::Affine(x, m, _) => {
                    if rg(*x) {
                        let m = *m;
                        into(lo, *x, &mut |d| axpy(d, m, g.data()));
                    }
                }
                Op::Matmul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (mrows, k, n) = (va.rows(), va.cols(), vb.cols());
                    if rg(*a) {
                        into(lo, *a, &mut |d| {
                            // dA[i,p] += Σ_j g[i,j] B[p,j]
                            for i in 0..mrows {
                                let grow = g.row(i);
                                for p in 0..k {
                                    d[i * k + p] = d[i * k + p] + dot_slices(grow, vb.row(p));
                                }
                            }
                        });
                    }
                    if rg(*b) {
                        into(lo, *b, &mut |d| {
                            // dB[p,j] += Σ_i A[i,p] g[i,j]
                            for i in 0..mrows {
                                let arow = va.row(i);
                                let grow = g.row(i);
                                for (p, &aip) in arow.iter().enumerate() {
                                    let drow = &mut d[p * n..(p + 1) * n];
                                    for (dv, &gv) in drow.iter_mut().zip(grow) {
                                        *dv = *dv + aip * gv;
                                    }
                                }
                            }
                        });
                    }
                }
                Op::VecMat(x, w) => {
                    let (vx, vw) = (&nodes[x.0].value, &nodes[w.0].value);
                    if rg(*x) {
                        into(lo, *x, &mut |d| {
                            for (p, dv) in d.iter_mut().enumerate() {
                                *dv = *dv + dot_slices(vw.row(p), g.data());
                            }
                        });
                    }
                    if rg(*w) {
                        into(lo, *w, &mut |d| {
                            let n = vw.cols();
                            for (p, &xv) in vx.data().iter().enumerate() {
                                let drow = &mut d[p * n..(p + 1) * n];
                                for (dv, &gv) in drow.iter_mut().zip(g.data()) {
                                    *dv = *dv + xv * gv;
                                }
                            }
                        });
                    }
                }
                Op::MatVec(a, x) => {
                    let (va, vx) = (&nodes[a.0].value, &nodes[x.0].value);
                    if rg(*a) {
                        into(lo, *a, &mut |d| {
                            let c = va.cols();
                            for (i, &gv) in g.data().iter().enumerate() {
                                let drow = &mut d[i * c..(i + 1) * c];
                                for (dv, &xv) in drow.iter_mut().zip(vx.data()) {
                                    *dv = *dv + gv * xv;
                                }
                            }
                        });
                    }
                    if rg(*x) {
                        into(lo, *x, &mut |d| {
                            for (i, &gv) in g.data().iter().enumerate() {
                                for (dv, &av) in d.iter_mut().zip(va.row(i)) {
                                    *dv = *dv + gv * av;
                                }
                            }
                        });
                    }
                }
                Op::WeightedRowSum(a, w) => {
                    let (va, vw) = (&nodes[a.0].value, &nodes[w.0].value);
                    if rg(*a) {
                        into(lo, *a, &mut |d| {
                            let c = va.cols();
                            for (i, &wv) in vw.data().iter().enumerate() {
                                let drow = &mut d[i * c..(i + 1) * c];
                                for (dv, &gv) in drow.iter_mut().zip(g.data()) {
                                    *dv = *dv + wv * gv;
                                }
                            }
                        });
                    }
                    if rg(*w) {
                        into(lo, *w, &mut |d| {
                            for (i, dv) in d.iter_mut().enumerate() {
                                *dv = *dv + dot_slices(va.row(i), g.data());
                            }
                        });
                    }
                }
                Op::AddRowBroadcast(a, b) => {
                    if rg(*a) {
                        into(lo, *a, &mut |d| axpy(d, T::one(), g.data()));
                    }
                    if rg(*b) {
                        let c = nodes[b.0].value.len();
                        into(lo, *b, &mut |d| {
                            for (i, &gv) in g.data().iter().enumerate() {
                                d[i % c] = d[i % c] + gv;
                            }
                        });
                    }
                }
                Op::ScaleRows(a, s) => {
                    let (va, vs) = (&nodes[a.0].value, &nodes[s.0].value);
                    let c = va.cols();
                    if rg(*a) {
                        into(lo, *a, &mut |d| {
                            for (i, &sv) in vs.data().iter().enumerate() {
                                let drow = &mut d[i * c..(i + 1) * c];
                                for (dv, &gv) in drow.iter_mut().zip(g.row(i)) {
                                    *dv = *dv + sv * gv;
                                }
                            }
                        });
                    }
                    if rg(*s) {
                        into(lo, *s, &mut |d| {
                            for (i, dv) in d.iter_mut().enumerate() {
                                *dv = *dv + dot_slices(g.row(i), va.row(i));
                            }
                        });
                    }
                }
                Op::Row(a, i) => {
                    if rg(*a) {
                        let c = nodes[a.0].value.cols();
                        let i = *i;
                        into(lo, *a, &mut |d| {
                            axpy(&mut d[i * c..(i + 1) * c], T::one(), g.data());
                        });
                    }
                }
                Op::Column(a, j) => {
                    if rg(*a) {
                        let c = nodes[a.0].value.cols();
                        let j = *j;
                        into(lo, *a, &mut |d| {
                            for (i, &gv) in g.data().iter().enumerate() {
                                d[i * c + j] = d[i * c + j] + gv;
                            }
                        });
                    }
                }
                Op::ConcatVec(a, b) => {
                    let na = nodes[a.0].value.len();
                    if rg(*a) {
                        into(lo, *a, &mut |d| axpy(d, T::one(), &g.data()[..na]));
                    }
                    if rg(*b) {
                        into(lo, *b, &mut |d| axpy(d, T::one(), &g.data()[na..]));
                    }
                }
                Op::StackScalars(vs) => {
                    let vs = vs.clone();
                    for (i, v) in vs.iter().enumerate() {
                        if rg(*v) {
                            let gv = g.data()[i];
                            into(lo, *v, &mut |d| d[0] = d[0] + gv);
                        }
                    }
                }
                Op::StackCols(a, b) => {
                    if rg(*a) {
                        into(lo, *a, &mut |d| {
                            for (k, dv) in d.iter_mut().enumerate() {
                                *dv = *dv + g.data()[k * 2];
                            }
                        });
                    }
                    if rg(*b) {
                        into(lo, *b, &mut |d| {
                            for (k, dv) in d.iter_mut().enumerate() {
                                *dv = *dv + g.data()[k * 2 + 1];
                            }
                        });
                    }
                }
                Op::RowSoftmax(x) => {
                    if rg(*x) {
                        let y = &self.nodes[idx].value;
                        let c = y.cols();
                        into(lo, *x, &mut |d| {
                            for i in 0..y.rows() {
                                softmax_vjp(y.row(i), g.row(i), &mut d[i * c..(i + 1) * c], T::one());
                            }
                        });
                    }
                }
                Op::SoftmaxVec(x) => {
                    if rg(*x) {
                        let y = &self.nodes[idx].value;
                        into(lo, *x, &mut |d| {
                            softmax_vjp(y.data(), g.data(), d, T::one());
                        });
                    }
                }
                Op::LogSoftmaxVec(x) => {
                    if rg(*x) {
                        let y = &self.nodes[idx].value;
                        let gsum = g.data().iter().fold(T::zero(), |acc, &v| acc + v);
                        into(lo, *x, &mut |d| {
                            for ((dv, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                                *dv = *dv + gv - yv.exp() * gsum;
                            }
                        });
                    }
                }
                Op::LogFloor(x, floor) => {
                    if rg(*x) {
                        let vx = &nodes[x.0].value;
                        let floor = *floor;
                        into(lo, *x, &mut |d| {
                            for ((dv, &gv), &xv) in d.iter_mut().zip(g.data()).zip(vx.data()) {
                                if xv > floor {
                                    *dv = *dv + gv / xv;
                                }
                            }
                        });
                    }
                }
                Op::Sigmoid(x) => {
                    if rg(*x) {
                        let y = &self.nodes[idx].value;
                        into(lo, *x, &mut |d| {
                            for ((dv, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                                *dv = *dv + gv * yv * (T::one() - yv);
                            }
                        });
                    }
                }
                Op::Tanh(x) => {
                    if rg(*x) {
                        let y = &self.nodes[idx].value;
                        into(lo, *x, &mut |d| {
                            for ((dv, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                                *dv = *dv + gv * (T::one() - yv * yv);
                            }
                        });
                    }
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let g0 = g.item();
                    if rg(*a) {
                        into(lo, *a, &mut |d| axpy(d, g0, vb.data()));
                    }
                    if rg(*b) {
                        into(lo, *b, &mut |d| axpy(d, g0, va.data()));
                    }
                }
                Op::Sum(x) => {
                    if rg(*x) {
                        let g0 = g.item();
                        into(lo, *x, &mut |d| {
                            for dv in d.iter_mut() {
                                *dv = *dv + g0;
                            }
                        });
                    }
                }
                Op::Mean(x) => {
                    if rg(*x) {
                        let n = T::from_f64(nodes[x.0].value.len() as f64);
                        let g0 = g.item() / n;
                        into(lo, *x, &mut |d| {
                            for dv in d.iter_mut() {
                                *dv = *dv + g0;
                            }
                        });
                    }
                }
                Op::LogSumExp(x) => {
                    if rg(*x) {
                        let vx = &nodes[x.0].value;
                        let mut p = vec![T::zero(); vx.len()];
                        softmax_slice(vx.data(), &mut p);
                        let g0 = g.item();
                        into(lo, *x, &mut |d| axpy(d, g0, &p));
                    }
                }
                Op::L2Normalize(x) => {
                    if rg(*x) {
                        let vx = &nodes[x.0].value;
                        let y = &self.nodes[idx].value;
                        let norm = dot_slices(vx.data(), vx.data()).sqrt();
                        let yg = dot_slices(y.data(), g.data());
                        into(lo, *x, &mut |d| {
                            for ((dv, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                                *dv = *dv + (gv - yv * yg) / norm;
                            }
                        });
                    }
                }
                Op::GumbelSoftmaxRows { logits, soft, tau } => {
                    if rg(*logits) {
                        let c = soft.cols();
                        let inv_tau = T::one() / *tau;
                        into(lo, *logits, &mut |d| {
                            for i in 0..soft.rows() {
                                softmax_vjp(soft.row(i), g.row(i), &mut d[i * c..(i + 1) * c], inv_tau);
                            }
                        });
                    }
                }
            }
        }

        // Parameters the loss never touched still deserve a well-defined
        // (zero) gradient so optimizers can iterate uniformly.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }

        Ok(Gradients { grads })
    }
}

// ---- slice kernels --------------------------------------------------------

#[inline]
fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

/// `d += alpha * x`, element-wise.
#[inline]
fn axpy<T: Scalar>(d: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(d.len(), x.len());
    for (dv, &xv) in d.iter_mut().zip(x) {
        *dv = *dv + alpha * xv;
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

/// Max-shifted softmax of `xs` into `out`.
fn softmax_slice<T: Scalar>(xs: &[T], out: &mut [T]) {
    let m = xs.iter().fold(xs[0], |acc, &v| if v > acc { v } else { acc });
    let mut z = T::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        let e = (x - m).exp();
        *o = e;
        z = z + e;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
}

fn logsumexp_slice<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().fold(xs[0], |acc, &v| if v > acc { v } else { acc });
    let mut z = T::zero();
    for &x in xs {
        z = z + (x - m).exp();
    }
    m + z.ln()
}

/// `d += scale * y ∘ (g − ⟨g, y⟩)` — the softmax vector–Jacobian product.
fn softmax_vjp<T: Scalar>(y: &[T], g: &[T], d: &mut [T], scale: T) {
    let s = dot_slices(g, y);
    for ((dv, &yv), &gv) in d.iter_mut().zip(y).zip(g) {
        *dv = *dv + scale * yv * (gv - s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(data: &[f64]) -> Tensor<f64> {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient_by_hand() {
        // d(x*x)/dx at x=3 is 6.
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_leaves_absent_from_gradients() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 5.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let unused = tape.leaf(t64(&[1.0, 2.0]), true);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t64(&[1.0, 2.0]), true);
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { len: 2 })
        ));
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let mut other: Tape<f64> = Tape::new();
        let a = other.leaf(Tensor::scalar(1.0), true);
        let b = other.leaf(Tensor::scalar(1.0), true);
        let foreign = other.mul(a, b).unwrap();

        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0), true);
        assert!(matches!(
            tape.add(x, foreign),
            Err(Error::DanglingNode { .. })
        ));
    }

    #[test]
    fn matmul_forward_by_hand() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let b = tape.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap(), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(
            Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap(),
            false,
        );
        let y = tape.row_softmax(x).unwrap();
        let v = tape.value(y).clone();
        assert_eq!(v.row(0), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        for i in 0..2 {
            let s: f64 = v.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }

        // Shifting a row by a constant leaves its softmax unchanged.
        let shifted = tape.leaf(
            Tensor::matrix(2, 3, vec![100.0, 100.0, 100.0, 11.0, 12.0, 13.0]).unwrap(),
            false,
        );
        let y2 = tape.row_softmax(shifted).unwrap();
        let v2 = tape.value(y2);
        for (a, b) in v.data().iter().zip(v2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_two_zeros_is_half_half() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t64(&[0.0, 0.0]), false);
        let y = tape.softmax_vec(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn gumbel_hard_rows_are_one_hot() {
        let mut tape: Tape<f32> = Tape::new();
        let mut rng = RngStream::new(11, "gumbel-onehot");
        let logits = tape.leaf(
            Tensor::matrix(4, 2, vec![0.3, -0.7, 2.0, 1.0, -1.0, -1.0, 0.0, 5.0]).unwrap(),
            true,
        );
        let sel = tape
            .gumbel_softmax_rows(logits, 1.0, GumbelMode::Hard, &mut rng)
            .unwrap();
        for i in 0..4 {
            let row = tape.value(sel).row(i).to_vec();
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
            assert_eq!(row.iter().sum::<f32>(), 1.0);
        }
    }

    #[test]
    fn gumbel_hard_has_nonzero_straight_through_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = RngStream::new(3, "gumbel-st");
        let logits = tape.leaf(
            Tensor::matrix(3, 2, vec![0.2, -0.2, 0.5, 0.1, -0.3, 0.9]).unwrap(),
            true,
        );
        let sel = tape
            .gumbel_softmax_rows(logits, 1.0, GumbelMode::Hard, &mut rng)
            .unwrap();
        // An asymmetric weighting so the VJP cannot cancel to zero.
        let w = tape.constant(
            Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 2.0]).unwrap(),
        );
        let prod = tape.mul(sel, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gl = grads.get(logits).unwrap();
        assert!(
            gl.data().iter().any(|&v| v.abs() > 1e-6),
            "straight-through gradient vanished: {:?}",
            gl.data()
        );
    }

    #[test]
    fn gumbel_selection_frequency_follows_probabilities() {
        // Hard selections follow softmax(logits): with logits = ln p, the
        // first column is chosen with probability p.
        for &p in &[0.5f64, 0.7, 0.9] {
            let mut rng = RngStream::new(77, "gumbel-law");
            let logits = Tensor::matrix(1, 2, vec![p.ln(), (1.0 - p).ln()]).unwrap();
            let n = 10_000;
            let mut hits = 0;
            for _ in 0..n {
                let mut tape: Tape<f64> = Tape::new();
                let l = tape.constant(logits.clone());
                let sel = tape
                    .gumbel_softmax_rows(l, 1.0, GumbelMode::Hard, &mut rng)
                    .unwrap();
                if tape.value(sel).get2(0, 0) == 1.0 {
                    hits += 1;
                }
            }
            let freq = hits as f64 / n as f64;
            assert!(
                (freq - p).abs() < 0.015,
                "p={p}: observed frequency {freq}"
            );
        }
    }

    #[test]
    fn gumbel_extreme_logits_pin_the_argmax() {
        // logits (+10, -10): the first column wins essentially always —
        // the Gumbel-argmax law puts the alternative below 1e-8.
        let mut rng = RngStream::new(5, "gumbel-extreme");
        let n = 10_000;
        let mut hits = 0;
        for _ in 0..n {
            let mut tape: Tape<f64> = Tape::new();
            let l = tape.constant(Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap());
            let sel = tape
                .gumbel_softmax_rows(l, 1.0, GumbelMode::Hard, &mut rng)
                .unwrap();
            if tape.value(sel).get2(0, 0) == 1.0 {
                hits += 1;
            }
        }
        assert!(hits as f64 / n as f64 > 0.999, "hits {hits}/{n}");
    }

    #[test]
    fn gumbel_high_temperature_flattens_soft_rows() {
        let mut rng = RngStream::new(21, "gumbel-hot");
        let mut tape: Tape<f64> = Tape::new();
        let l = tape.constant(Tensor::matrix(1, 2, vec![3.0, -2.0]).unwrap());
        let sel = tape
            .gumbel_softmax_rows(l, 1000.0, GumbelMode::Soft, &mut rng)
            .unwrap();
        let row = tape.value(sel).row(0);
        assert!((row[0] - 0.5).abs() < 1e-2, "row {row:?}");
        assert!((row[1] - 0.5).abs() < 1e-2, "row {row:?}");
    }

    #[test]
    fn gumbel_rejects_bad_temperature() {
        let mut rng = RngStream::new(1, "gumbel-domain");
        let mut tape: Tape<f64> = Tape::new();
        let l = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert!(tape
            .gumbel_softmax_rows(l, 0.0, GumbelMode::Hard, &mut rng)
            .is_err());
        assert!(tape
            .gumbel_softmax_rows(l, -1.0, GumbelMode::Soft, &mut rng)
            .is_err());
    }

    #[test]
    fn masked_rows_reconstruct_exactly() {
        // scale_rows with complementary 0/1 masks splits and reassembles a
        // matrix bit-exactly.
        let mut tape: Tape<f32> = Tape::new();
        let v = tape.leaf(
            Tensor::matrix(3, 2, vec![0.1, -0.2, 3.0e-7, 4.0, -5.5, 6.25]).unwrap(),
            false,
        );
        let m0 = tape.constant(t32(&[1.0, 0.0, 1.0]));
        let m1 = tape.constant(t32(&[0.0, 1.0, 0.0]));
        let a = tape.scale_rows(v, m0).unwrap();
        let b = tape.scale_rows(v, m1).unwrap();
        let back = tape.add(a, b).unwrap();
        assert_eq!(tape.value(back), tape.value(v));
    }

    fn t32(data: &[f32]) -> Tensor<f32> {
        Tensor::vector(data.to_vec()).unwrap()
    }
}
