//! Linear and one-hidden-layer ReLU classifiers with exact gradients.
//!
//! Every model exposes class scores `f(x) ∈ R^c` and predicts by argmax with
//! ties going to the lowest class index. A binary linear model scores the two
//! classes as `(wᵀx + b, 0)`, so class index 0 is the label `+1` and the
//! prediction is `+1` exactly when `wᵀx + b >= 0`.
//!
//! Gradients are computed in batches: a forward pass caches the
//! pre-activations, and [`Model::backward`] pulls a score-space gradient back
//! to every parameter tensor (and optionally to the inputs). The ReLU
//! derivative at 0 is taken as 0.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{LabeledDataset, Task};
use crate::error::{invalid, shape_err};
use crate::ndops::{argmax, gemm, matmul, norm, Matrix, Op, RngStream, Vector};
use crate::objectives::{softmax_cross_entropy, MarginLoss};
use crate::Result;

/// Default hidden width of the MLP.
pub const DEFAULT_HIDDEN: usize = 1024;

/// Binary linear classifier `sign(wᵀx + b)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BinaryLinear {
    pub w: Vector,
    pub bias: Option<f64>,
}

/// Multiclass linear classifier `W x + b`, `W` is `c × d`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearParams {
    pub weights: Matrix,
    pub bias: Option<Vector>,
}

/// `W2 · relu(W1 x + b1) + b2` with `W1: h × d`, `W2: c × h`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Option<Vector>,
    pub w2: Matrix,
    pub b2: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Model {
    Binary(BinaryLinear),
    Linear(LinearParams),
    Mlp(MlpParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ModelKind {
    BinaryLinear,
    Linear,
    Mlp { hidden: usize },
}

/// Single-example forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    /// Class scores, one per class.
    pub logits: Vector,
    /// Feature map Φ(x): the hidden activations of an MLP, `x` itself for
    /// linear models.
    pub features: Vector,
    /// Hidden pre-activations (MLP only).
    pub pre_activations: Option<Vector>,
    /// Predicted label (`±1` for binary models, class index otherwise).
    pub prediction: i32,
}

/// Batched forward pass; row `i` belongs to input row `i`.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub pre: Option<Matrix>,
    pub hidden: Option<Matrix>,
    pub logits: Matrix,
}

/// Scalar whose gradient is requested from [`Model::grad_params`] and
/// [`Model::grad_input`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    /// Training loss at label `y`: logistic for binary models, softmax
    /// cross-entropy otherwise.
    Loss,
    /// Score gap `f_top(x) - f_other(x)` between two class indices.
    ClassGap { top: usize, other: usize },
    /// A constant; its gradient is zero.
    Constant,
}

fn uniform_fill(rng: &mut RngStream, len: usize, bound: f64) -> Vector {
    (0..len).map(|_| rng.uniform_in(-bound, bound)).collect()
}

impl Model {
    /// Fresh parameters drawn uniformly from `(-a, a)`, `a = 1/sqrt(fan_in)`.
    pub fn init(kind: ModelKind, input_dim: usize, classes: usize, bias: bool, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid!("input dimension must be positive"));
        }
        let mut rng = RngStream::new(seed);
        let a_in = 1.0 / libm::sqrt(input_dim as f64);
        Ok(match kind {
            ModelKind::BinaryLinear => {
                let w = uniform_fill(&mut rng, input_dim, a_in);
                let bias = bias.then(|| rng.uniform_in(-a_in, a_in));
                Model::Binary(BinaryLinear { w, bias })
            }
            ModelKind::Linear => {
                if classes < 2 {
                    return Err(invalid!("need at least two classes, got {classes}"));
                }
                let weights = Matrix::from_vec(classes, input_dim, uniform_fill(&mut rng, classes * input_dim, a_in))?;
                let bias = bias.then(|| uniform_fill(&mut rng, classes, a_in));
                Model::Linear(LinearParams { weights, bias })
            }
            ModelKind::Mlp { hidden } => {
                if classes < 2 || hidden == 0 {
                    return Err(invalid!("MLP needs >= 2 classes and a nonempty hidden layer"));
                }
                let a_h = 1.0 / libm::sqrt(hidden as f64);
                let w1 = Matrix::from_vec(hidden, input_dim, uniform_fill(&mut rng, hidden * input_dim, a_in))?;
                let b1 = bias.then(|| uniform_fill(&mut rng, hidden, a_in));
                let w2 = Matrix::from_vec(classes, hidden, uniform_fill(&mut rng, classes * hidden, a_h))?;
                let b2 = bias.then(|| uniform_fill(&mut rng, classes, a_h));
                Model::Mlp(MlpParams { w1, b1, w2, b2 })
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Binary(_) => ModelKind::BinaryLinear,
            Model::Linear(_) => ModelKind::Linear,
            Model::Mlp(p) => ModelKind::Mlp { hidden: p.w1.rows() },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Binary(p) => p.w.len(),
            Model::Linear(p) => p.weights.cols(),
            Model::Mlp(p) => p.w1.cols(),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Model::Binary(_) => 2,
            Model::Linear(p) => p.weights.rows(),
            Model::Mlp(p) => p.w2.rows(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Binary(_) => Task::Binary,
            _ => Task::Multiclass { classes: self.class_count() },
        }
    }

    /// Maps a dataset label to a class index.
    pub fn class_index(&self, label: i32) -> usize {
        match self {
            Model::Binary(_) => usize::from(label != 1),
            _ => label as usize,
        }
    }

    /// Maps a class index back to a dataset label.
    pub fn label_of(&self, class: usize) -> i32 {
        match self {
            Model::Binary(_) => {
                if class == 0 {
                    1
                } else {
                    -1
                }
            }
            _ => class as i32,
        }
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let finite = self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(invalid!("model parameters contain non-finite values"));
        }
        match self {
            Model::Binary(_) => Ok(()),
            Model::Linear(p) => match &p.bias {
                Some(b) if b.len() != p.weights.rows() => Err(shape_err!("bias length {} for {} classes", b.len(), p.weights.rows())),
                _ => Ok(()),
            },
            Model::Mlp(p) => {
                if p.w2.cols() != p.w1.rows() {
                    return Err(shape_err!("W2 has {} columns but W1 has {} rows", p.w2.cols(), p.w1.rows()));
                }
                if p.b1.as_ref().is_some_and(|b| b.len() != p.w1.rows()) || p.b2.as_ref().is_some_and(|b| b.len() != p.w2.rows()) {
                    return Err(shape_err!("MLP bias lengths do not match layer widths"));
                }
                Ok(())
            }
        }
    }

    /// All parameter tensors, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Model::Binary(p) => {
                let mut t = vec![p.w.as_slice()];
                if let Some(b) = &p.bias {
                    t.push(core::slice::from_ref(b));
                }
                t
            }
            Model::Linear(p) => {
                let mut t = vec![p.weights.as_slice()];
                if let Some(b) = &p.bias {
                    t.push(b.as_slice());
                }
                t
            }
            Model::Mlp(p) => {
                let mut t = vec![p.w1.as_slice()];
                if let Some(b) = &p.b1 {
                    t.push(b.as_slice());
                }
                t.push(p.w2.as_slice());
                if let Some(b) = &p.b2 {
                    t.push(b.as_slice());
                }
                t
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Binary(p) => {
                let mut t = vec![p.w.as_mut_slice()];
                if let Some(b) = &mut p.bias {
                    t.push(core::slice::from_mut(b));
                }
                t
            }
            Model::Linear(p) => {
                let mut t = vec![p.weights.as_mut_slice()];
                if let Some(b) = &mut p.bias {
                    t.push(b.as_mut_slice());
                }
                t
            }
            Model::Mlp(p) => {
                let mut t = vec![p.w1.as_mut_slice()];
                if let Some(b) = &mut p.b1 {
                    t.push(b.as_mut_slice());
                }
                t.push(p.w2.as_mut_slice());
                if let Some(b) = &mut p.b2 {
                    t.push(b.as_mut_slice());
                }
                t
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same layout, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// The weight matrices (biases excluded), input layer first.
    pub fn weight_matrices(&self) -> Vec<&Matrix> {
        match self {
            Model::Binary(_) => Vec::new(),
            Model::Linear(p) => vec![&p.weights],
            Model::Mlp(p) => vec![&p.w1, &p.w2],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord> {
        let batch = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let fwd = self.forward_batch(&batch)?;
        let logits = fwd.logits.row(0).to_vec();
        let prediction = self.label_of(argmax(&logits));
        Ok(ForwardRecord {
            features: fwd.hidden.as_ref().map_or_else(|| x.to_vec(), |h| h.row(0).to_vec()),
            pre_activations: fwd.pre.map(|p| p.row(0).to_vec()),
            logits,
            prediction,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<i32> {
        Ok(self.forward(x)?.prediction)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<BatchForward> {
        if x.cols() != self.input_dim() {
            return Err(shape_err!("input has {} features, model expects {}", x.cols(), self.input_dim()));
        }
        match self {
            Model::Binary(p) => {
                let mut logits = Matrix::zeros(x.rows(), 2);
                let b = p.bias.unwrap_or(0.0);
                for (i, row) in x.row_iter().enumerate() {
                    logits.set(i, 0, crate::ndops::dot(&p.w, row) + b);
                }
                Ok(BatchForward { pre: None, hidden: None, logits })
            }
            Model::Linear(p) => {
                let mut logits = matmul(x, Op::N, &p.weights, Op::T)?;
                if let Some(b) = &p.bias {
                    logits.add_row_vector(b);
                }
                Ok(BatchForward { pre: None, hidden: None, logits })
            }
            Model::Mlp(p) => {
                let mut pre = matmul(x, Op::N, &p.w1, Op::T)?;
                if let Some(b) = &p.b1 {
                    pre.add_row_vector(b);
                }
                let mut hidden = pre.clone();
                hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                let mut logits = matmul(&hidden, Op::N, &p.w2, Op::T)?;
                if let Some(b) = &p.b2 {
                    logits.add_row_vector(b);
                }
                Ok(BatchForward { pre: Some(pre), hidden: Some(hidden), logits })
            }
        }
    }

    /// Predicted labels for every row of `x`.
    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<i32>> {
        let fwd = self.forward_batch(x)?;
        Ok(fwd.logits.row_iter().map(|l| self.label_of(argmax(l))).collect())
    }

    /// Fraction of misclassified examples, evaluated in chunks.
    pub fn error_rate(&self, ds: &LabeledDataset) -> Result<f64> {
        const CHUNK: usize = 1000;
        let mut wrong = 0usize;
        let n = ds.len();
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let preds = self.predict_batch(&ds.features().select_rows(&idx))?;
            wrong += preds.iter().zip(&ds.labels()[start..end]).filter(|(p, y)| p != y).count();
            start = end;
        }
        Ok(wrong as f64 / n as f64)
    }

    /// Pulls the score-space gradient `d_logits` (batch × c) back through the
    /// network.
    ///
    /// Parameter gradients are accumulated into `grads` (same layout as
    /// `self`). `d_hidden` adds a gradient w.r.t. the MLP hidden activations
    /// (or w.r.t. the inputs for linear models). Returns the gradient w.r.t.
    /// the inputs when `want_input` is set.
    pub fn backward(
        &self,
        x: &Matrix,
        fwd: &BatchForward,
        d_logits: &Matrix,
        d_hidden: Option<&Matrix>,
        grads: Option<&mut Model>,
        want_input: bool,
    ) -> Result<Option<Matrix>> {
        if d_logits.shape() != fwd.logits.shape() || x.rows() != d_logits.rows() {
            return Err(shape_err!("backward: gradient shape {:?} does not match forward pass", d_logits.shape()));
        }
        match (self, grads) {
            (Model::Binary(p), g) => {
                let ds: Vec<f64> = d_logits.row_iter().map(|r| r[0]).collect();
                if let Some(Model::Binary(g)) = g {
                    let dw = crate::ndops::matvec_t(x, &ds)?;
                    crate::ndops::axpy(1.0, &dw, &mut g.w);
                    if let Some(b) = &mut g.bias {
                        *b += ds.iter().sum::<f64>();
                    }
                }
                if !want_input {
                    return Ok(None);
                }
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for (i, &s) in ds.iter().enumerate() {
                    crate::ndops::axpy(s, &p.w, dx.row_mut(i));
                }
                if let Some(extra) = d_hidden {
                    crate::ndops::axpy(1.0, extra.as_slice(), dx.as_mut_slice());
                }
                Ok(Some(dx))
            }
            (Model::Linear(p), g) => {
                if let Some(Model::Linear(g)) = g {
                    gemm(1.0, d_logits, Op::T, x, Op::N, 1.0, &mut g.weights)?;
                    if let Some(b) = &mut g.bias {
                        crate::ndops::axpy(1.0, &d_logits.column_sums(), b);
                    }
                }
                if !want_input {
                    return Ok(None);
                }
                let mut dx = matmul(d_logits, Op::N, &p.weights, Op::N)?;
                if let Some(extra) = d_hidden {
                    crate::ndops::axpy(1.0, extra.as_slice(), dx.as_mut_slice());
                }
                Ok(Some(dx))
            }
            (Model::Mlp(p), g) => {
                let (Some(pre), Some(hidden)) = (&fwd.pre, &fwd.hidden) else {
                    return Err(shape_err!("MLP backward needs cached activations"));
                };
                let mut g = g.map(|g| match g {
                    Model::Mlp(g) => Some(g),
                    _ => None,
                });
                if let Some(Some(g)) = g.as_mut() {
                    gemm(1.0, d_logits, Op::T, hidden, Op::N, 1.0, &mut g.w2)?;
                    if let Some(b) = &mut g.b2 {
                        crate::ndops::axpy(1.0, &d_logits.column_sums(), b);
                    }
                }
                let mut d_pre = matmul(d_logits, Op::N, &p.w2, Op::N)?;
                if let Some(extra) = d_hidden {
                    crate::ndops::axpy(1.0, extra.as_slice(), d_pre.as_mut_slice());
                }
                for (d, &z) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                if let Some(Some(g)) = g.as_mut() {
                    gemm(1.0, &d_pre, Op::T, x, Op::N, 1.0, &mut g.w1)?;
                    if let Some(b) = &mut g.b1 {
                        crate::ndops::axpy(1.0, &d_pre.column_sums(), b);
                    }
                }
                if !want_input {
                    return Ok(None);
                }
                Ok(Some(matmul(&d_pre, Op::N, &p.w1, Op::N)?))
            }
        }
    }

    fn head_logit_grad(&self, logits: &[f64], y: Option<i32>, head: Head) -> Result<Vector> {
        let c = logits.len();
        let mut g = vec![0.0; c];
        match head {
            Head::Constant => {}
            Head::ClassGap { top, other } => {
                if top >= c || other >= c || top == other {
                    return Err(invalid!("class gap ({top}, {other}) is invalid for {c} classes"));
                }
                g[top] = 1.0;
                g[other] = -1.0;
            }
            Head::Loss => {
                let y = y.ok_or_else(|| invalid!("the loss head needs a label"))?;
                let class = self.class_index(y);
                match self {
                    Model::Binary(_) => {
                        let t = y as f64 * logits[0];
                        g[0] = y as f64 * MarginLoss::Logistic.derivative(t);
                    }
                    _ => {
                        softmax_cross_entropy(logits, class, &mut g);
                    }
                }
            }
        }
        Ok(g)
    }

    /// Value of `head` at `(x, y)`.
    pub fn head_value(&self, x: &[f64], y: i32, head: Head) -> Result<f64> {
        let fwd = self.forward(x)?;
        Ok(match head {
            Head::Constant => 0.0,
            Head::ClassGap { top, other } => fwd.logits[top] - fwd.logits[other],
            Head::Loss => match self {
                Model::Binary(_) => MarginLoss::Logistic.value(y as f64 * fwd.logits[0]),
                _ => softmax_cross_entropy(&fwd.logits, self.class_index(y), &mut vec![0.0; fwd.logits.len()]),
            },
        })
    }

    /// Exact gradient of `head` w.r.t. every parameter tensor.
    pub fn grad_params(&self, x: &[f64], y: i32, head: Head) -> Result<Model> {
        let xb = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let fwd = self.forward_batch(&xb)?;
        let g = self.head_logit_grad(fwd.logits.row(0), Some(y), head)?;
        let d_logits = Matrix::from_vec(1, g.len(), g)?;
        let mut grads = self.zeros_like();
        self.backward(&xb, &fwd, &d_logits, None, Some(&mut grads), false)?;
        Ok(grads)
    }

    /// Exact gradient of `head` w.r.t. the input `x`.
    ///
    /// `y` is only consulted by [`Head::Loss`].
    pub fn grad_input(&self, x: &[f64], y: Option<i32>, head: Head) -> Result<Vector> {
        let xb = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let fwd = self.forward_batch(&xb)?;
        let g = self.head_logit_grad(fwd.logits.row(0), y, head)?;
        let d_logits = Matrix::from_vec(1, g.len(), g)?;
        let dx = self.backward(&xb, &fwd, &d_logits, None, None, true)?.expect("input gradient requested");
        Ok(dx.into_vec())
    }

    /// Per-row training loss and its input gradient, for attacks.
    pub fn loss_input_grad_batch(&self, x: &Matrix, labels: &[i32]) -> Result<(Vec<f64>, Matrix)> {
        let fwd = self.forward_batch(x)?;
        let c = fwd.logits.cols();
        let mut d_logits = Matrix::zeros(x.rows(), c);
        let mut losses = Vec::with_capacity(x.rows());
        for (i, &y) in labels.iter().enumerate() {
            let logits = fwd.logits.row(i);
            match self {
                Model::Binary(_) => {
                    let t = y as f64 * logits[0];
                    losses.push(MarginLoss::Logistic.value(t));
                    d_logits.set(i, 0, y as f64 * MarginLoss::Logistic.derivative(t));
                }
                _ => {
                    let class = self.class_index(y);
                    losses.push(softmax_cross_entropy(logits, class, d_logits.row_mut(i)));
                }
            }
        }
        let dx = self.backward(x, &fwd, &d_logits, None, None, true)?.expect("input gradient requested");
        Ok((losses, dx))
    }

    /// `‖∇ₓ (f_top − f_k)(p)‖` for every row `p` of `points` and every class
    /// `k` (column `top` is 0).
    pub fn gap_gradient_norms(&self, points: &Matrix, top: usize) -> Result<Matrix> {
        let c = self.class_count();
        if top >= c {
            return Err(invalid!("class {top} out of range for {c} classes"));
        }
        if points.cols() != self.input_dim() {
            return Err(shape_err!("points have {} features, model expects {}", points.cols(), self.input_dim()));
        }
        let s = points.rows();
        let mut out = Matrix::zeros(s, c);
        match self {
            Model::Binary(p) => {
                let n = norm(&p.w);
                for i in 0..s {
                    out.set(i, 1 - top, n);
                }
            }
            Model::Linear(p) => {
                let wt = p.weights.row(top);
                for k in (0..c).filter(|&k| k != top) {
                    let n = norm(&crate::ndops::sub(wt, p.weights.row(k)));
                    for i in 0..s {
                        out.set(i, k, n);
                    }
                }
            }
            Model::Mlp(p) => {
                let h = p.w1.rows();
                let mut pre = matmul(points, Op::N, &p.w1, Op::T)?;
                if let Some(b) = &p.b1 {
                    pre.add_row_vector(b);
                }
                let others: Vec<usize> = (0..c).filter(|&k| k != top).collect();
                // Row (j, i) of `q` is mask(p_i) ⊙ (w2_top − w2_k_j).
                let mut q = Matrix::zeros(others.len() * s, h);
                for (j, &k) in others.iter().enumerate() {
                    let diff = crate::ndops::sub(p.w2.row(top), p.w2.row(k));
                    for i in 0..s {
                        let mask = pre.row(i);
                        let row = q.row_mut(j * s + i);
                        for ((r, &z), &d) in row.iter_mut().zip(mask).zip(&diff) {
                            *r = if z > 0.0 { d } else { 0.0 };
                        }
                    }
                }
                let grads = matmul(&q, Op::N, &p.w1, Op::N)?;
                for (j, &k) in others.iter().enumerate() {
                    for i in 0..s {
                        out.set(i, k, norm(grads.row(j * s + i)));
                    }
                }
            }
        }
        Ok(out)
    }

    /// `self ← self + alpha · other`; layouts must match.
    pub fn axpy(&mut self, alpha: f64, other: &Model) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() || src.iter().zip(&dst).any(|(a, b)| a.len() != b.len()) {
            return Err(shape_err!("parameter layouts differ"));
        }
        for (d, s) in dst.iter_mut().zip(&src) {
            crate::ndops::axpy(alpha, s, d);
        }
        Ok(())
    }
}
