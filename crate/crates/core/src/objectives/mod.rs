//! Losses, the truncated average-margin regularizer, the orthogonal penalty
//! and a grid-based Fisher-consistency checker.

mod fisher;
mod loss;

use alloc::vec;
use alloc::vec::Vec;

pub use fisher::{fisher_check, AlphaGrid, ConsistencyReport, EtaVerdict};
pub use loss::{softmax, softmax_cross_entropy, MarginLoss};

use crate::error::{invalid, shape_err};
use crate::models::Model;
use crate::ndops::{dot, gemm, matmul, Matrix, Op, Vector};
use crate::{Error, Result};

/// Clamp of `t` to `[0, tau]`.
pub fn truncate(t: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(t.max(0.0).min(tau))
}

/// Subgradient of [`truncate`]: 1 strictly inside `(0, tau)`, 0 elsewhere.
pub fn truncate_slope(t: f64, tau: f64) -> f64 {
    if t > 0.0 && t < tau {
        1.0
    } else {
        0.0
    }
}

/// `(H_tau(t), H_0(t))` with `H_s(t) = max(0, s - t)`.
///
/// `H_tau(t) - H_0(t) = tau - truncate(t, tau)` for every `t`.
pub fn dc_pair(t: f64, tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    Ok(((tau - t).max(0.0), (-t).max(0.0)))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(invalid!("tau must be finite and nonnegative, got {tau}"))
    }
}

/// Weights of the margin regularizer and the orthogonal penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub tau: f64,
    pub beta: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self { lambda: 0.1, tau: 5.0, beta: 1e-3 }
    }
}

impl RegularizerConfig {
    /// All terms off: plain loss minimization.
    pub const NONE: Self = Self { lambda: 0.0, tau: 0.0, beta: 0.0 };

    pub fn new(lambda: f64, tau: f64, beta: f64) -> Result<Self> {
        let cfg = Self { lambda, tau, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("tau", self.tau), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.lambda > 0.0 && self.tau == 0.0 {
            return Err(invalid!("tau must be positive when lambda is"));
        }
        Ok(())
    }
}

/// How per-example data terms are combined. Penalties on the weights are
/// always added once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    fn factor(self, n: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
        }
    }
}

/// `Σ φ(y wᵀx) − λ Σ [y wᵀx]_0^τ` and its gradient in `w`.
///
/// `x` holds one example per row, `y ∈ {±1}`. Only the data terms are
/// computed; keeping `w` on the unit sphere is the caller's job.
pub fn binary_regularized_objective(
    w: &[f64],
    x: &Matrix,
    y: &[i32],
    cfg: &RegularizerConfig,
    loss: MarginLoss,
    reduction: Reduction,
) -> Result<(f64, Vector)> {
    if x.rows() == 0 {
        return Err(Error::Empty("objective needs a nonempty batch"));
    }
    if x.rows() != y.len() || x.cols() != w.len() {
        return Err(shape_err!("batch {:?} with {} labels against {} weights", x.shape(), y.len(), w.len()));
    }
    cfg.validate()?;
    let scale = reduction.factor(x.rows());
    let mut value = 0.0;
    let mut coeffs = Vec::with_capacity(x.rows());
    for (row, &yi) in x.row_iter().zip(y) {
        let yf = yi as f64;
        let t = yf * dot(w, row);
        let mut v = loss.value(t);
        let mut dt = loss.derivative(t);
        if cfg.lambda > 0.0 {
            v -= cfg.lambda * t.max(0.0).min(cfg.tau);
            dt -= cfg.lambda * truncate_slope(t, cfg.tau);
        }
        value += v;
        coeffs.push(scale * dt * yf);
    }
    let grad = crate::ndops::matvec_t(x, &coeffs)?;
    Ok((scale * value, grad))
}

/// `‖W Wᵀ − I‖_F²` and its gradient `4 (W Wᵀ − I) W`.
///
/// Tall matrices go through the `Wᵀ W` form, which has the same value and
/// gradient but a smaller Gram matrix.
pub fn orthogonal_penalty(w: &Matrix) -> Result<(f64, Matrix)> {
    let (r, c) = w.shape();
    let sq_w = w.frobenius_norm() * w.frobenius_norm();
    if r <= c {
        let mut gram = matmul(w, Op::N, w, Op::T)?;
        for i in 0..r {
            gram.set(i, i, gram.get(i, i) - 1.0);
        }
        let value = crate::ndops::sq_norm(gram.as_slice());
        let grad = matmul(&gram, Op::N, w, Op::N)?.scaled(4.0);
        Ok((value, grad))
    } else {
        let gram = matmul(w, Op::T, w, Op::N)?;
        let g2 = crate::ndops::sq_norm(gram.as_slice());
        let value = (g2 - 2.0 * sq_w + r as f64).max(0.0);
        let mut grad = w.clone();
        gemm(4.0, w, Op::N, &gram, Op::N, -4.0, &mut grad)?;
        Ok((value, grad))
    }
}

/// Feature-space margin of one example: `min_{k≠y} (ŵ_y − ŵ_k)ᵀΦ` with the
/// final-layer rows normalized to unit length. Returns the gap and the
/// minimizing class (ties go to the lowest index).
pub fn feature_margin(final_layer: &Matrix, unit_norms: &[f64], features: &[f64], y: usize) -> (f64, usize) {
    let proj: Vec<f64> = (0..final_layer.rows()).map(|k| dot(final_layer.row(k), features) / unit_norms[k]).collect();
    let mut best = (f64::INFINITY, usize::MAX);
    for (k, &p) in proj.iter().enumerate() {
        if k != y && proj[y] - p < best.0 {
            best = (proj[y] - p, k);
        }
    }
    best
}

/// The full multiclass objective and its gradient in every parameter:
///
/// `Σ CE(y, f(x)) − λ Σ [min_{k≠y}(ŵ_y − ŵ_k)ᵀΦ(x)]_0^τ + β Σ_l ‖W_l W_lᵀ − I‖_F²`.
///
/// `ŵ` are the final-layer rows scaled to unit norm, Φ is the hidden layer of
/// an MLP and the input itself for a linear model. Biases enter the loss but
/// not the margin term. Examples on the wrong side of a feature-space
/// boundary drop out through the lower clamp.
pub fn multiclass_amr_objective(
    model: &Model,
    x: &Matrix,
    labels: &[i32],
    cfg: &RegularizerConfig,
    reduction: Reduction,
) -> Result<(f64, Model)> {
    if x.rows() == 0 {
        return Err(Error::Empty("objective needs a nonempty batch"));
    }
    if x.rows() != labels.len() {
        return Err(shape_err!("{} rows but {} labels", x.rows(), labels.len()));
    }
    if matches!(model, Model::Binary(_)) {
        return Err(invalid!("the multiclass objective needs a multiclass model"));
    }
    cfg.validate()?;
    let c = model.class_count();
    if let Some(&bad) = labels.iter().find(|&&y| y < 0 || y as usize >= c) {
        return Err(invalid!("label {bad} out of range for {c} classes"));
    }
    let scale = reduction.factor(x.rows());
    let fwd = model.forward_batch(x)?;
    let mut grads = model.zeros_like();

    let mut value = 0.0;
    let mut d_logits = Matrix::zeros(x.rows(), c);
    for (i, &y) in labels.iter().enumerate() {
        value += softmax_cross_entropy(fwd.logits.row(i), y as usize, d_logits.row_mut(i));
    }
    d_logits.scale(scale);

    let mut d_features: Option<Matrix> = None;
    if cfg.lambda > 0.0 {
        let (final_layer, features) = match model {
            Model::Linear(p) => (&p.weights, x),
            Model::Mlp(p) => (&p.w2, fwd.hidden.as_ref().expect("MLP caches hidden activations")),
            Model::Binary(_) => unreachable!(),
        };
        let norms: Vec<f64> = final_layer.row_iter().map(crate::ndops::norm).collect();
        if let Some(k) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Degenerate(alloc::format!("final-layer row {k} is zero")));
        }
        let mut d_final = Matrix::zeros(final_layer.rows(), final_layer.cols());
        let mut d_phi = Matrix::zeros(features.rows(), features.cols());
        let mut margin_sum = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let y = y as usize;
            let phi = features.row(i);
            let (t, k) = feature_margin(final_layer, &norms, phi, y);
            margin_sum += t.max(0.0).min(cfg.tau);
            let slope = truncate_slope(t, cfg.tau);
            if slope == 0.0 {
                continue;
            }
            let coef = -cfg.lambda * scale;
            // d t / dΦ = ŵ_y − ŵ_k
            let dphi = d_phi.row_mut(i);
            for ((d, &wy), &wk) in dphi.iter_mut().zip(final_layer.row(y)).zip(final_layer.row(k)) {
                *d += coef * (wy / norms[y] - wk / norms[k]);
            }
            // d t / dw_j = ±(Φ − ŵ_j ŵ_jᵀΦ) / ‖w_j‖
            for (j, sign) in [(y, 1.0), (k, -1.0)] {
                let wj = final_layer.row(j);
                let proj = dot(wj, phi) / (norms[j] * norms[j]);
                let factor = coef * sign / norms[j];
                for ((d, &p), &w) in d_final.row_mut(j).iter_mut().zip(phi).zip(wj) {
                    *d += factor * (p - proj * w);
                }
            }
        }
        value -= cfg.lambda * margin_sum;
        match &mut grads {
            Model::Linear(g) => crate::ndops::axpy(1.0, d_final.as_slice(), g.weights.as_mut_slice()),
            Model::Mlp(g) => crate::ndops::axpy(1.0, d_final.as_slice(), g.w2.as_mut_slice()),
            Model::Binary(_) => unreachable!(),
        }
        // For a linear model Φ is the input, so no parameter sees d_phi.
        if matches!(model, Model::Mlp(_)) {
            d_features = Some(d_phi);
        }
    }
    model.backward(x, &fwd, &d_logits, d_features.as_ref(), Some(&mut grads), false)?;
    value *= scale;

    if cfg.beta > 0.0 {
        let mut penalty_grads = Vec::new();
        for w in model.weight_matrices() {
            let (v, g) = orthogonal_penalty(w)?;
            value += cfg.beta * v;
            penalty_grads.push(g);
        }
        let targets: Vec<&mut Matrix> = match &mut grads {
            Model::Linear(g) => vec![&mut g.weights],
            Model::Mlp(g) => vec![&mut g.w1, &mut g.w2],
            Model::Binary(_) => unreachable!(),
        };
        for (t, g) in targets.into_iter().zip(&penalty_grads) {
            crate::ndops::axpy(cfg.beta, g.as_slice(), t.as_mut_slice());
        }
    }
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearParams, ModelKind};

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(-1.0, 2.0).unwrap(), 0.0);
        assert_eq!(truncate(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(truncate(3.0, 2.0).unwrap(), 2.0);
        assert!(truncate(1.0, -1.0).is_err());
        assert_eq!(truncate_slope(0.0, 2.0), 0.0);
        assert_eq!(truncate_slope(2.0, 2.0), 0.0);
        assert_eq!(truncate_slope(1.0, 2.0), 1.0);
    }

    #[test]
    fn dc_examples() {
        assert_eq!(dc_pair(1.0, 2.0).unwrap(), (1.0, 0.0));
        assert_eq!(dc_pair(-5.0, 2.0).unwrap(), (7.0, 5.0));
        let (a, b) = dc_pair(0.0, 3.0).unwrap();
        assert_eq!(a - b, 3.0 - truncate(0.0, 3.0).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(RegularizerConfig::new(0.1, 0.0, 0.0).is_err());
        assert!(RegularizerConfig::new(-1.0, 1.0, 0.0).is_err());
        assert!(RegularizerConfig::new(0.0, 0.0, 0.0).is_ok());
        assert!(RegularizerConfig::default().validate().is_ok());
    }

    #[test]
    fn binary_objective_without_regularizer_is_the_loss() {
        let x = Matrix::from_rows(&[[0.3, -0.4], [1.0, 0.5]]).unwrap();
        let w = [0.6, 0.8];
        let y = [1, -1];
        let (v, _) = binary_regularized_objective(&w, &x, &y, &RegularizerConfig::NONE, MarginLoss::Logistic, Reduction::Sum).unwrap();
        let want = MarginLoss::Logistic.value(0.6 * 0.3 - 0.8 * 0.4) + MarginLoss::Logistic.value(-(0.6 + 0.4));
        assert_eq!(v, want);
    }

    #[test]
    fn binary_interior_clamp() {
        let tau = 2.0;
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let w = [1.0, 0.0];
        let cfg = RegularizerConfig::new(1.0, tau, 0.0).unwrap();
        let x = x.scaled(tau / 2.0);
        let (v, g) = binary_regularized_objective(&w, &x, &[1], &cfg, MarginLoss::Hinge, Reduction::Sum).unwrap();
        let (v0, g0) = binary_regularized_objective(&w, &x, &[1], &RegularizerConfig::NONE, MarginLoss::Hinge, Reduction::Sum).unwrap();
        assert_eq!(v - v0, -tau / 2.0);
        assert_eq!(g[0] - g0[0], -x.get(0, 0));
        assert!(binary_regularized_objective(&w, &Matrix::zeros(0, 2), &[], &cfg, MarginLoss::Hinge, Reduction::Sum).is_err());
    }

    #[test]
    fn penalty_closed_forms() {
        let (v, g) = orthogonal_penalty(&Matrix::identity(3)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(orthogonal_penalty(&Matrix::identity(3).scaled(2.0)).unwrap().0, 27.0);
        let tall = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(orthogonal_penalty(&tall).unwrap().0 - 1.0 < 1e-15);
    }

    #[test]
    fn tall_and_wide_forms_agree() {
        let w = Model::init(ModelKind::Linear, 3, 5, false, 8).unwrap();
        let Model::Linear(p) = w else { unreachable!() };
        let (v_tall, g_tall) = orthogonal_penalty(&p.weights).unwrap();
        let t = p.weights.transpose();
        let (v_wide, g_wide) = orthogonal_penalty(&t).unwrap();
        // ‖WWᵀ − I_5‖² and ‖WᵀW − I_3‖² differ by the 2 extra unit eigenvalues.
        assert!((v_tall - (v_wide + 2.0)).abs() < 1e-12);
        let direct = {
            let mut gram = matmul(&p.weights, Op::N, &p.weights, Op::T).unwrap();
            for i in 0..5 {
                gram.set(i, i, gram.get(i, i) - 1.0);
            }
            matmul(&gram, Op::N, &p.weights, Op::N).unwrap().scaled(4.0)
        };
        for (a, b) in g_tall.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g_wide.shape(), (3, 5));
    }

    #[test]
    fn multiclass_reduces_to_cross_entropy() {
        let m = Model::init(ModelKind::Mlp { hidden: 5 }, 4, 3, true, 1).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [0.9, 0.1, 0.5, 0.0]]).unwrap();
        let labels = [2, 0];
        let (v, _) = multiclass_amr_objective(&m, &x, &labels, &RegularizerConfig::NONE, Reduction::Sum).unwrap();
        let mut want = 0.0;
        for i in 0..2 {
            let r = m.forward(x.row(i)).unwrap();
            want += softmax_cross_entropy(&r.logits, labels[i] as usize, &mut [0.0; 3]);
        }
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn multiclass_penalty_term() {
        let m = Model::Linear(LinearParams { weights: Matrix::identity(3).scaled(2.0), bias: None });
        let x = Matrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let cfg = RegularizerConfig::new(0.0, 0.0, 0.5).unwrap();
        let (v, _) = multiclass_amr_objective(&m, &x, &[0], &cfg, Reduction::Sum).unwrap();
        assert!((v - (libm::log(3.0) + 0.5 * 27.0)).abs() < 1e-12);
    }

    #[test]
    fn margin_term_ignores_shifts_orthogonal_to_active_pair() {
        // Rows are unit vectors; Φ = x. Moving x along e_3 leaves the margin
        // between classes 0 and 1 unchanged.
        let w = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let m = Model::Linear(LinearParams { weights: w, bias: None });
        let cfg = RegularizerConfig::new(1.0, 5.0, 0.0).unwrap();
        let margin = |x: [f64; 3]| {
            let xm = Matrix::from_rows(&[x]).unwrap();
            let (with, _) = multiclass_amr_objective(&m, &xm, &[0], &cfg, Reduction::Sum).unwrap();
            let (without, _) = multiclass_amr_objective(&m, &xm, &[0], &RegularizerConfig::NONE, Reduction::Sum).unwrap();
            with - without
        };
        assert!((margin([1.0, 0.0, 0.0]) - margin([1.0, 0.0, 7.0])).abs() < 1e-12);
        assert!((margin([1.0, 0.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn margin_term_uses_the_clamp_not_the_prediction() {
        // The bias makes class 1 win, but the bias-free feature gap to class 1
        // is still +0.5, so the term stays active.
        let m = Model::Linear(LinearParams { weights: Matrix::identity(2), bias: Some(vec![0.0, 10.0]) });
        let x = Matrix::from_rows(&[[1.0, 0.5]]).unwrap();
        assert_eq!(m.predict(x.row(0)).unwrap(), 1);
        let cfg = RegularizerConfig::new(2.0, 5.0, 0.0).unwrap();
        let (with, _) = multiclass_amr_objective(&m, &x, &[0], &cfg, Reduction::Sum).unwrap();
        let (without, _) = multiclass_amr_objective(&m, &x, &[0], &RegularizerConfig::NONE, Reduction::Sum).unwrap();
        assert!((with - without + 2.0 * 0.5).abs() < 1e-12);

        // A negative feature gap contributes nothing.
        let (with, _) = multiclass_amr_objective(&m, &x, &[1], &cfg, Reduction::Sum).unwrap();
        let (without, _) = multiclass_amr_objective(&m, &x, &[1], &RegularizerConfig::NONE, Reduction::Sum).unwrap();
        assert_eq!(with, without);
    }
}
