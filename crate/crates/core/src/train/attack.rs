use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{invalid, shape_err};
use crate::models::Model;
use crate::ndops::{norm, Matrix, RngStream, Vector};
use crate::Result;

/// l2 PGD budget and schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttackConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    /// Start from a uniform point of the ε-ball instead of `x₀`.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, step_size: 0.01, iterations: 1000, random_start: false, seed: 0 }
    }
}

impl AttackConfig {
    /// The 40-step attack used inside adversarial training.
    pub fn training(epsilon: f64) -> Self {
        Self { epsilon, iterations: 40, ..Self::default() }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid!("epsilon must be finite and nonnegative, got {}", self.epsilon));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid!("step size must be positive, got {}", self.step_size));
        }
        Ok(())
    }
}

/// Projects `x` onto `B(x0, eps) ∩ [0, 1]^d`: ball, then box, twice.
fn project(x: &mut [f64], x0: &[f64], eps: f64) {
    for _ in 0..2 {
        let mut sq = 0.0;
        for (a, b) in x.iter().zip(x0) {
            sq += (a - b) * (a - b);
        }
        let dist = libm::sqrt(sq);
        if dist > eps {
            let s = eps / dist;
            for (a, &b) in x.iter_mut().zip(x0) {
                *a = b + (*a - b) * s;
            }
        }
        for a in x.iter_mut() {
            *a = a.clamp(0.0, 1.0);
        }
    }
}

/// Untargeted l2 PGD on the training loss for every row of `x0`.
///
/// Each step moves `step_size` along the normalized input gradient and
/// projects back; a row whose gradient vanishes stays put for that step. The
/// final iterate is returned.
pub fn pgd_l2_batch(model: &Model, x0: &Matrix, labels: &[i32], atk: &AttackConfig) -> Result<Matrix> {
    atk.validate()?;
    if x0.rows() != labels.len() {
        return Err(shape_err!("{} rows but {} labels", x0.rows(), labels.len()));
    }
    if !x0.as_slice().iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(invalid!("PGD inputs must lie in [0, 1]"));
    }
    let mut x = x0.clone();
    if atk.random_start && atk.epsilon > 0.0 {
        for i in 0..x.rows() {
            let mut rng = RngStream::derive(atk.seed, i as u64);
            let start = crate::ndops::sample_ball(&mut rng, x0.row(i), atk.epsilon)?;
            let row = x.row_mut(i);
            row.copy_from_slice(&start);
            project(row, x0.row(i), atk.epsilon);
        }
    }
    for _ in 0..atk.iterations {
        let (_, grad) = model.loss_input_grad_batch(&x, labels)?;
        for i in 0..x.rows() {
            let g = grad.row(i);
            let n = norm(g);
            if n == 0.0 || !n.is_finite() {
                continue;
            }
            let s = atk.step_size / n;
            let row = x.row_mut(i);
            for (a, gi) in row.iter_mut().zip(g) {
                *a += s * gi;
            }
            project(row, x0.row(i), atk.epsilon);
        }
    }
    Ok(x)
}

/// [`pgd_l2_batch`] for a single example.
pub fn pgd_l2(model: &Model, x: &[f64], y: i32, atk: &AttackConfig) -> Result<Vector> {
    let xb = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(pgd_l2_batch(model, &xb, &[y], atk)?.into_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustEval {
    pub epsilon: f64,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
}

const ATTACK_CHUNK: usize = 500;

/// Clean accuracy and the fraction of examples that are classified
/// correctly both before and after the attack.
pub fn robust_eval(model: &Model, ds: &LabeledDataset, atk: &AttackConfig) -> Result<RobustEval> {
    let preds = model.predict_batch(ds.features())?;
    let correct: Vec<usize> = (0..ds.len()).filter(|&i| preds[i] == ds.labels()[i]).collect();
    let mut survived = 0usize;
    for chunk in correct.chunks(ATTACK_CHUNK) {
        let x0 = ds.features().select_rows(chunk);
        let labels: Vec<i32> = chunk.iter().map(|&i| ds.labels()[i]).collect();
        let adv = pgd_l2_batch(model, &x0, &labels, atk)?;
        let after = model.predict_batch(&adv)?;
        survived += after.iter().zip(&labels).filter(|(p, y)| p == y).count();
    }
    let n = ds.len() as f64;
    Ok(RobustEval { epsilon: atk.epsilon, clean_accuracy: correct.len() as f64 / n, robust_accuracy: survived as f64 / n })
}

pub fn robust_accuracy(model: &Model, ds: &LabeledDataset, atk: &AttackConfig) -> Result<f64> {
    Ok(robust_eval(model, ds, atk)?.robust_accuracy)
}
