use alloc::vec::Vec;

use crate::data::{LabeledDataset, Task};
use crate::error::invalid;
use crate::ndops::{axpy, dot, norm, scale_in_place, RngStream, Vector};
use crate::{Error, Result};

/// Stopping rule and limits of the dual coordinate ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    /// Largest tolerated projected-gradient magnitude.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_sweeps: 100_000, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    /// Unit-norm separating direction.
    pub direction: Vector,
    /// `min_i y_i ⟨direction, x_i⟩`.
    pub margin: f64,
    pub alphas: Vector,
    /// Examples whose constraint is tight at the returned solution.
    pub support: Vec<usize>,
    pub sweeps: usize,
}

/// Direction of the hard-margin SVM through the origin.
pub fn svm_hard_margin(ds: &LabeledDataset) -> Result<Vector> {
    Ok(svm_hard_margin_with(ds, &SvmConfig::default())?.direction)
}

/// Dual coordinate ascent on `max Σα − ½‖Σ α_i y_i x_i‖²`, `α ≥ 0`.
///
/// Sweeps visit examples in a fresh seeded order. The run stops once every
/// projected gradient is within `tolerance`, which leaves every constraint
/// `y_i wᵀx_i ≥ 1 − tolerance`. A dual that keeps growing, or a sweep budget
/// that runs out, is reported as non-separable data.
pub fn svm_hard_margin_with(ds: &LabeledDataset, cfg: &SvmConfig) -> Result<SvmSolution> {
    if ds.task() != Task::Binary {
        return Err(invalid!("the SVM reference needs a binary dataset"));
    }
    let n = ds.len();
    let q: Vec<f64> = (0..n).map(|i| dot(ds.features().row(i), ds.features().row(i))).collect();
    if let Some(i) = q.iter().position(|&v| v == 0.0) {
        return Err(Error::NotSeparable(alloc::format!("example {i} is the origin")));
    }
    let mut alpha = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; ds.dim()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(cfg.seed);
    let mut alpha_sum = 0.0;
    for sweep in 1..=cfg.max_sweeps {
        rng.shuffle(&mut order);
        let mut worst = 0.0f64;
        for &i in &order {
            let (x, y) = ds.example(i);
            let y = y as f64;
            let g = y * dot(&w, x) - 1.0;
            let pg = if alpha[i] > 0.0 { g } else { g.min(0.0) };
            worst = worst.max(pg.abs());
            if pg != 0.0 {
                let next = (alpha[i] - g / q[i]).max(0.0);
                let delta = next - alpha[i];
                if delta != 0.0 {
                    axpy(delta * y, x, &mut w);
                    alpha_sum += delta;
                    alpha[i] = next;
                }
            }
        }
        if !alpha_sum.is_finite() || alpha_sum > 1e12 {
            return Err(Error::NotSeparable(alloc::format!("dual variables diverged after {sweep} sweeps")));
        }
        if worst <= cfg.tolerance {
            let len = norm(&w);
            if len == 0.0 {
                return Err(Error::NotSeparable("solution collapsed to zero".into()));
            }
            scale_in_place(&mut w, 1.0 / len);
            let margins: Vec<f64> = (0..n).map(|i| ds.labels()[i] as f64 * dot(&w, ds.features().row(i))).collect();
            let margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
            let slack = 1.0 / len * cfg.tolerance.max(1e-9);
            let support = (0..n).filter(|&i| margins[i] <= margin + slack).collect();
            return Ok(SvmSolution { direction: w, margin, alphas: alpha, support, sweeps: sweep });
        }
    }
    Err(Error::NotSeparable(alloc::format!("no convergence within {} sweeps", cfg.max_sweeps)))
}
