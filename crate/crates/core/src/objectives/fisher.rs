use alloc::vec::Vec;

use super::{truncate, MarginLoss};
use crate::error::invalid;
use crate::{Error, Result};

/// Symmetric grid `{i · step : |i · step| <= bound}`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlphaGrid {
    pub step: f64,
    pub bound: f64,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self { step: 1e-3, bound: 20.0 }
    }
}

impl AlphaGrid {
    fn half_len(&self) -> Result<i64> {
        if !(self.step > 0.0) || !(self.bound >= self.step) || !self.bound.is_finite() {
            return Err(invalid!("alpha grid needs 0 < step <= bound, got step {} bound {}", self.step, self.bound));
        }
        Ok(libm::floor(self.bound / self.step + 1e-9) as i64)
    }
}

/// Outcome for one value of `η`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EtaVerdict {
    pub eta: f64,
    pub argmin: f64,
    pub min_value: f64,
    /// Infimum over the half-line whose sign disagrees with `2η − 1`,
    /// including `α = 0`.
    pub wrong_half_min: f64,
    /// `wrong_half_min − min_value`.
    pub gap: f64,
    pub sign_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConsistencyReport {
    pub loss: MarginLoss,
    pub lambda: f64,
    pub tau: f64,
    pub grid: AlphaGrid,
    pub per_eta: Vec<EtaVerdict>,
    /// True when every `η` has the right argmin sign and a positive gap.
    pub consistent: bool,
}

/// Grid minimization of the conditional risk
/// `C_η(α) = η ℓ(α) + (1 − η) ℓ(−α)` with `ℓ = φ + λ (H_τ − H_0)`.
pub fn fisher_check(loss: MarginLoss, lambda: f64, tau: f64, etas: &[f64], grid: AlphaGrid) -> Result<ConsistencyReport> {
    if etas.is_empty() {
        return Err(Error::Empty("eta grid is empty"));
    }
    if let Some(&bad) = etas.iter().find(|&&e| !(e > 0.0 && e < 1.0) || e == 0.5) {
        return Err(invalid!("eta values must lie in (0, 1) and differ from 0.5, got {bad}"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid!("lambda must be finite and nonnegative, got {lambda}"));
    }
    truncate(0.0, tau)?;
    let n = grid.half_len()?;
    // ψ(α) = H_τ(α) − H_0(α) = τ − [α]_0^τ
    let ell = |a: f64| loss.value(a) + lambda * (tau - a.max(0.0).min(tau));
    let alphas: Vec<f64> = (-n..=n).map(|i| i as f64 * grid.step).collect();
    let pos: Vec<f64> = alphas.iter().map(|&a| ell(a)).collect();
    let neg: Vec<f64> = alphas.iter().map(|&a| ell(-a)).collect();

    let mut per_eta = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut best = (f64::INFINITY, 0.0);
        let mut wrong = f64::INFINITY;
        let want_positive = eta > 0.5;
        for (i, &a) in alphas.iter().enumerate() {
            let c = eta * pos[i] + (1.0 - eta) * neg[i];
            if c < best.0 {
                best = (c, a);
            }
            let wrong_side = if want_positive { a <= 0.0 } else { a >= 0.0 };
            if wrong_side && c < wrong {
                wrong = c;
            }
        }
        let sign_ok = if want_positive { best.1 > 0.0 } else { best.1 < 0.0 };
        per_eta.push(EtaVerdict { eta, argmin: best.1, min_value: best.0, wrong_half_min: wrong, gap: wrong - best.0, sign_ok });
    }
    let consistent = per_eta.iter().all(|v| v.sign_ok && v.gap > 0.0);
    Ok(ConsistencyReport { loss, lambda, tau, grid, per_eta, consistent })
}
