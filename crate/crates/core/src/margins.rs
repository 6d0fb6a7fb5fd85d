//! Signed margins: exact for linear models, Lipschitz estimates otherwise.

use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{invalid, shape_err};
use crate::models::Model;
use crate::ndops::{argmax, dot, norm, sample_ball, sub, Matrix, RngStream, Vector};
use crate::{Error, Result};

/// `+distance` for a correct prediction, `-distance` otherwise.
pub fn signed_margin(distance: f64, correct: bool) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(invalid!("distance must be nonnegative, got {distance}"));
    }
    Ok(if correct { distance } else { -distance })
}

/// Distance from `x` to the decision boundary of a linear model.
///
/// Binary: `|wᵀx + b| / ‖w‖`. Multiclass: `min_{k≠ŷ} (f_ŷ − f_k) / ‖w_ŷ − w_k‖`.
pub fn linear_distance(model: &Model, x: &[f64]) -> Result<f64> {
    if x.len() != model.input_dim() {
        return Err(shape_err!("input has {} features, model expects {}", x.len(), model.input_dim()));
    }
    match model {
        Model::Binary(p) => {
            let n = norm(&p.w);
            if n == 0.0 {
                return Err(Error::Degenerate("zero weight vector".into()));
            }
            Ok((dot(&p.w, x) + p.bias.unwrap_or(0.0)).abs() / n)
        }
        Model::Linear(p) => {
            let logits = model.forward(x)?.logits;
            let top = argmax(&logits);
            let mut best = f64::INFINITY;
            for k in (0..logits.len()).filter(|&k| k != top) {
                let n = norm(&sub(p.weights.row(top), p.weights.row(k)));
                if n == 0.0 {
                    return Err(Error::Degenerate(alloc::format!("rows {top} and {k} are identical")));
                }
                best = best.min((logits[top] - logits[k]) / n);
            }
            Ok(best)
        }
        Model::Mlp(_) => Err(invalid!("exact distances are only available for linear models")),
    }
}

/// Closest point to `x` on the hyperplane `wᵀz = 0`: `x − (wᵀx/‖w‖²) w`.
pub fn linear_adversarial(w: &[f64], x: &[f64]) -> Result<Vector> {
    if w.len() != x.len() {
        return Err(shape_err!("{} weights against {} features", w.len(), x.len()));
    }
    let sq = dot(w, w);
    if sq == 0.0 {
        return Err(Error::Degenerate("zero weight vector".into()));
    }
    let c = dot(w, x) / sq;
    Ok(x.iter().zip(w).map(|(xi, wi)| xi - c * wi).collect())
}

/// Ball radius and gradient-sample budget for [`lipschitz_margin_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LipschitzConfig {
    pub radius: f64,
    pub samples: usize,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self { radius: 5.0, samples: 1024 * 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    /// `min{ min_k gap_k / L̂_k, r }`.
    pub bound: f64,
    /// Class the gaps are measured from.
    pub top: usize,
    /// `f_top(x) − f_k(x)` per class (0 at `top`).
    pub gaps: Vector,
    /// Sampled local constants `L̂_k` per class (0 at `top`).
    pub constants: Vector,
    pub radius: f64,
    pub sample_count: usize,
}

const SAMPLE_CHUNK: usize = 256;

/// Local-Lipschitz margin estimate around `x`: `min(r, min_k gap_k / L̂_k)`.
///
/// `L̂_k` is the largest norm of `∇(f_top − f_k)` over `cfg.samples` uniform
/// draws from `B(x, r)`. `top` defaults to the predicted class; passing the
/// true label makes a misclassified point come out `<= 0`. The result is an
/// estimate and becomes a lower bound on the true distance only once the
/// sampled constants reach the true local Lipschitz constants.
pub fn lipschitz_margin_bound(
    model: &Model,
    x: &[f64],
    top: Option<usize>,
    cfg: &LipschitzConfig,
    rng: &mut RngStream,
) -> Result<LipschitzEstimate> {
    if !(cfg.radius > 0.0) || !cfg.radius.is_finite() {
        return Err(invalid!("radius must be positive, got {}", cfg.radius));
    }
    if cfg.samples == 0 {
        return Err(invalid!("need at least one gradient sample"));
    }
    let logits = model.forward(x)?.logits;
    let c = logits.len();
    let top = top.unwrap_or_else(|| argmax(&logits));
    if top >= c {
        return Err(invalid!("class {top} out of range for {c} classes"));
    }
    let gaps: Vector = logits.iter().map(|&l| logits[top] - l).collect();

    let mut constants: Vector = alloc::vec![0.0; c];
    let mut done = 0;
    while done < cfg.samples {
        let take = SAMPLE_CHUNK.min(cfg.samples - done);
        let mut pts = Vec::with_capacity(take * x.len());
        for _ in 0..take {
            pts.extend(sample_ball(rng, x, cfg.radius)?);
        }
        let pts = Matrix::from_vec(take, x.len(), pts)?;
        let norms = model.gap_gradient_norms(&pts, top)?;
        for row in norms.row_iter() {
            for (m, &v) in constants.iter_mut().zip(row) {
                *m = f64::max(*m, v);
            }
        }
        done += take;
    }

    let mut bound = cfg.radius;
    for k in (0..c).filter(|&k| k != top) {
        let ratio = if constants[k] > 0.0 {
            gaps[k] / constants[k]
        } else if gaps[k] > 0.0 {
            f64::INFINITY
        } else if gaps[k] == 0.0 {
            0.0
        } else {
            -cfg.radius
        };
        bound = bound.min(ratio);
    }
    Ok(LipschitzEstimate { bound, top, gaps, constants, radius: cfg.radius, sample_count: cfg.samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Signed margins of a dataset at one epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginRecord {
    pub epoch: usize,
    pub split: Split,
    pub margins: Vector,
    pub min_margin: f64,
    pub avg_abs_margin: f64,
}

impl MarginRecord {
    pub fn new(epoch: usize, split: Split, margins: Vector) -> Result<Self> {
        let (min_margin, avg_abs_margin) = min_and_avg_abs(&margins)?;
        Ok(Self { epoch, split, margins, min_margin, avg_abs_margin })
    }
}

fn min_and_avg_abs(m: &[f64]) -> Result<(f64, f64)> {
    if m.is_empty() {
        return Err(Error::Empty("no margins"));
    }
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    let avg = m.iter().map(|v| v.abs()).sum::<f64>() / m.len() as f64;
    Ok((min, avg))
}

/// Fixed-width histogram over `[lo, hi)`; values outside land in the end bins.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid!("histogram needs bins >= 1 and lo < hi, got {bins} bins over [{lo}, {hi})"));
        }
        let mut counts = alloc::vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = libm::floor((v - lo) / width);
            let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_left(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.bin_width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginStats {
    pub min: f64,
    pub avg_abs: f64,
    pub histogram: Histogram,
}

/// Range and resolution of margin histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl HistogramSpec {
    /// `[−τ, 3τ]` with 50 bins.
    pub fn for_tau(tau: f64) -> Self {
        let tau = if tau > 0.0 { tau } else { 1.0 };
        Self { lo: -tau, hi: 3.0 * tau, bins: 50 }
    }
}

pub fn margin_stats(margins: &[f64], spec: &HistogramSpec) -> Result<MarginStats> {
    let (min, avg_abs) = min_and_avg_abs(margins)?;
    Ok(MarginStats { min, avg_abs, histogram: Histogram::new(margins, spec.lo, spec.hi, spec.bins)? })
}

/// Signed margin of every example of `ds`.
///
/// Linear models use exact distances. MLPs use the Lipschitz estimate
/// around the predicted class, with example `i` drawing from
/// `RngStream::derive(seed, i)`.
pub fn dataset_margins(model: &Model, ds: &LabeledDataset, lip: &LipschitzConfig, seed: u64) -> Result<Vector> {
    let mut out = Vec::with_capacity(ds.len());
    let preds = model.predict_batch(ds.features())?;
    for i in 0..ds.len() {
        let (x, y) = ds.example(i);
        let dist = match model {
            Model::Mlp(_) => {
                let mut rng = RngStream::derive(seed, i as u64);
                lipschitz_margin_bound(model, x, None, lip, &mut rng)?.bound.max(0.0)
            }
            _ => linear_distance(model, x)?,
        };
        out.push(signed_margin(dist, preds[i] == y)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BinaryLinear, LinearParams};
    use alloc::vec;

    #[test]
    fn signed_margin_convention() {
        assert_eq!(signed_margin(0.7, true).unwrap(), 0.7);
        assert_eq!(signed_margin(0.7, false).unwrap(), -0.7);
        assert_eq!(signed_margin(0.0, false).unwrap(), 0.0);
        assert!(signed_margin(-0.1, true).is_err());
    }

    #[test]
    fn linear_closed_forms() {
        let b = Model::Binary(BinaryLinear { w: vec![3.0, 4.0], bias: None });
        assert!((linear_distance(&b, &[1.0, 1.0]).unwrap() - 1.4).abs() < 1e-15);
        let m = Model::Linear(LinearParams { weights: Matrix::identity(2), bias: None });
        assert!((linear_distance(&m, &[2.0, 0.0]).unwrap() - libm::sqrt(2.0)).abs() < 1e-15);
        let zero = Model::Binary(BinaryLinear { w: vec![0.0, 0.0], bias: None });
        assert!(linear_distance(&zero, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn adversarial_closed_forms() {
        let a = linear_adversarial(&[3.0, 4.0], &[1.0, 0.0]).unwrap();
        assert!((a[0] - 16.0 / 25.0).abs() < 1e-15 && (a[1] + 12.0 / 25.0).abs() < 1e-15);
        assert!(dot(&[3.0, 4.0], &a).abs() < 1e-15);
        assert_eq!(linear_adversarial(&[3.0, 4.0], &[4.0, -3.0]).unwrap(), vec![4.0, -3.0]);
        assert!(linear_adversarial(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = margin_stats(&[0.5, 1.2, -0.3], &HistogramSpec::for_tau(1.0)).unwrap();
        assert_eq!(s.min, -0.3);
        assert!((s.avg_abs - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 3);
        let c = margin_stats(&[-0.4; 7], &HistogramSpec::for_tau(1.0)).unwrap();
        assert_eq!(c.min, -0.4);
        assert!((c.avg_abs - 0.4).abs() < 1e-15);
        assert!(margin_stats(&[], &HistogramSpec::for_tau(1.0)).is_err());
        let h = Histogram::new(&[-100.0, 100.0, f64::NAN], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![2, 0, 0, 1]);
    }

    #[test]
    fn misclassified_point_has_nonpositive_bound() {
        let m = Model::Linear(LinearParams { weights: Matrix::identity(2), bias: None });
        let mut rng = RngStream::new(0);
        let cfg = LipschitzConfig { radius: 5.0, samples: 3 };
        let e = lipschitz_margin_bound(&m, &[2.0, 0.5], Some(1), &cfg, &mut rng).unwrap();
        assert!(e.bound <= 0.0);
        assert!(lipschitz_margin_bound(&m, &[2.0, 0.5], None, &LipschitzConfig { radius: 0.0, samples: 1 }, &mut rng).is_err());
    }

    #[test]
    fn record_recomputes_summaries() {
        let r = MarginRecord::new(3, Split::Test, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(r.min_margin, -2.0);
        assert!((r.avg_abs_margin - 3.5 / 3.0).abs() < 1e-15);
    }
}
