use alloc::vec::Vec;

/// Margin-based surrogate losses `phi(t)`, `t = y · f(x)`.
///
/// Each is decreasing, bounded below by 0 and has `phi'(0) < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MarginLoss {
    Logistic,
    Hinge,
    Exponential,
}

impl MarginLoss {
    pub const ALL: [MarginLoss; 3] = [MarginLoss::Logistic, MarginLoss::Hinge, MarginLoss::Exponential];

    pub fn value(self, t: f64) -> f64 {
        match self {
            MarginLoss::Logistic => {
                if t > 0.0 {
                    libm::log1p(libm::exp(-t))
                } else {
                    -t + libm::log1p(libm::exp(t))
                }
            }
            MarginLoss::Hinge => (1.0 - t).max(0.0),
            MarginLoss::Exponential => libm::exp(-t),
        }
    }

    /// Derivative; at the hinge kink `t = 1` the right derivative 0 is used.
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            MarginLoss::Logistic => {
                if t >= 0.0 {
                    let e = libm::exp(-t);
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + libm::exp(t))
                }
            }
            MarginLoss::Hinge => {
                if t < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            MarginLoss::Exponential => -libm::exp(-t),
        }
    }

    /// Infimum of the loss over the real line.
    pub fn lower_bound(self) -> f64 {
        0.0
    }

    pub fn name(self) -> &'static str {
        match self {
            MarginLoss::Logistic => "logistic",
            MarginLoss::Hinge => "hinge",
            MarginLoss::Exponential => "exponential",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

/// Softmax cross-entropy of `logits` against class `y`.
///
/// Returns the loss and writes `softmax(logits) - e_y` into `grad`.
pub fn softmax_cross_entropy(logits: &[f64], y: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = libm::exp(z - max);
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    grad[y] -= 1.0;
    max + libm::log(sum) - logits[y]
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = alloc::vec![0.0; logits.len()];
    softmax_cross_entropy(logits, 0, &mut p);
    p[0] += 1.0;
    p
}
