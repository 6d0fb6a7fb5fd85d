//! Minibatch SGD with Nesterov momentum, l2 PGD, adversarial training and a
//! hard-margin SVM reference.

mod attack;
mod svm;

use alloc::vec::Vec;

pub use attack::{pgd_l2, pgd_l2_batch, robust_accuracy, robust_eval, AttackConfig, RobustEval};
pub use svm::{svm_hard_margin, svm_hard_margin_with, SvmConfig, SvmSolution};

use crate::data::LabeledDataset;
use crate::error::invalid;
use crate::margins::{dataset_margins, LipschitzConfig, MarginRecord, Split};
use crate::models::{BinaryLinear, Model, ModelKind};
use crate::ndops::{norm, scale_in_place, RngStream};
use crate::objectives::{binary_regularized_objective, multiclass_amr_objective, MarginLoss, Reduction, RegularizerConfig};
use crate::{Error, Result};

/// Epochs at which nonlinear models log margins by default.
pub const MLP_MARGIN_EPOCHS: [usize; 10] = [1, 10, 20, 30, 40, 50, 80, 120, 160, 200];

/// What the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Objective {
    /// `φ(y wᵀx) − λ [y wᵀx]_0^τ` for a bias-free binary linear model,
    /// optionally keeping `‖w‖ = 1` by renormalizing after every step.
    Binary { loss: MarginLoss, unit_sphere: bool },
    /// Cross-entropy plus the feature-space margin term and the orthogonal
    /// penalty (both weighted by the regularizer config).
    Multiclass,
}

impl Objective {
    /// The natural unregularized objective for a model kind.
    pub fn standard(kind: ModelKind) -> Self {
        match kind {
            ModelKind::BinaryLinear => Objective::Binary { loss: MarginLoss::Logistic, unit_sphere: false },
            _ => Objective::Multiclass,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub reg: RegularizerConfig,
    pub seed: u64,
    /// Include bias terms when the model is initialized by [`train`].
    pub bias: bool,
    /// Epochs (1-based, sorted) after which margins are recorded.
    pub margin_log_epochs: Vec<usize>,
    /// Size of the fixed margin-estimation subsets of each split.
    pub margin_subset: usize,
    pub lipschitz: LipschitzConfig,
    /// How per-example data terms of a minibatch are combined.
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            nesterov: true,
            batch_size: 128,
            epochs: 200,
            reg: RegularizerConfig::NONE,
            seed: 0,
            bias: true,
            margin_log_epochs: MLP_MARGIN_EPOCHS.to_vec(),
            margin_subset: 500,
            lipschitz: LipschitzConfig::default(),
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be at least 1"));
        }
        if self.margin_log_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("margin log epochs must be strictly increasing"));
        }
        if self.margin_subset == 0 {
            return Err(invalid!("margin subset must be nonempty"));
        }
        self.reg.validate()
    }

    /// Records margins after every epoch.
    pub fn log_every_epoch(mut self) -> Self {
        self.margin_log_epochs = (1..=self.epochs).collect();
        self
    }

    /// Seed of the fixed margin subset of `split`.
    pub fn subset_seed(&self, split: Split) -> u64 {
        self.seed ^ match split {
            Split::Train => 0x7261_696e,
            Split::Test => 0x7465_7374,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch.
    pub loss: f64,
    pub train_error: f64,
    pub test_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub margins: Vec<MarginRecord>,
    /// Parameters after each margin-logged epoch, in the same order.
    pub snapshots: Vec<(usize, Model)>,
    pub model: Model,
}

impl TrainHistory {
    pub fn margin_records(&self, split: Split) -> impl Iterator<Item = &MarginRecord> + '_ {
        self.margins.iter().filter(move |r| r.split == split)
    }
}

/// SGD with heavy-ball or Nesterov momentum; velocity starts at zero.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    nesterov: bool,
    velocity: Option<Model>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, nesterov: bool) -> Self {
        Self { lr, momentum, nesterov, velocity: None }
    }

    /// `v ← μv + g`, then `p ← p − lr (g + μv)` (Nesterov) or `p ← p − lr v`.
    pub fn step(&mut self, params: &mut Model, grad: &Model) -> Result<()> {
        if self.momentum == 0.0 {
            return params.axpy(-self.lr, grad);
        }
        let v = self.velocity.get_or_insert_with(|| grad.zeros_like());
        for (vt, gt) in v.tensors_mut().into_iter().zip(grad.tensors()) {
            for (vi, gi) in vt.iter_mut().zip(gt) {
                *vi = self.momentum * *vi + gi;
            }
        }
        if self.nesterov {
            params.axpy(-self.lr, grad)?;
            params.axpy(-self.lr * self.momentum, v)
        } else {
            params.axpy(-self.lr, v)
        }
    }
}

/// Initializes a model of `kind` from `cfg.seed` and trains it.
pub fn train(
    kind: ModelKind,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<TrainHistory> {
    let model = Model::init(kind, train_set.dim(), train_set.class_count(), cfg.bias, cfg.seed)?;
    train_from(model, train_set, test_set, cfg, objective, None)
}

/// Like [`train`], but every minibatch is first replaced by its PGD
/// counterpart under the current parameters.
pub fn adversarial_train(
    kind: ModelKind,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    objective: Objective,
    atk: &AttackConfig,
) -> Result<TrainHistory> {
    let model = Model::init(kind, train_set.dim(), train_set.class_count(), cfg.bias, cfg.seed)?;
    train_from(model, train_set, test_set, cfg, objective, Some(atk))
}

/// The training loop proper, starting from `model`.
///
/// Each epoch visits the data in an order drawn from `(cfg.seed, epoch)`.
/// Data terms are combined per `cfg.reduction`. Errors are evaluated
/// after every epoch and margins at `cfg.margin_log_epochs`.
pub fn train_from(
    mut model: Model,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    objective: Objective,
    attack: Option<&AttackConfig>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    model.validate()?;
    if let Some(atk) = attack {
        atk.validate()?;
    }
    if model.task() != train_set.task() || model.input_dim() != train_set.dim() {
        return Err(invalid!("model {:?} does not fit the training data", model.kind()));
    }
    if let Some(t) = test_set {
        if t.task() != train_set.task() || t.dim() != train_set.dim() {
            return Err(invalid!("test split does not match the training split"));
        }
    }
    let unit_sphere = match (&mut model, objective) {
        (Model::Binary(p), Objective::Binary { unit_sphere, .. }) => {
            if p.bias.is_some() {
                return Err(invalid!("the binary objective expects a bias-free model"));
            }
            if unit_sphere {
                normalize(&mut p.w)?;
            }
            unit_sphere
        }
        (Model::Binary(_), Objective::Multiclass) | (_, Objective::Binary { .. }) => {
            return Err(invalid!("objective {objective:?} does not apply to {:?}", model.kind()));
        }
        _ => false,
    };

    let margin_sets = if cfg.margin_log_epochs.is_empty() {
        None
    } else {
        let tr = train_set.subset(cfg.margin_subset, cfg.subset_seed(Split::Train))?;
        let te = test_set.map(|t| t.subset(cfg.margin_subset, cfg.subset_seed(Split::Test))).transpose()?;
        Some((tr, te))
    };

    let n = train_set.len();
    let mut sgd = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.nesterov);
    let mut history = TrainHistory { epochs: Vec::with_capacity(cfg.epochs), margins: Vec::new(), snapshots: Vec::new(), model: model.clone() };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        RngStream::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let mut x = train_set.features().select_rows(idx);
            let y: Vec<i32> = idx.iter().map(|&i| train_set.labels()[i]).collect();
            if let Some(atk) = attack {
                x = pgd_l2_batch(&model, &x, &y, atk)?;
            }
            let (value, grad) = match (&model, objective) {
                (Model::Binary(p), Objective::Binary { loss, .. }) => {
                    let (v, g) = binary_regularized_objective(&p.w, &x, &y, &cfg.reg, loss, cfg.reduction)?;
                    (v, Model::Binary(BinaryLinear { w: g, bias: None }))
                }
                _ => multiclass_amr_objective(&model, &x, &y, &cfg.reg, cfg.reduction)?,
            };
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, value });
            }
            sgd.step(&mut model, &grad)?;
            if unit_sphere {
                if let Model::Binary(p) = &mut model {
                    normalize(&mut p.w)?;
                }
            }
            loss_sum += value;
            batches += 1;
        }
        if !model.tensors().iter().all(|t| crate::ndops::all_finite(t)) {
            return Err(Error::Diverged { epoch, value: f64::NAN });
        }
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            train_error: model.error_rate(train_set)?,
            test_error: test_set.map(|t| model.error_rate(t)).transpose()?,
        });
        if let Some((tr, te)) = &margin_sets {
            if cfg.margin_log_epochs.binary_search(&epoch).is_ok() {
                history.margins.push(MarginRecord::new(epoch, Split::Train, dataset_margins(&model, tr, &cfg.lipschitz, cfg.seed)?)?);
                if let Some(te) = te {
                    history.margins.push(MarginRecord::new(epoch, Split::Test, dataset_margins(&model, te, &cfg.lipschitz, cfg.seed)?)?);
                }
                history.snapshots.push((epoch, model.clone()));
            }
        }
    }
    history.model = model;
    Ok(history)
}

fn normalize(w: &mut [f64]) -> Result<()> {
    let n = norm(w);
    if n == 0.0 {
        return Err(Error::Degenerate("weight vector vanished on the unit sphere".into()));
    }
    scale_in_place(w, 1.0 / n);
    Ok(())
}
