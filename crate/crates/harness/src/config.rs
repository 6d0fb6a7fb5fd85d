//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! The `experiment` key picks the defaults every other key starts from, so
//! it is applied first wherever it appears; the remaining keys are applied
//! in order, later ones winning. Command-line `--set key=value` pairs are
//! appended after the file.
//!
//! | key | meaning |
//! |-----|---------|
//! | `experiment` | `tradeoff`, `amr_vs_std`, `lcr_vs_amr`, `adv_baseline`, `fisher`, `svm_ref` |
//! | `data_dir` | directory holding the four MNIST IDX files |
//! | `out_dir` | artifact directory |
//! | `model` | `binary_linear`, `linear` or `mlp` |
//! | `hidden` | MLP hidden width |
//! | `positive_class`, `negative_class` | digits kept by binary experiments |
//! | `train_subset` | seeded training subset size, `0` for all |
//! | `learning_rate`, `momentum`, `nesterov`, `batch_size`, `epochs` | optimizer |
//! | `lambda`, `tau`, `beta` | margin regularizer and orthogonal penalty |
//! | `lcr_beta` | orthogonal penalty of the Lipschitz-only model |
//! | `loss`, `unit_sphere` | binary objective: `logistic`, `hinge` or `exponential` |
//! | `bias`, `reduction`, `seed` | model biases, `sum` or `mean`, master seed |
//! | `margin_epochs` | epochs with margin logging, or `all` |
//! | `margin_subset` | examples per split used for margins |
//! | `lipschitz_radius`, `lipschitz_samples` | MLP margin estimation |
//! | `epsilons`, `attack_iterations`, `attack_step`, `attack_subset` | robustness evaluation |
//! | `adv_epsilon`, `adv_iterations` | attack used inside adversarial training |
//! | `fisher_losses`, `fisher_lambdas`, `fisher_taus`, `fisher_etas`, `fisher_step`, `fisher_bound` | Fisher grid |
//! | `gallery`, `gallery_count` | adversarial image gallery of linear runs |

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use amr_core::margins::LipschitzConfig;
use amr_core::models::{ModelKind, DEFAULT_HIDDEN};
use amr_core::objectives::{AlphaGrid, MarginLoss, Reduction, RegularizerConfig};
use amr_core::train::{AttackConfig, TrainConfig, MLP_MARGIN_EPOCHS};
use serde::Serialize;

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Tradeoff,
    AmrVsStd,
    LcrVsAmr,
    AdvBaseline,
    Fisher,
    SvmRef,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Tradeoff,
        ExperimentKind::AmrVsStd,
        ExperimentKind::LcrVsAmr,
        ExperimentKind::AdvBaseline,
        ExperimentKind::Fisher,
        ExperimentKind::SvmRef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tradeoff => "tradeoff",
            ExperimentKind::AmrVsStd => "amr_vs_std",
            ExperimentKind::LcrVsAmr => "lcr_vs_amr",
            ExperimentKind::AdvBaseline => "adv_baseline",
            ExperimentKind::Fisher => "fisher",
            ExperimentKind::SvmRef => "svm_ref",
        }
    }

    /// Whether the experiment reads MNIST.
    pub fn needs_data(self) -> bool {
        self != ExperimentKind::Fisher
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment {s:?}")))
    }
}

/// Everything one run needs; `render` and `parse` round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelChoice,
    pub hidden: usize,
    pub positive_class: i32,
    pub negative_class: i32,
    pub train_subset: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub tau: f64,
    pub beta: f64,
    pub lcr_beta: f64,
    #[serde(serialize_with = "loss_name")]
    pub loss: MarginLoss,
    pub unit_sphere: bool,
    pub bias: bool,
    #[serde(serialize_with = "reduction_name")]
    pub reduction: Reduction,
    pub seed: u64,
    /// `None` logs every epoch.
    pub margin_epochs: Option<Vec<usize>>,
    pub margin_subset: usize,
    pub lipschitz_radius: f64,
    pub lipschitz_samples: usize,
    pub epsilons: Vec<f64>,
    pub attack_iterations: usize,
    pub attack_step: f64,
    pub attack_subset: usize,
    pub adv_epsilon: f64,
    pub adv_iterations: usize,
    #[serde(serialize_with = "loss_names")]
    pub fisher_losses: Vec<MarginLoss>,
    pub fisher_lambdas: Vec<f64>,
    pub fisher_taus: Vec<f64>,
    pub fisher_etas: Vec<f64>,
    pub fisher_step: f64,
    pub fisher_bound: f64,
    pub gallery: bool,
    pub gallery_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    BinaryLinear,
    Linear,
    Mlp,
}

impl FromStr for ModelChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary_linear" => Ok(ModelChoice::BinaryLinear),
            "linear" => Ok(ModelChoice::Linear),
            "mlp" => Ok(ModelChoice::Mlp),
            _ => Err(HarnessError::Config(format!("unknown model {s:?}"))),
        }
    }
}

impl ModelChoice {
    fn name(self) -> &'static str {
        match self {
            ModelChoice::BinaryLinear => "binary_linear",
            ModelChoice::Linear => "linear",
            ModelChoice::Mlp => "mlp",
        }
    }
}

fn loss_name<S: serde::Serializer>(l: &MarginLoss, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(l.name())
}

fn loss_names<S: serde::Serializer>(l: &[MarginLoss], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(l.iter().map(|l| l.name()))
}

fn reduction_name<S: serde::Serializer>(r: &Reduction, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(reduction_str(*r))
}

fn reduction_str(r: Reduction) -> &'static str {
    match r {
        Reduction::Sum => "sum",
        Reduction::Mean => "mean",
    }
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    ///
    /// Binary experiments use MNIST 0 vs 1 with a bias-free logistic model
    /// trained for 1000 epochs and margins logged every epoch. The network
    /// experiments train a 1024-unit MLP for 50 epochs on a 10k-example
    /// subset with `λ = 0.1`, `τ = 5`, `β = 1e-3`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let train = TrainConfig::default();
        let reg = RegularizerConfig::default();
        let lip = LipschitzConfig::default();
        let atk = AttackConfig::default();
        let grid = AlphaGrid::default();
        let mut cfg = Self {
            experiment: kind,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("out").join(kind.name()),
            model: ModelChoice::Mlp,
            hidden: DEFAULT_HIDDEN,
            positive_class: 0,
            negative_class: 1,
            train_subset: 10_000,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            nesterov: train.nesterov,
            batch_size: train.batch_size,
            epochs: 50,
            lambda: reg.lambda,
            tau: reg.tau,
            beta: reg.beta,
            lcr_beta: reg.beta,
            loss: MarginLoss::Logistic,
            unit_sphere: false,
            bias: true,
            reduction: Reduction::Mean,
            seed: 0,
            margin_epochs: Some(MLP_MARGIN_EPOCHS.to_vec()),
            margin_subset: train.margin_subset,
            lipschitz_radius: lip.radius,
            lipschitz_samples: lip.samples,
            epsilons: vec![0.5, 1.0, 1.5, 2.0],
            attack_iterations: atk.iterations,
            attack_step: atk.step_size,
            attack_subset: 500,
            adv_epsilon: 2.0,
            adv_iterations: AttackConfig::training(2.0).iterations,
            fisher_losses: MarginLoss::ALL.to_vec(),
            fisher_lambdas: vec![0.0, 0.1, 1.0],
            fisher_taus: vec![1.0, 5.0],
            fisher_etas: (1..10).filter(|&i| i != 5).map(|i| i as f64 / 10.0).collect(),
            fisher_step: grid.step,
            fisher_bound: grid.bound,
            gallery: false,
            gallery_count: 10,
        };
        if matches!(kind, ExperimentKind::Tradeoff | ExperimentKind::SvmRef) {
            cfg.model = ModelChoice::BinaryLinear;
            cfg.train_subset = 0;
            cfg.epochs = 1000;
            cfg.lambda = 0.0;
            cfg.beta = 0.0;
            cfg.bias = false;
            cfg.reduction = Reduction::Sum;
            cfg.margin_epochs = None;
            cfg.gallery = kind == ExperimentKind::Tradeoff;
        }
        cfg
    }

    /// Parses config text, then applies `overrides` in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        pairs.extend(overrides.iter().cloned());
        let kind = match pairs.iter().rev().find(|(k, _)| k == "experiment") {
            Some((_, v)) => v.parse()?,
            None => ExperimentKind::Tradeoff,
        };
        let mut cfg = Self::defaults(kind);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "experiment") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, overrides)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "experiment" => self.experiment = v.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "model" => self.model = v.parse()?,
            "hidden" => self.hidden = num(key, v)?,
            "positive_class" => self.positive_class = num(key, v)?,
            "negative_class" => self.negative_class = num(key, v)?,
            "train_subset" => self.train_subset = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "nesterov" => self.nesterov = flag(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "lcr_beta" => self.lcr_beta = num(key, v)?,
            "loss" => self.loss = loss(v)?,
            "unit_sphere" => self.unit_sphere = flag(key, v)?,
            "bias" => self.bias = flag(key, v)?,
            "reduction" => {
                self.reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(HarnessError::Config(format!("reduction must be sum or mean, got {v:?}"))),
                }
            }
            "seed" => self.seed = num(key, v)?,
            "margin_epochs" => self.margin_epochs = if v == "all" { None } else { Some(list(key, v)?) },
            "margin_subset" => self.margin_subset = num(key, v)?,
            "lipschitz_radius" => self.lipschitz_radius = num(key, v)?,
            "lipschitz_samples" => self.lipschitz_samples = num(key, v)?,
            "epsilons" => self.epsilons = list(key, v)?,
            "attack_iterations" => self.attack_iterations = num(key, v)?,
            "attack_step" => self.attack_step = num(key, v)?,
            "attack_subset" => self.attack_subset = num(key, v)?,
            "adv_epsilon" => self.adv_epsilon = num(key, v)?,
            "adv_iterations" => self.adv_iterations = num(key, v)?,
            "fisher_losses" => self.fisher_losses = v.split(',').map(|s| loss(s.trim())).collect::<Result<_>>()?,
            "fisher_lambdas" => self.fisher_lambdas = list(key, v)?,
            "fisher_taus" => self.fisher_taus = list(key, v)?,
            "fisher_etas" => self.fisher_etas = list(key, v)?,
            "fisher_step" => self.fisher_step = num(key, v)?,
            "fisher_bound" => self.fisher_bound = num(key, v)?,
            "gallery" => self.gallery = flag(key, v)?,
            "gallery_count" => self.gallery_count = num(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// The config in file form, one key per line.
    pub fn render(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let epochs = match &self.margin_epochs {
            None => "all".to_string(),
            Some(e) => e.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        };
        let lines: Vec<(&str, String)> = vec![
            ("experiment", self.experiment.name().into()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("model", self.model.name().into()),
            ("hidden", self.hidden.to_string()),
            ("positive_class", self.positive_class.to_string()),
            ("negative_class", self.negative_class.to_string()),
            ("train_subset", self.train_subset.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("nesterov", self.nesterov.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lambda", self.lambda.to_string()),
            ("tau", self.tau.to_string()),
            ("beta", self.beta.to_string()),
            ("lcr_beta", self.lcr_beta.to_string()),
            ("loss", self.loss.name().into()),
            ("unit_sphere", self.unit_sphere.to_string()),
            ("bias", self.bias.to_string()),
            ("reduction", reduction_str(self.reduction).into()),
            ("seed", self.seed.to_string()),
            ("margin_epochs", epochs),
            ("margin_subset", self.margin_subset.to_string()),
            ("lipschitz_radius", self.lipschitz_radius.to_string()),
            ("lipschitz_samples", self.lipschitz_samples.to_string()),
            ("epsilons", join(&self.epsilons)),
            ("attack_iterations", self.attack_iterations.to_string()),
            ("attack_step", self.attack_step.to_string()),
            ("attack_subset", self.attack_subset.to_string()),
            ("adv_epsilon", self.adv_epsilon.to_string()),
            ("adv_iterations", self.adv_iterations.to_string()),
            ("fisher_losses", self.fisher_losses.iter().map(|l| l.name()).collect::<Vec<_>>().join(",")),
            ("fisher_lambdas", join(&self.fisher_lambdas)),
            ("fisher_taus", join(&self.fisher_taus)),
            ("fisher_etas", join(&self.fisher_etas)),
            ("fisher_step", self.fisher_step.to_string()),
            ("fisher_bound", self.fisher_bound.to_string()),
            ("gallery", self.gallery.to_string()),
            ("gallery_count", self.gallery_count.to_string()),
        ];
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.regularizer()?;
        self.train_config(self.regularizer()?)?.validate()?;
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return bad(format!("epsilons must be positive, got {:?}", self.epsilons));
        }
        if self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("epsilons must be strictly ascending, got {:?}", self.epsilons));
        }
        self.attack(1.0).validate()?;
        AttackConfig { epsilon: self.adv_epsilon, ..self.attack(1.0) }.validate()?;
        if self.attack_subset == 0 {
            return bad("attack_subset must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if !(self.lipschitz_radius > 0.0) || self.lipschitz_samples == 0 {
            return bad("Lipschitz estimation needs a positive radius and at least one sample".into());
        }
        if self.positive_class == self.negative_class {
            return bad("positive and negative class must differ".into());
        }
        let binary = self.model == ModelChoice::BinaryLinear;
        if matches!(self.experiment, ExperimentKind::Tradeoff | ExperimentKind::SvmRef) && !binary {
            return bad(format!("{} needs model = binary_linear", self.experiment.name()));
        }
        if binary && self.bias {
            return bad("the binary objective is bias-free; set bias = false".into());
        }
        if self.gallery && !binary {
            return bad("the adversarial gallery needs a binary linear model".into());
        }
        Ok(())
    }

    /// Checks that the data files exist.
    pub fn check_paths(&self) -> Result<()> {
        if self.experiment.needs_data() && !crate::idx::MnistFiles::in_dir(&self.data_dir).exist() {
            return Err(HarnessError::Config(format!("MNIST IDX files not found in {}", self.data_dir.display())));
        }
        Ok(())
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.model {
            ModelChoice::BinaryLinear => ModelKind::BinaryLinear,
            ModelChoice::Linear => ModelKind::Linear,
            ModelChoice::Mlp => ModelKind::Mlp { hidden: self.hidden },
        }
    }

    pub fn regularizer(&self) -> Result<RegularizerConfig> {
        Ok(RegularizerConfig::new(self.lambda, self.tau, self.beta)?)
    }

    /// Training settings with the given regularizer.
    pub fn train_config(&self, reg: RegularizerConfig) -> Result<TrainConfig> {
        let margin_log_epochs = match &self.margin_epochs {
            None => (1..=self.epochs).collect(),
            Some(e) => e.iter().copied().filter(|&x| x >= 1 && x <= self.epochs).collect(),
        };
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            nesterov: self.nesterov,
            batch_size: self.batch_size,
            epochs: self.epochs,
            reg,
            seed: self.seed,
            bias: self.bias,
            margin_log_epochs,
            margin_subset: self.margin_subset,
            lipschitz: self.lipschitz(),
            reduction: self.reduction,
        };
        Ok(cfg)
    }

    pub fn lipschitz(&self) -> LipschitzConfig {
        LipschitzConfig { radius: self.lipschitz_radius, samples: self.lipschitz_samples }
    }

    /// The evaluation attack at budget `epsilon`.
    pub fn attack(&self, epsilon: f64) -> AttackConfig {
        AttackConfig { epsilon, step_size: self.attack_step, iterations: self.attack_iterations, random_start: false, seed: self.seed }
    }

    /// The attack used inside adversarial training.
    pub fn training_attack(&self) -> AttackConfig {
        AttackConfig { iterations: self.adv_iterations, ..self.attack(self.adv_epsilon) }
    }

    pub fn alpha_grid(&self) -> AlphaGrid {
        AlphaGrid { step: self.fisher_step, bound: self.fisher_bound }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| HarnessError::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn loss(v: &str) -> Result<MarginLoss> {
    MarginLoss::from_name(v).ok_or_else(|| HarnessError::Config(format!("unknown loss {v:?}")))
}

/// Splits `key=value` as given to `--set`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| HarnessError::Config(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
