//! Experiment orchestration: load data, train, evaluate, write artifacts.

use std::path::{Path, PathBuf};

use amr_core::data::{filter_binary, subset_indices, LabeledDataset};
use amr_core::margins::{dataset_margins, HistogramSpec, MarginRecord, Split};
use amr_core::models::Model;
use amr_core::ndops::{dot, spectral_norm, DEFAULT_POWER_ITERS};
use amr_core::objectives::{fisher_check, ConsistencyReport, RegularizerConfig};
use amr_core::train::{adversarial_train, robust_eval, svm_hard_margin_with, train, Objective, RobustEval, SvmConfig, TrainConfig, TrainHistory};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::save_checkpoint;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{io_err, Result};
use crate::gallery::emit_adversarial_gallery;
use crate::idx::MnistFiles;
use crate::output;

const TRAIN_SUBSET_SALT: u64 = 0x7375_6273;

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: &'static str,
    pub config: ExperimentConfig,
    pub summary: Value,
}

/// Train and test splits as the config describes them.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    cfg.check_paths()?;
    let (mut tr, mut te) = MnistFiles::in_dir(&cfg.data_dir).load()?;
    if cfg.model == crate::config::ModelChoice::BinaryLinear {
        tr = filter_binary(&tr, cfg.positive_class, cfg.negative_class)?;
        te = filter_binary(&te, cfg.positive_class, cfg.negative_class)?;
    }
    if cfg.train_subset > 0 {
        tr = tr.subset(cfg.train_subset, cfg.seed ^ TRAIN_SUBSET_SALT)?;
    }
    Ok((tr, te))
}

/// Runs the configured experiment, writes every artifact under
/// `cfg.out_dir` and returns the report that was written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let summary = match cfg.experiment {
        ExperimentKind::Fisher => fisher(cfg, out)?,
        ExperimentKind::SvmRef => {
            let (tr, te) = load_data(cfg)?;
            svm_ref(cfg, &tr, &te, out)?
        }
        ExperimentKind::Tradeoff => {
            let (tr, te) = load_data(cfg)?;
            tradeoff(cfg, &tr, &te, out)?
        }
        ExperimentKind::AmrVsStd | ExperimentKind::LcrVsAmr | ExperimentKind::AdvBaseline => {
            let (tr, te) = load_data(cfg)?;
            comparison(cfg, &tr, &te, out)?
        }
    };
    let report = Report { experiment: cfg.experiment.name(), config: cfg.clone(), summary };
    write_json(&out.join("report.json"), &report)?;
    let p = out.join("config.txt");
    std::fs::write(&p, cfg.render()).map_err(io_err(&p))?;
    Ok(report)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Final-epoch figures of one trained model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub train_error: f64,
    pub test_error: f64,
    pub train_min_margin: f64,
    pub train_avg_margin: f64,
    pub test_min_margin: f64,
    pub test_avg_margin: f64,
    /// Largest singular value of each weight matrix, input layer first.
    pub spectral_norms: Vec<f64>,
    pub robust: Vec<RobustEval>,
}

/// Everything one training run leaves behind.
pub struct RunArtifacts {
    pub history: TrainHistory,
    pub summary: ModelSummary,
}

/// Which fixed subsets of each split margins were measured on.
fn margin_indices<'a>(tcfg: &'a TrainConfig, tr: &'a LabeledDataset, te: &'a LabeledDataset) -> impl Fn(&MarginRecord) -> Vec<usize> + 'a {
    move |r: &MarginRecord| {
        let n = match r.split {
            Split::Train => tr.len(),
            Split::Test => te.len(),
        };
        subset_indices(n, tcfg.margin_subset, tcfg.subset_seed(r.split))
    }
}

/// Trains one model and writes its artifacts into `dir`.
///
/// Margins at the final epoch are always recorded, even when that epoch is
/// not in the logging schedule. Robustness is measured on the fixed test
/// subset used for margins.
pub fn train_and_record(
    name: &str,
    cfg: &ExperimentConfig,
    tcfg: &TrainConfig,
    adversarial: bool,
    tr: &LabeledDataset,
    te: &LabeledDataset,
    dir: &Path,
    svm_margin: Option<f64>,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let kind = cfg.model_kind();
    let objective = match kind {
        amr_core::models::ModelKind::BinaryLinear => Objective::Binary { loss: cfg.loss, unit_sphere: cfg.unit_sphere },
        _ => Objective::Multiclass,
    };
    let mut history = if adversarial {
        adversarial_train(kind, tr, Some(te), tcfg, objective, &cfg.training_attack())?
    } else {
        train(kind, tr, Some(te), tcfg, objective)?
    };
    let tr_sub = tr.subset(tcfg.margin_subset, tcfg.subset_seed(Split::Train))?;
    let te_sub = te.subset(tcfg.margin_subset, tcfg.subset_seed(Split::Test))?;
    if !history.margins.iter().any(|r| r.epoch == tcfg.epochs) {
        for (split, ds) in [(Split::Train, &tr_sub), (Split::Test, &te_sub)] {
            let m = dataset_margins(&history.model, ds, &tcfg.lipschitz, tcfg.seed)?;
            history.margins.push(MarginRecord::new(tcfg.epochs, split, m)?);
        }
    }

    output::write_epochs(&dir.join("epochs.csv"), &history.epochs)?;
    output::write_stats(&dir.join("stats.csv"), &history.margins, &history.epochs, svm_margin)?;
    output::write_margins(&dir.join("margins.csv"), &history.margins, margin_indices(tcfg, tr, te))?;
    output::write_histograms(&dir.join("hist.csv"), &history.margins, &HistogramSpec::for_tau(cfg.tau))?;

    let attack_set = te.subset(cfg.attack_subset, tcfg.subset_seed(Split::Test))?;
    let robust = cfg.epsilons.iter().map(|&e| robust_eval(&history.model, &attack_set, &cfg.attack(e))).collect::<amr_core::Result<Vec<_>>>()?;
    output::write_robust(&dir.join("robust.csv"), &robust)?;
    save_checkpoint(&history.model, dir.join("model.ckpt"))?;

    let last = |split| history.margins.iter().rev().find(|r| r.split == split && r.epoch == tcfg.epochs).expect("final margins recorded");
    let (mtr, mte) = (last(Split::Train), last(Split::Test));
    let final_epoch = history.epochs.last().expect("at least one epoch");
    let summary = ModelSummary {
        name: name.to_string(),
        train_error: final_epoch.train_error,
        test_error: final_epoch.test_error.unwrap_or(f64::NAN),
        train_min_margin: mtr.min_margin,
        train_avg_margin: mtr.avg_abs_margin,
        test_min_margin: mte.min_margin,
        test_avg_margin: mte.avg_abs_margin,
        spectral_norms: spectral_norms(&history.model)?,
        robust,
    };
    Ok(RunArtifacts { history, summary })
}

pub fn spectral_norms(model: &Model) -> Result<Vec<f64>> {
    Ok(model.weight_matrices().into_iter().map(|w| spectral_norm(w, DEFAULT_POWER_ITERS)).collect::<amr_core::Result<_>>()?)
}

fn tradeoff(cfg: &ExperimentConfig, tr: &LabeledDataset, te: &LabeledDataset, out: &Path) -> Result<Value> {
    let svm = svm_hard_margin_with(tr, &SvmConfig::default())?;
    let tcfg = cfg.train_config(cfg.regularizer()?)?;
    let run = train_and_record("lr", cfg, &tcfg, false, tr, te, out, Some(svm.margin))?;
    if cfg.gallery {
        let te_sub = te.subset(tcfg.margin_subset, tcfg.subset_seed(Split::Test))?;
        let snaps = gallery_snapshots(&run.history);
        emit_adversarial_gallery(&snaps, &te_sub, cfg.gallery_count, &out.join("gallery"))?;
    }
    let tr_sub = tr.subset(tcfg.margin_subset, tcfg.subset_seed(Split::Train))?;
    let svm_on_subset = (0..tr_sub.len()).map(|i| tr_sub.labels()[i] as f64 * dot(&svm.direction, tr_sub.features().row(i))).fold(f64::INFINITY, f64::min);
    let first_train_error_zero = run.history.epochs.iter().find(|e| e.train_error == 0.0).map(|e| e.epoch);
    Ok(json!({
        "svm_margin": svm.margin,
        "svm_margin_on_train_subset": svm_on_subset,
        "svm_support_vectors": svm.support.len(),
        "first_zero_train_error_epoch": first_train_error_zero,
        "model": run.summary,
    }))
}

/// Snapshots at 1, 10, 100, … and the final epoch.
fn gallery_snapshots(h: &TrainHistory) -> Vec<(usize, Model)> {
    let last = h.snapshots.last().map(|s| s.0);
    h.snapshots
        .iter()
        .filter(|(e, _)| is_power_of_ten(*e) || Some(*e) == last)
        .cloned()
        .collect()
}

fn is_power_of_ten(mut n: usize) -> bool {
    while n >= 10 && n % 10 == 0 {
        n /= 10;
    }
    n == 1
}

/// The models each comparison trains: name, regularizer, adversarial.
fn comparison_runs(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, RegularizerConfig, bool)>> {
    let amr = cfg.regularizer()?;
    let lcr = RegularizerConfig::new(0.0, cfg.tau, cfg.lcr_beta)?;
    Ok(match cfg.experiment {
        ExperimentKind::AmrVsStd => vec![("std", RegularizerConfig::NONE, false), ("amr", amr, false)],
        ExperimentKind::LcrVsAmr => vec![("lcr", lcr, false), ("amr", amr, false)],
        ExperimentKind::AdvBaseline => vec![("std", RegularizerConfig::NONE, false), ("adv", RegularizerConfig::NONE, true), ("amr", amr, false)],
        _ => unreachable!("not a comparison experiment"),
    })
}

fn comparison(cfg: &ExperimentConfig, tr: &LabeledDataset, te: &LabeledDataset, out: &Path) -> Result<Value> {
    let mut models = Vec::new();
    for (name, reg, adversarial) in comparison_runs(cfg)? {
        let tcfg = cfg.train_config(reg)?;
        let dir: PathBuf = out.join(name);
        models.push(train_and_record(name, cfg, &tcfg, adversarial, tr, te, &dir, None)?.summary);
    }
    let amr = models.iter().find(|m| m.name == "amr").expect("every comparison trains amr");
    let base = models.iter().find(|m| m.name != "amr").expect("every comparison has a baseline");
    let robust_gain: Vec<Value> = amr
        .robust
        .iter()
        .zip(&base.robust)
        .map(|(a, b)| json!({ "epsilon": a.epsilon, "gain": a.robust_accuracy - b.robust_accuracy }))
        .collect();
    Ok(json!({
        "baseline": base.name,
        "avg_margin_ratio": amr.test_avg_margin / base.test_avg_margin,
        "clean_accuracy_gap": (1.0 - amr.test_error) - (1.0 - base.test_error),
        "robust_gain": robust_gain,
        "models": models,
    }))
}

fn svm_ref(cfg: &ExperimentConfig, tr: &LabeledDataset, te: &LabeledDataset, out: &Path) -> Result<Value> {
    let svm = svm_hard_margin_with(tr, &SvmConfig::default())?;
    let model = Model::Binary(amr_core::models::BinaryLinear { w: svm.direction.clone(), bias: None });
    save_checkpoint(&model, out.join("svm.ckpt"))?;
    let tcfg = cfg.train_config(RegularizerConfig::NONE)?;
    let mut records = Vec::new();
    for (split, ds) in [(Split::Train, tr), (Split::Test, te)] {
        let sub = ds.subset(tcfg.margin_subset, tcfg.subset_seed(split))?;
        records.push(MarginRecord::new(0, split, dataset_margins(&model, &sub, &tcfg.lipschitz, tcfg.seed)?)?);
    }
    output::write_margins(&out.join("margins.csv"), &records, margin_indices(&tcfg, tr, te))?;
    output::write_histograms(&out.join("hist.csv"), &records, &HistogramSpec::for_tau(cfg.tau))?;
    Ok(json!({
        "svm_margin": svm.margin,
        "support_vectors": svm.support,
        "sweeps": svm.sweeps,
        "train_error": model.error_rate(tr)?,
        "test_error": model.error_rate(te)?,
        "train_subset_avg_margin": records[0].avg_abs_margin,
        "test_subset_avg_margin": records[1].avg_abs_margin,
    }))
}

/// Every `(loss, λ, τ)` combination of the configured grid.
pub fn fisher_reports(cfg: &ExperimentConfig) -> Result<Vec<ConsistencyReport>> {
    let mut reports = Vec::new();
    for &loss in &cfg.fisher_losses {
        for &lambda in &cfg.fisher_lambdas {
            for &tau in &cfg.fisher_taus {
                reports.push(fisher_check(loss, lambda, tau, &cfg.fisher_etas, cfg.alpha_grid())?);
            }
        }
    }
    Ok(reports)
}

fn fisher(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let reports = fisher_reports(cfg)?;
    let mut w = csv::Writer::from_path(out.join("fisher.csv"))?;
    w.write_record(["loss", "lambda", "tau", "eta", "argmin", "min_value", "wrong_half_min", "gap", "sign_ok"])?;
    for r in &reports {
        for v in &r.per_eta {
            w.write_record([
                r.loss.name().to_string(),
                r.lambda.to_string(),
                r.tau.to_string(),
                v.eta.to_string(),
                v.argmin.to_string(),
                v.min_value.to_string(),
                v.wrong_half_min.to_string(),
                v.gap.to_string(),
                v.sign_ok.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    let verdicts: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "loss": r.loss.name(),
                "lambda": r.lambda,
                "tau": r.tau,
                "verdict": if r.consistent { "consistent" } else { "inconsistent" },
                "min_gap": r.per_eta.iter().map(|v| v.gap).fold(f64::INFINITY, f64::min),
            })
        })
        .collect();
    let all = reports.iter().all(|r| r.consistent);
    Ok(json!({ "verdict": if all { "consistent" } else { "inconsistent" }, "checks": verdicts }))
}
