//! Command-line front end of the `amr` binary.

use std::path::{Path, PathBuf};

use amr_core::margins::{dataset_margins, HistogramSpec, MarginRecord, Split};
use amr_core::models::Model;
use amr_core::train::{robust_eval, EpochStats};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::config::{parse_override, ExperimentConfig, ModelChoice};
use crate::error::{io_err, HarnessError, Result};
use crate::experiments::{load_data, run_experiment, write_json};
use crate::output;

#[derive(Debug, Parser)]
#[command(name = "amr", version, about = "Margin experiments on MNIST: trade-off study, regularizer comparisons, attacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment named by the config (default: tradeoff).
    Train(Common),
    /// Robust accuracy of a saved model over the epsilon grid.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Signed margins of a saved model on the fixed evaluation subsets.
    Margin {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Grid check of Fisher consistency of the regularized losses.
    Fisher(Common),
    /// Hard-margin SVM reference on the binary MNIST task.
    SvmRef(Common),
    /// Print the summary of a finished run.
    Report(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// Config file, then `--set` pairs, then `--seed` and `--out`, with
    /// `experiment` forced when the subcommand implies one.
    fn resolve(&self, experiment: Option<&str>) -> Result<ExperimentConfig> {
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(e) = experiment {
            overrides.push(("experiment".into(), e.into()));
        }
        if let Some(s) = self.seed {
            overrides.push(("seed".into(), s.to_string()));
        }
        if let Some(o) = &self.out {
            overrides.push(("out_dir".into(), o.display().to_string()));
        }
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides),
            None => ExperimentConfig::parse("", &overrides),
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => summarize(&run_experiment(&c.resolve(None)?)?.summary),
        Command::Fisher(c) => summarize(&run_experiment(&c.resolve(Some("fisher"))?)?.summary),
        Command::SvmRef(c) => summarize(&run_experiment(&c.resolve(Some("svm_ref"))?)?.summary),
        Command::Attack { common, checkpoint } => attack(&common.resolve(None)?, &checkpoint),
        Command::Margin { common, checkpoint } => margin(&common.resolve(None)?, &checkpoint),
        Command::Report(c) => report(&c.resolve(None)?.out_dir),
    }
}

fn summarize(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// The config with the model family taken from the checkpoint, so the
/// right data split is loaded.
fn config_for(cfg: &ExperimentConfig, model: &Model) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    cfg.model = match model {
        Model::Binary(_) => ModelChoice::BinaryLinear,
        Model::Linear(_) => ModelChoice::Linear,
        Model::Mlp(p) => {
            cfg.hidden = p.w1.rows();
            ModelChoice::Mlp
        }
    };
    cfg
}

fn checked_model(path: &Path, model: &Model, dim: usize) -> Result<()> {
    if model.input_dim() != dim {
        return Err(HarnessError::Config(format!("{} expects {} inputs but the data has {dim}", path.display(), model.input_dim())));
    }
    Ok(())
}

fn attack(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let cfg = config_for(cfg, &model);
    let (_, te) = load_data(&cfg)?;
    checked_model(checkpoint, &model, te.dim())?;
    let tcfg = cfg.train_config(cfg.regularizer()?)?;
    let set = te.subset(cfg.attack_subset, tcfg.subset_seed(Split::Test))?;
    let evals = cfg.epsilons.iter().map(|&e| robust_eval(&model, &set, &cfg.attack(e))).collect::<amr_core::Result<Vec<_>>>()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    output::write_robust(&cfg.out_dir.join("robust.csv"), &evals)?;
    for e in &evals {
        println!("epsilon {:<6} clean {:.4} robust {:.4}", e.epsilon, e.clean_accuracy, e.robust_accuracy);
    }
    Ok(())
}

fn margin(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let cfg = config_for(cfg, &model);
    let (tr, te) = load_data(&cfg)?;
    checked_model(checkpoint, &model, te.dim())?;
    let tcfg = cfg.train_config(cfg.regularizer()?)?;
    let mut records = Vec::new();
    for (split, ds) in [(Split::Train, &tr), (Split::Test, &te)] {
        let sub = ds.subset(tcfg.margin_subset, tcfg.subset_seed(split))?;
        records.push(MarginRecord::new(0, split, dataset_margins(&model, &sub, &tcfg.lipschitz, tcfg.seed)?)?);
    }
    let stats = [EpochStats { epoch: 0, loss: f64::NAN, train_error: model.error_rate(&tr)?, test_error: Some(model.error_rate(&te)?) }];
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    output::write_stats(&out.join("stats.csv"), &records, &stats, None)?;
    output::write_margins(&out.join("margins.csv"), &records, |r| {
        let n = if r.split == Split::Train { tr.len() } else { te.len() };
        amr_core::data::subset_indices(n, tcfg.margin_subset, tcfg.subset_seed(r.split))
    })?;
    output::write_histograms(&out.join("hist.csv"), &records, &HistogramSpec::for_tau(cfg.tau))?;
    for r in &records {
        println!("{:<5} min {:.4} avg {:.4}", r.split.name(), r.min_margin, r.avg_abs_margin);
    }
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let p = out.join("report.json");
    let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    println!("experiment: {}", v["experiment"].as_str().unwrap_or("?"));
    summarize(&v["summary"])?;
    let summary = out.join("summary.json");
    write_json(&summary, &v["summary"])
}
