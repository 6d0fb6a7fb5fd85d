//! CSV artifacts.
//!
//! Every file has a header row. Floats use Rust's shortest round-trip
//! formatting, so a rerun with the same config reproduces files byte for
//! byte.

use std::path::Path;

use amr_core::margins::{margin_stats, HistogramSpec, MarginRecord};
use amr_core::train::{EpochStats, RobustEval};

use crate::error::Result;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per margin record with the errors of that epoch.
///
/// `svm_margin`, when given, is written as a constant trailing column.
pub fn write_stats(path: &Path, records: &[MarginRecord], epochs: &[EpochStats], svm_margin: Option<f64>) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["epoch", "split", "min_margin", "avg_abs_margin", "train_err", "test_err"];
    if svm_margin.is_some() {
        header.push("svm_margin");
    }
    w.write_record(&header)?;
    for r in records {
        let e = epochs.iter().find(|e| e.epoch == r.epoch);
        let mut row = vec![
            r.epoch.to_string(),
            r.split.name().to_string(),
            r.min_margin.to_string(),
            r.avg_abs_margin.to_string(),
            opt(e.map(|e| e.train_error)),
            opt(e.and_then(|e| e.test_error)),
        ];
        if let Some(s) = svm_margin {
            row.push(s.to_string());
        }
        w.write_record(&row)?;
    }
    Ok(w.flush().map_err(csv::Error::from)?)
}

/// Loss and error after every epoch.
pub fn write_epochs(path: &Path, epochs: &[EpochStats]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "loss", "train_err", "test_err"])?;
    for e in epochs {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.train_error.to_string(), opt(e.test_error)])?;
    }
    Ok(w.flush().map_err(csv::Error::from)?)
}

/// Every signed margin; `indices(split)` maps record positions to example
/// indices of that split.
pub fn write_margins(path: &Path, records: &[MarginRecord], indices: impl Fn(&MarginRecord) -> Vec<usize>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "split", "example_index", "signed_margin"])?;
    for r in records {
        let idx = indices(r);
        for (i, m) in idx.iter().zip(&r.margins) {
            w.write_record([r.epoch.to_string(), r.split.name().to_string(), i.to_string(), m.to_string()])?;
        }
    }
    Ok(w.flush().map_err(csv::Error::from)?)
}

pub fn write_histograms(path: &Path, records: &[MarginRecord], spec: &HistogramSpec) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "split", "bin_left", "count"])?;
    for r in records {
        let h = margin_stats(&r.margins, spec)?.histogram;
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([r.epoch.to_string(), r.split.name().to_string(), h.bin_left(i).to_string(), c.to_string()])?;
        }
    }
    Ok(w.flush().map_err(csv::Error::from)?)
}

pub fn write_robust(path: &Path, evals: &[RobustEval]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epsilon", "clean_acc", "robust_acc"])?;
    for e in evals {
        w.write_record([e.epsilon.to_string(), e.clean_accuracy.to_string(), e.robust_accuracy.to_string()])?;
    }
    Ok(w.flush().map_err(csv::Error::from)?)
}
