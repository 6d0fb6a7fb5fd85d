mod common;

use std::path::Path;

use amr_core::data::LabeledDataset;
use amr_core::margins::{linear_distance, Split};
use amr_harness::checkpoint::load_checkpoint;
use amr_harness::config::ExperimentConfig;
use amr_harness::experiments::{load_data, run_experiment};
use common::{small_overrides, snapshot, write_synthetic_mnist};
use serde_json::Value;

fn config(kind: &str, data: &Path, out: &Path, extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut o = vec![("experiment".to_string(), kind.to_string())];
    o.extend(small_overrides(data, out));
    o.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    ExperimentConfig::parse("", &o).unwrap()
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn every_experiment_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_mnist(&data, 12, 6, 1);
    for kind in ["tradeoff", "amr_vs_std", "lcr_vs_amr", "adv_baseline", "svm_ref", "fisher"] {
        let extra: &[(&str, &str)] = if kind == "fisher" { &[("fisher_step", "0.05")] } else { &[] };
        let a = tmp.path().join(format!("{kind}_a"));
        let b = tmp.path().join(format!("{kind}_b"));
        run_experiment(&config(kind, &data, &a, extra)).unwrap();
        run_experiment(&config(kind, &data, &b, extra)).unwrap();
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        assert!(!sa.is_empty());
        assert_eq!(sa.len(), sb.len(), "{kind}: different file sets");
        for ((na, ca), (nb, cb)) in sa.iter().zip(&sb) {
            assert_eq!(na, nb);
            if na != "report.json" && na != "config.txt" {
                assert!(ca == cb, "{kind}: {na} differs between identical runs");
            }
        }
    }
}

#[test]
fn report_echoes_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_mnist(&data, 8, 4, 2);
    let out = tmp.path().join("run");
    let cfg = config("amr_vs_std", &data, &out, &[("lambda", "0.25"), ("seed", "17")]);
    run_experiment(&cfg).unwrap();
    let r = read_report(&out);
    assert_eq!(r["experiment"], "amr_vs_std");
    assert_eq!(r["config"]["lambda"], 0.25);
    assert_eq!(r["config"]["seed"], 17);
    assert_eq!(r["config"]["hidden"], 8);
    let text = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert_eq!(ExperimentConfig::parse(&text, &[]).unwrap().render(), cfg.render());
    let models = r["summary"]["models"].as_array().unwrap();
    assert_eq!(models.iter().map(|m| m["name"].as_str().unwrap()).collect::<Vec<_>>(), ["std", "amr"]);
    for m in models {
        assert_eq!(m["spectral_norms"].as_array().unwrap().len(), 2);
        assert_eq!(m["robust"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn csv_files_have_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_mnist(&data, 8, 4, 3);
    let out = tmp.path().join("run");
    run_experiment(&config("tradeoff", &data, &out, &[])).unwrap();
    let header = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("stats.csv"), "epoch,split,min_margin,avg_abs_margin,train_err,test_err,svm_margin");
    assert_eq!(header("epochs.csv"), "epoch,loss,train_err,test_err");
    assert_eq!(header("margins.csv"), "epoch,split,example_index,signed_margin");
    assert_eq!(header("hist.csv"), "epoch,split,bin_left,count");
    assert_eq!(header("robust.csv"), "epsilon,clean_acc,robust_acc");

    // One stats row per split and logged epoch; all three epochs are logged.
    let rows = std::fs::read_to_string(out.join("stats.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 2 * 3);
    let margins = std::fs::read_to_string(out.join("margins.csv")).unwrap().lines().count() - 1;
    // Binary 0/1 split: 16 train examples, 8 test, both below the subset size.
    assert_eq!(margins, 3 * (16 + 8));
}

fn test_margin_subset(cfg: &ExperimentConfig, te: &LabeledDataset) -> LabeledDataset {
    let tcfg = cfg.train_config(cfg.regularizer().unwrap()).unwrap();
    te.subset(tcfg.margin_subset, tcfg.subset_seed(Split::Test)).unwrap()
}

#[test]
fn gallery_norms_are_exact_distances() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_mnist(&data, 8, 4, 4);
    let out = tmp.path().join("run");
    let cfg = config("tradeoff", &data, &out, &[]);
    run_experiment(&cfg).unwrap();
    let model = load_checkpoint(out.join("model.ckpt")).unwrap();
    let (_, te) = load_data(&cfg).unwrap();
    let sub = test_margin_subset(&cfg, &te);

    let gallery = out.join("gallery");
    let mut rd = csv::Reader::from_path(gallery.join("index.csv")).unwrap();
    let mut epochs = Vec::new();
    for rec in rd.records() {
        let r = rec.unwrap();
        let (epoch, i): (usize, usize) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        epochs.push(epoch);
        let pgm = std::fs::read(gallery.join(&r[2])).unwrap();
        assert!(pgm.starts_with(b"P5\n28 28\n255\n"));
        assert_eq!(pgm.len(), b"P5\n28 28\n255\n".len() + 784);
        if epoch == 3 {
            let exact = linear_distance(&model, sub.example(i).0).unwrap();
            let norm: f64 = r[3].parse().unwrap();
            assert!((norm - exact).abs() <= 1e-9 * (1.0 + exact), "example {i}: {norm} vs {exact}");
        }
    }
    epochs.dedup();
    assert_eq!(epochs, [1, 3]);
    for i in 0..2 {
        assert!(gallery.join(format!("clean_ex{i}.pgm")).is_file());
    }
}

#[test]
fn missing_data_is_a_clear_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("tradeoff", &tmp.path().join("nowhere"), &tmp.path().join("out"), &[]);
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("nowhere"), "{err}");
}
