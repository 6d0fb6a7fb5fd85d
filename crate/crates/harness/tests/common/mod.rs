#![allow(dead_code)]

use std::path::Path;

use amr_core::ndops::RngStream;
use amr_harness::idx::{save_idx, IdxImages, MnistFiles};

/// A tiny MNIST look-alike: class `c` lights up a horizontal band whose
/// position depends on `c`, over uniform background noise.
pub fn write_synthetic_mnist(dir: &Path, per_class_train: usize, per_class_test: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let files = MnistFiles::in_dir(dir);
    let mut rng = RngStream::new(seed);
    let mut make = |per_class: usize| {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * 10 {
            let c = i % 10;
            for r in 0..28 {
                for _ in 0..28 {
                    let band = r >= 2 + 2 * c && r < 4 + 2 * c;
                    let v = if band { 0.7 + 0.3 * rng.uniform() } else { 0.25 * rng.uniform() };
                    pixels.push((v * 255.0).round() as u8);
                }
            }
            labels.push(c as u8);
        }
        (IdxImages { rows: 28, cols: 28, pixels }, labels)
    };
    let (tr, trl) = make(per_class_train);
    let (te, tel) = make(per_class_test);
    save_idx(&tr, &trl, &files.train_images, &files.train_labels).unwrap();
    save_idx(&te, &tel, &files.test_images, &files.test_labels).unwrap();
}

/// Overrides that shrink every experiment to a few seconds.
pub fn small_overrides(data: &Path, out: &Path) -> Vec<(String, String)> {
    [
        ("data_dir", data.display().to_string()),
        ("out_dir", out.display().to_string()),
        ("hidden", "8".into()),
        ("train_subset", "0".into()),
        ("epochs", "3".into()),
        ("margin_subset", "20".into()),
        ("lipschitz_samples", "8".into()),
        ("epsilons", "0.5,1".into()),
        ("attack_iterations", "10".into()),
        ("attack_subset", "20".into()),
        ("adv_iterations", "3".into()),
        ("gallery_count", "2".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
