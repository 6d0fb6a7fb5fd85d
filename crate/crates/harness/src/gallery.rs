//! Minimum-perturbation adversarial images of a linear model.

use std::io::Write;
use std::path::Path;

use amr_core::data::LabeledDataset;
use amr_core::margins::linear_adversarial;
use amr_core::models::Model;
use amr_core::ndops::{norm, sub};

use crate::error::{io_err, HarnessError, Result};

/// Binary (P5) PGM with maxval 255; pixels in `[0, 1]` are scaled and
/// values outside are clamped.
pub fn encode_pgm(pixels: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Side length of a square image with `d` pixels.
fn square_side(d: usize) -> Result<usize> {
    let s = (d as f64).sqrt().round() as usize;
    if s * s != d {
        return Err(HarnessError::Config(format!("{d} features do not form a square image")));
    }
    Ok(s)
}

/// Writes, for every `(epoch, model)` snapshot and each of the first
/// `count` examples, the closed-form adversarial image as
/// `epoch{E}_ex{I}.pgm`, the clean images as `clean_ex{I}.pgm`, and an
/// `index.csv` with the perturbation norm of every file.
pub fn emit_adversarial_gallery(snapshots: &[(usize, Model)], examples: &LabeledDataset, count: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let side = square_side(examples.dim())?;
    let count = count.min(examples.len());
    let write = |name: &str, pixels: &[f64]| -> Result<()> {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).map_err(io_err(&p))?;
        f.write_all(&encode_pgm(pixels, side, side)).map_err(io_err(&p))
    };
    for i in 0..count {
        write(&format!("clean_ex{i}.pgm"), examples.example(i).0)?;
    }
    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    index.write_record(["epoch", "example_index", "file", "perturbation_norm"])?;
    for (epoch, model) in snapshots {
        let Model::Binary(p) = model else {
            return Err(HarnessError::Config(format!("the gallery needs a binary linear model, got {:?}", model.kind())));
        };
        if p.bias.is_some() {
            return Err(HarnessError::Config("the gallery needs a bias-free linear model".into()));
        }
        for i in 0..count {
            let x = examples.example(i).0;
            let adv = linear_adversarial(&p.w, x)?;
            let name = format!("epoch{epoch:04}_ex{i}.pgm");
            write(&name, &adv)?;
            index.write_record([epoch.to_string(), i.to_string(), name, norm(&sub(&adv, x)).to_string()])?;
        }
    }
    Ok(index.flush().map_err(csv::Error::from)?)
}
