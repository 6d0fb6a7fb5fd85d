//! Labeled datasets, binary subsets and synthetic separable data.

use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::ndops::{dot, norm, scale_in_place, Matrix, RngStream, Vector};
use crate::{Error, Result};

/// Label convention of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Task {
    /// Labels are `+1` / `-1`.
    Binary,
    /// Labels are `0..classes`.
    Multiclass { classes: usize },
}

impl Task {
    pub fn class_count(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass { classes } => classes,
        }
    }

    pub fn label_in_range(self, y: i32) -> bool {
        match self {
            Task::Binary => y == 1 || y == -1,
            Task::Multiclass { classes } => y >= 0 && (y as usize) < classes,
        }
    }
}

/// Feature matrix (one example per row) plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<i32>,
    task: Task,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<i32>, task: Task) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty("dataset has no examples"));
        }
        if features.rows() != labels.len() {
            return Err(shape_err!("{} feature rows but {} labels", features.rows(), labels.len()));
        }
        if let Task::Multiclass { classes } = task {
            if classes < 2 {
                return Err(invalid!("a multiclass task needs at least two classes, got {classes}"));
            }
        }
        if !features.is_finite() {
            return Err(invalid!("features contain non-finite values"));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| !task.label_in_range(y)) {
            return Err(invalid!("label {y} of example {i} is out of range for {task:?}"));
        }
        Ok(Self { features, labels, task })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn class_count(&self) -> usize {
        self.task.class_count()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn example(&self, i: usize) -> (&[f64], i32) {
        (self.features.row(i), self.labels[i])
    }

    /// True when every feature lies in `[0, 1]` (image data).
    pub fn in_unit_box(&self) -> bool {
        self.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid!("index {bad} out of range for {} examples", self.len()));
        }
        Self::new(self.features.select_rows(indices), indices.iter().map(|&i| self.labels[i]).collect(), self.task)
    }

    /// A fixed random subset of `size` examples, kept in dataset order.
    ///
    /// Returns the whole dataset when `size >= len`.
    pub fn subset(&self, size: usize, seed: u64) -> Result<Self> {
        Ok(self.select(&subset_indices(self.len(), size, seed))?)
    }
}

/// Sorted indices of a seeded random subset of `0..n`.
pub fn subset_indices(n: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if size >= n {
        return idx;
    }
    let mut rng = RngStream::new(seed);
    // Partial Fisher-Yates: the first `size` slots end up a uniform sample.
    for i in 0..size {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(size);
    idx.sort_unstable();
    idx
}

/// Keeps classes `class_pos` and `class_neg`, relabeled `+1` and `-1`.
///
/// Original order is preserved. Fails if either class is absent.
pub fn filter_binary(ds: &LabeledDataset, class_pos: i32, class_neg: i32) -> Result<LabeledDataset> {
    let Task::Multiclass { .. } = ds.task() else {
        return Err(invalid!("filter_binary needs a multiclass dataset"));
    };
    if class_pos == class_neg {
        return Err(invalid!("positive and negative class are both {class_pos}"));
    }
    for c in [class_pos, class_neg] {
        if !ds.task().label_in_range(c) {
            return Err(invalid!("class {c} is out of range for {:?}", ds.task()));
        }
    }
    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for (i, &y) in ds.labels().iter().enumerate() {
        if y == class_pos || y == class_neg {
            keep.push(i);
            labels.push(if y == class_pos { 1 } else { -1 });
        }
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::Empty("binary subset is missing one of its classes"));
    }
    LabeledDataset::new(ds.features().select_rows(&keep), labels, Task::Binary)
}

/// Linearly separable binary data with a planted unit direction.
///
/// Points are uniform in the box `[-1, 1]^d`; candidates with
/// `|<w*, x>| < gamma` are rejected and the rest are labeled by side, so every
/// returned example has `y <w*, x> >= gamma`. Fails only when the rejection
/// sampler cannot find points, i.e. `gamma` is out of reach of the box.
pub fn synth_separable(rng: &mut RngStream, n: usize, d: usize, gamma: f64) -> Result<(LabeledDataset, Vector)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid!("gamma must be positive, got {gamma}"));
    }
    if n == 0 || d == 0 {
        return Err(Error::Empty("synthetic dataset needs n >= 1 and d >= 1"));
    }
    let mut w: Vector = (0..d).map(|_| rng.normal()).collect();
    let len = norm(&w);
    scale_in_place(&mut w, 1.0 / len);

    let max_attempts = 10_000usize.saturating_mul(n).max(1_000_000);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut x = alloc::vec![0.0; d];
    let mut attempts = 0;
    while labels.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(invalid!("gamma = {gamma} is unreachable: rejection sampling found {} of {n} points", labels.len()));
        }
        x.iter_mut().for_each(|v| *v = rng.uniform_in(-1.0, 1.0));
        let s = dot(&w, &x);
        if s.abs() >= gamma {
            data.extend_from_slice(&x);
            labels.push(if s > 0.0 { 1 } else { -1 });
        }
    }
    let ds = LabeledDataset::new(Matrix::from_vec(n, d, data)?, labels, Task::Binary)?;
    Ok((ds, w))
}
