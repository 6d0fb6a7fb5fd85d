//! Dense numerics shared by every other module.
//!
//! Vectors are plain `Vec<f64>`/`&[f64]`; [`Matrix`] is row-major. All
//! reductions accumulate left to right so identical inputs give bit-identical
//! outputs.

mod matrix;
mod rng;

use alloc::vec::Vec;

pub use matrix::{gemm, matmul, matvec, matvec_t, Matrix, Op};
pub use rng::RngStream;

use crate::error::{invalid, shape_err};
use crate::Result;

pub type Vector = Vec<f64>;

/// Power iterations used by [`spectral_norm`] unless told otherwise.
pub const DEFAULT_POWER_ITERS: usize = 100;

const POWER_START_SEED: u64 = 0x5bd1_e995;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(sq_norm(a))
}

/// `y ← y + alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale_in_place(a: &mut [f64], c: f64) {
    a.iter_mut().for_each(|v| *v *= c);
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(a: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in a.iter().enumerate().skip(1) {
        if v > a[best] {
            best = i;
        }
    }
    best
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Uniform draw from the closed l2 ball `B(center, radius)`.
///
/// Direction is a normalized Gaussian, radial law `radius · u^(1/d)`.
pub fn sample_ball(rng: &mut RngStream, center: &[f64], radius: f64) -> Result<Vector> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid!("ball radius must be positive and finite, got {radius}"));
    }
    let d = center.len();
    if d == 0 {
        return Err(shape_err!("cannot sample a ball in zero dimensions"));
    }
    let mut dir: Vector = (0..d).map(|_| rng.normal()).collect();
    let mut len = norm(&dir);
    while len == 0.0 {
        dir.iter_mut().for_each(|v| *v = rng.normal());
        len = norm(&dir);
    }
    let rho = radius * libm::pow(rng.uniform(), 1.0 / d as f64);
    let mut step = rho / len;
    loop {
        let z: Vector = center.iter().zip(&dir).map(|(c, u)| c + step * u).collect();
        let dist = norm(&sub(&z, center));
        if dist <= radius {
            return Ok(z);
        }
        // Rounding pushed the point just outside; pull it back in.
        step *= (radius / dist) * (1.0 - 4.0 * f64::EPSILON);
    }
}

/// Power-iteration estimate of the largest singular value of `w`.
///
/// The start vector is drawn from a fixed seed, so the result is a pure
/// function of `w` and `iters`. The estimate is nondecreasing in `iters` and
/// never exceeds the Frobenius norm. A zero matrix yields 0.
pub fn spectral_norm(w: &Matrix, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(invalid!("power iteration needs at least one step"));
    }
    if w.rows() == 0 || w.cols() == 0 || w.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut rng = RngStream::new(POWER_START_SEED);
    let mut v: Vector = (0..w.cols()).map(|_| rng.normal()).collect();
    let n = norm(&v);
    scale_in_place(&mut v, 1.0 / n);
    for _ in 0..iters {
        let u = matvec(w, &v)?;
        let next = matvec_t(w, &u)?;
        let len = norm(&next);
        if len == 0.0 {
            // Start vector fell in the null space; the estimate below stays 0
            // only if w annihilates it, so restart along the first nonzero row.
            let row = w.row_iter().find(|r| r.iter().any(|&x| x != 0.0)).unwrap_or(w.row(0));
            v = row.to_vec();
            let n = norm(&v);
            scale_in_place(&mut v, 1.0 / n);
            continue;
        }
        v = next;
        scale_in_place(&mut v, 1.0 / len);
    }
    Ok(norm(&matvec(w, &v)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0, -3.0, -0.5]), 2);
    }

    #[test]
    fn ball_rejects_bad_radius() {
        let mut r = RngStream::new(0);
        assert!(sample_ball(&mut r, &[0.0], 0.0).is_err());
        assert!(sample_ball(&mut r, &[0.0], -1.0).is_err());
        assert!(sample_ball(&mut r, &[0.0], f64::NAN).is_err());
        assert!(sample_ball(&mut r, &[], 1.0).is_err());
    }

    #[test]
    fn vanishing_radius_returns_center() {
        let mut r = RngStream::new(5);
        let c = [0.5, -1.0, 2.0];
        for _ in 0..100 {
            assert_eq!(sample_ball(&mut r, &c, 1e-20).unwrap(), c.to_vec());
        }
    }

    #[test]
    fn ball_containment_d3() {
        let mut r = RngStream::new(1);
        let c = [1.0, -2.0, 0.25];
        let max = (0..10_000)
            .map(|_| norm(&sub(&sample_ball(&mut r, &c, 2.0).unwrap(), &c)))
            .fold(0.0, f64::max);
        assert!(max <= 2.0);
        assert!(max > 1.9);
    }

    #[test]
    fn spectral_norm_closed_forms() {
        let i3 = Matrix::identity(3);
        assert!((spectral_norm(&i3, DEFAULT_POWER_ITERS).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_diag(&[3.0, 1.0]);
        assert!((spectral_norm(&d, DEFAULT_POWER_ITERS).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2), 10).unwrap(), 0.0);
        assert!(spectral_norm(&i3, 0).is_err());
    }

    #[test]
    fn spectral_norm_monotone_and_below_frobenius() {
        let w = Matrix::from_vec(3, 4, vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.1, 3.0, 0.0, -2.0, 1.0, 1.0, 1.0]).unwrap();
        let mut prev = 0.0;
        for it in 1..30 {
            let s = spectral_norm(&w, it).unwrap();
            assert!(s >= prev * (1.0 - 1e-14), "iteration {it}: {s} < {prev}");
            assert!(s <= w.frobenius_norm());
            prev = s;
        }
    }
}
