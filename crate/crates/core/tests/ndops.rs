use amr_core::ndops::{dot, gemm, matmul, norm, sample_ball, spectral_norm, sub, Matrix, Op, RngStream};
use proptest::prelude::*;

fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn naive_product(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, s);
        }
    }
    c
}

proptest! {
    #[test]
    fn gemm_matches_triple_loop(m in 1usize..9, k in 1usize..9, n in 1usize..9, seed: u64, ta: bool, tb: bool) {
        let mut rng = RngStream::new(seed);
        let a = random_matrix(&mut rng, m, k);
        let b = random_matrix(&mut rng, k, n);
        let (a_in, op_a) = if ta { (a.transpose(), Op::T) } else { (a.clone(), Op::N) };
        let (b_in, op_b) = if tb { (b.transpose(), Op::T) } else { (b.clone(), Op::N) };
        let got = matmul(&a_in, op_a, &b_in, op_b).unwrap();
        let want = naive_product(&a, &b);
        for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
            prop_assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn gemm_is_bit_reproducible(m in 1usize..20, k in 1usize..20, n in 1usize..20, seed: u64) {
        let mut rng = RngStream::new(seed);
        let a = random_matrix(&mut rng, m, k);
        let b = random_matrix(&mut rng, k, n);
        let mut c1 = random_matrix(&mut rng, m, n);
        let mut c2 = c1.clone();
        gemm(0.5, &a, Op::N, &b, Op::N, 2.0, &mut c1).unwrap();
        gemm(0.5, &a, Op::N, &b, Op::N, 2.0, &mut c2).unwrap();
        prop_assert_eq!(c1.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c2.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn spectral_norm_is_absolutely_homogeneous(rows in 1usize..12, cols in 1usize..12, c in -50.0f64..50.0, seed: u64) {
        let mut rng = RngStream::new(seed);
        let w = random_matrix(&mut rng, rows, cols);
        let s = spectral_norm(&w, 300).unwrap();
        let sc = spectral_norm(&w.scaled(c), 300).unwrap();
        prop_assert!((sc - c.abs() * s).abs() <= 1e-10 * (1.0 + c.abs() * s));
    }

    #[test]
    fn spectral_norm_dominates_every_direction(rows in 1usize..10, cols in 1usize..10, seed: u64) {
        // Oracle: ‖Wv‖ for unit v never exceeds σ_max, and σ_max never
        // exceeds the Frobenius norm.
        let mut rng = RngStream::new(seed);
        let w = random_matrix(&mut rng, rows, cols);
        let s = spectral_norm(&w, 1000).unwrap();
        prop_assert!(s <= w.frobenius_norm() * (1.0 + 1e-12));
        for _ in 0..50 {
            let v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
            let wv = amr_core::ndops::matvec(&w, &v).unwrap();
            prop_assert!(norm(&wv) / norm(&v) <= s * (1.0 + 1e-6));
        }
    }

    #[test]
    fn dot_is_order_fixed(seed: u64, len in 0usize..200) {
        let mut rng = RngStream::new(seed);
        let a: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        prop_assert_eq!(dot(&a, &b).to_bits(), dot(&a.clone(), &b.clone()).to_bits());
        prop_assert!((dot(&a, &b) - dot(&b, &a)).abs() <= 1e-12 * (1.0 + norm(&a) * norm(&b)));
    }
}

#[test]
fn ball_containment_across_dimensions() {
    for d in [1usize, 2, 10, 784] {
        let draws = if d == 784 { 20_000 } else { 100_000 };
        let mut rng = RngStream::new(d as u64);
        let center: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
        let radius = 0.3 + d as f64 * 1e-3;
        for _ in 0..draws {
            let z = sample_ball(&mut rng, &center, radius).unwrap();
            assert!(norm(&sub(&z, &center)) <= radius, "draw left the ball in d = {d}");
        }
    }
}

/// Second radial moment `E‖z − c‖² / r²` from rejection sampling in the cube.
fn rejection_radial_moment(rng: &mut RngStream, d: usize, n: usize) -> f64 {
    let mut acc = 0.0;
    let mut kept = 0;
    while kept < n {
        let p: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let s: f64 = p.iter().map(|v| v * v).sum();
        if s <= 1.0 {
            acc += s;
            kept += 1;
        }
    }
    acc / n as f64
}

#[test]
fn ball_moments_match_rejection_sampling() {
    let n = 40_000;
    for d in [1usize, 2, 3, 5] {
        let mut rng = RngStream::new(100 + d as u64);
        let oracle = rejection_radial_moment(&mut rng, d, n);
        let center = vec![0.25; d];
        let mut second = 0.0;
        let mut mean = vec![0.0; d];
        for _ in 0..n {
            let z = sample_ball(&mut rng, &center, 2.0).unwrap();
            let u = sub(&z, &center);
            second += dot(&u, &u) / 4.0;
            for (m, v) in mean.iter_mut().zip(&u) {
                *m += v / 2.0;
            }
        }
        second /= n as f64;
        // Both estimate d / (d + 2) with standard error below 0.003.
        assert!((second - oracle).abs() < 0.015, "d = {d}: sampler {second} vs rejection {oracle}");
        assert!(mean.iter().all(|m| (m / n as f64).abs() < 0.015), "d = {d}: sampler is not centered");
    }
}
