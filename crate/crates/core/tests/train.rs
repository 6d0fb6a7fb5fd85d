use amr_core::data::{filter_binary, synth_separable, LabeledDataset, Task};
use amr_core::margins::linear_distance;
use amr_core::models::{BinaryLinear, Model, ModelKind};
use amr_core::ndops::{dot, norm, sub, Matrix, RngStream};
use amr_core::objectives::{MarginLoss, Reduction, RegularizerConfig};
use amr_core::train::{adversarial_train, pgd_l2, pgd_l2_batch, svm_hard_margin_with, train, AttackConfig, Objective, SvmConfig, TrainConfig};
use proptest::prelude::*;

fn boxed_point(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.uniform_in(0.2, 0.8)).collect()
}

#[test]
fn pgd_below_the_exact_distance_never_flips() {
    let mut rng = RngStream::new(21);
    for _ in 0..1000 {
        let d = 2 + rng.below(6);
        let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let x = boxed_point(&mut rng, d);
        let bias = -dot(&w, &x) + rng.uniform_in(-0.5, 0.5);
        let m = Model::Binary(BinaryLinear { w, bias: Some(bias) });
        let y = m.predict(&x).unwrap();
        let dist = linear_distance(&m, &x).unwrap();
        if dist == 0.0 {
            continue;
        }
        let atk = AttackConfig { epsilon: 0.999 * dist, iterations: 100, step_size: dist / 20.0, ..Default::default() };
        let adv = pgd_l2(&m, &x, y, &atk).unwrap();
        assert_eq!(m.predict(&adv).unwrap(), y);
    }
}

#[test]
fn every_pgd_iterate_stays_feasible() {
    // The k-th iterate is the output of a k-step run, so checking every run
    // length checks every iterate.
    let mut rng = RngStream::new(22);
    let m = Model::init(ModelKind::Mlp { hidden: 10 }, 6, 3, true, 3).unwrap();
    let x0 = Matrix::from_vec(4, 6, (0..24).map(|_| rng.uniform()).collect()).unwrap();
    let labels = [0, 1, 2, 0];
    for random_start in [false, true] {
        for k in 0..30 {
            let atk = AttackConfig { epsilon: 0.3, step_size: 0.05, iterations: k, random_start, seed: 4 };
            let adv = pgd_l2_batch(&m, &x0, &labels, &atk).unwrap();
            for i in 0..4 {
                assert!(norm(&sub(adv.row(i), x0.row(i))) <= 0.3 * (1.0 + 1e-12));
                assert!(adv.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn pgd_flip_budget_bounds_the_margin_estimate_on_an_mlp() {
    // Bisection on ε for the smallest budget at which PGD flips gives an
    // upper bound on the distance to the boundary; a well-sampled
    // Lipschitz estimate is a lower bound, so the two must be ordered.
    use amr_core::margins::{lipschitz_margin_bound, LipschitzConfig};
    let mut rng = RngStream::new(23);
    let mut compared = 0;
    for seed in 0..10u64 {
        let m = Model::init(ModelKind::Mlp { hidden: 12 }, 4, 3, true, seed).unwrap();
        let x = boxed_point(&mut rng, 4);
        let y = m.predict(&x).unwrap();
        let flips = |eps: f64| {
            let atk = AttackConfig { epsilon: eps, step_size: eps / 25.0, iterations: 200, ..Default::default() };
            m.predict(&pgd_l2(&m, &x, y, &atk).unwrap()).unwrap() != y
        };
        if !flips(1.0) {
            continue;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            if flips(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let est = lipschitz_margin_bound(&m, &x, None, &LipschitzConfig { radius: 1.0, samples: 4096 }, &mut RngStream::new(seed)).unwrap();
        assert!(est.bound <= hi + 1e-9, "seed {seed}: estimate {} above PGD budget {hi}", est.bound);
        compared += 1;
    }
    assert!(compared >= 5);
}

fn small_multiclass(seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut rng = RngStream::new(seed);
    let make = |rng: &mut RngStream, n: usize| {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 3) as i32;
            for j in 0..6 {
                let centre = if j % 3 == y as usize { 0.7 } else { 0.3 };
                data.push((centre + 0.1 * rng.normal()).clamp(0.0, 1.0));
            }
            labels.push(y);
        }
        LabeledDataset::new(Matrix::from_vec(n, 6, data).unwrap(), labels, Task::Multiclass { classes: 3 }).unwrap()
    };
    (make(&mut rng, 60), make(&mut rng, 30))
}

#[test]
fn training_is_bit_deterministic() {
    let (tr, te) = small_multiclass(5);
    let cfg = TrainConfig { epochs: 4, batch_size: 16, reg: RegularizerConfig::default(), margin_log_epochs: vec![2, 4], margin_subset: 20, lipschitz: amr_core::margins::LipschitzConfig { radius: 1.0, samples: 8 }, ..Default::default() };
    let kind = ModelKind::Mlp { hidden: 8 };
    let a = train(kind, &tr, Some(&te), &cfg, Objective::Multiclass).unwrap();
    let b = train(kind, &tr, Some(&te), &cfg, Objective::Multiclass).unwrap();
    let bits = |h: &amr_core::train::TrainHistory| h.model.tensors().concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a, b);
    assert_eq!(a.margins.len(), 4);
    assert_eq!(a.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 4]);
    let c = train(kind, &tr, Some(&te), &TrainConfig { seed: 1, ..cfg }, Objective::Multiclass).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn zero_budget_adversarial_training_is_plain_training() {
    let (tr, te) = small_multiclass(6);
    let cfg = TrainConfig { epochs: 3, batch_size: 10, margin_log_epochs: vec![], ..Default::default() };
    let kind = ModelKind::Mlp { hidden: 5 };
    let plain = train(kind, &tr, Some(&te), &cfg, Objective::Multiclass).unwrap();
    let adv = adversarial_train(kind, &tr, Some(&te), &cfg, Objective::Multiclass, &AttackConfig::training(0.0)).unwrap();
    assert_eq!(plain.model, adv.model);
}

#[test]
fn mlp_learns_a_separable_toy_problem() {
    let (tr, te) = small_multiclass(7);
    let cfg = TrainConfig { epochs: 30, batch_size: 8, learning_rate: 0.05, margin_log_epochs: vec![], ..Default::default() };
    let h = train(ModelKind::Mlp { hidden: 16 }, &tr, Some(&te), &cfg, Objective::Multiclass).unwrap();
    let last = h.epochs.last().unwrap();
    assert_eq!(last.train_error, 0.0);
    assert!(last.test_error.unwrap() < 0.1);
}

#[test]
fn svm_margin_reaches_the_planted_margin() {
    for seed in 0..5 {
        let mut rng = RngStream::new(seed);
        let gamma = 0.1;
        let (ds, planted) = synth_separable(&mut rng, 80, 4, gamma).unwrap();
        let s = svm_hard_margin_with(&ds, &SvmConfig::default()).unwrap();
        assert!(s.margin >= gamma * (1.0 - 1e-6), "seed {seed}: {} < {gamma}", s.margin);
        assert!((norm(&s.direction) - 1.0).abs() < 1e-12);
        // The planted direction is feasible, so it cannot beat the optimum.
        let planted_margin = (0..ds.len()).map(|i| ds.labels()[i] as f64 * dot(&planted, ds.features().row(i))).fold(f64::INFINITY, f64::min);
        assert!(s.margin >= planted_margin * (1.0 - 1e-6));
        for &i in &s.support {
            let m = ds.labels()[i] as f64 * dot(&s.direction, ds.features().row(i));
            assert!((m - s.margin).abs() < 1e-5);
        }
    }
}

#[test]
fn gradient_descent_turns_toward_the_svm_direction() {
    let mut rng = RngStream::new(31);
    let (ds, _) = synth_separable(&mut rng, 60, 3, 0.05).unwrap();
    let svm = svm_hard_margin_with(&ds, &SvmConfig::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 20_000,
        batch_size: ds.len(),
        momentum: 0.0,
        nesterov: false,
        learning_rate: 1.0,
        bias: false,
        reduction: Reduction::Mean,
        margin_log_epochs: vec![],
        ..Default::default()
    };
    let obj = Objective::Binary { loss: MarginLoss::Logistic, unit_sphere: false };
    let h = train(ModelKind::BinaryLinear, &ds, None, &cfg, obj).unwrap();
    let Model::Binary(p) = &h.model else { unreachable!() };
    let cos = dot(&p.w, &svm.direction) / norm(&p.w);
    assert!(cos >= 0.99, "cosine {cos}");
}

#[test]
fn filter_binary_copies_rows_exactly() {
    let mut rng = RngStream::new(41);
    let n = 200;
    let x = Matrix::from_vec(n, 7, (0..n * 7).map(|_| rng.uniform()).collect()).unwrap();
    let labels: Vec<i32> = (0..n).map(|_| rng.below(10) as i32).collect();
    let ds = LabeledDataset::new(x, labels.clone(), Task::Multiclass { classes: 10 }).unwrap();
    let bin = filter_binary(&ds, 3, 8).unwrap();
    let kept: Vec<usize> = (0..n).filter(|&i| labels[i] == 3 || labels[i] == 8).collect();
    let hash = |rows: &mut dyn Iterator<Item = &[f64]>| {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for r in rows {
            r.iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    };
    assert_eq!(hash(&mut bin.features().row_iter()), hash(&mut kept.iter().map(|&i| ds.features().row(i))));
    assert!(kept.iter().zip(bin.labels()).all(|(&i, &y)| y == if labels[i] == 3 { 1 } else { -1 }));
}

proptest! {
    #[test]
    fn synthetic_data_is_reproducible(seed: u64, n in 1usize..40, d in 1usize..6) {
        let a = synth_separable(&mut RngStream::new(seed), n, d, 0.05).unwrap();
        let b = synth_separable(&mut RngStream::new(seed), n, d, 0.05).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dc_identity_holds_pointwise(t in -100.0f64..100.0, tau in 0.0f64..50.0) {
        let (h_tau, h_0) = amr_core::objectives::dc_pair(t, tau).unwrap();
        let lhs = h_tau - h_0;
        let rhs = tau - amr_core::objectives::truncate(t, tau).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + tau.abs() + t.abs()));
        if t <= 0.0 {
            prop_assert!((lhs - tau).abs() <= 1e-12 * (1.0 + tau + t.abs()));
        }
        if t >= tau {
            prop_assert!(lhs.abs() <= 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn fisher_check_is_consistent_off_the_default_grid(lambda in 0.0f64..2.0, tau in 0.5f64..6.0, eta in 0.05f64..0.95) {
        prop_assume!((eta - 0.5).abs() > 0.02);
        for loss in MarginLoss::ALL {
            let r = amr_core::objectives::fisher_check(loss, lambda, tau, &[eta], amr_core::objectives::AlphaGrid { step: 1e-2, bound: 20.0 }).unwrap();
            prop_assert!(r.consistent, "{:?} λ={} τ={} η={}: {:?}", loss, lambda, tau, eta, r.per_eta);
        }
    }
}
