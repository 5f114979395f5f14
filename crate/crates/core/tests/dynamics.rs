mod common;

use infrasec_core::dynamics::{
    cost_curve, cost_deviation, integrate_attacked, transfer_deviation, AttackScenario, Waveform,
};
use infrasec_core::scenario::reference_scenario;
use nalgebra::{Complex, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn step_response_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [2, 3, 5, 8] {
        let sys = common::random_stable(&mut rng, n);
        let j = rng.random_range(0..n);
        let attack = AttackScenario::new(&sys, vec![j], Waveform::step(1.5), 2.0).unwrap();
        let traj = integrate_attacked(&sys, &attack, 1e-3).unwrap();
        let exact = common::expm_step_response(&sys, j, 1.5, &traj.times);
        let err = common::sup_rel_error(&traj.samples, &exact);
        assert!(err < 1e-5, "n = {n}: relative error {err:e}");
    }
}

#[test]
fn trapezoid_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sys = common::random_stable(&mut rng, 4);
    let attack = AttackScenario::new(&sys, vec![1], Waveform::step(1.0), 1.0).unwrap();
    let err = |h: f64| {
        let traj = integrate_attacked(&sys, &attack, h).unwrap();
        common::sup_rel_error(&traj.samples, &common::expm_step_response(&sys, 1, 1.0, &traj.times))
    };
    let ratio = err(2e-2) / err(1e-2);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn algebraic_rows_satisfy_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sys = common::random_descriptor(&mut rng, 5);
    let attack = AttackScenario::new(&sys, vec![0, 4], Waveform::step(1.0), 1.0).unwrap();
    let traj = integrate_attacked(&sys, &attack, 1e-2).unwrap();
    for x in &traj.samples[1..] {
        let row: f64 = (0..5).map(|c| sys.a()[(4, c)] * x[c]).sum::<f64>() + 1.0;
        assert!(row.abs() < 1e-10, "constraint residual {row:e}");
    }
}

#[test]
fn transfer_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let n = rng.random_range(2..7);
        let sys = if rng.random_bool(0.5) {
            common::random_stable(&mut rng, n)
        } else {
            common::random_descriptor(&mut rng, n)
        };
        let s = Complex::new(rng.random_range(0.0..3.0), rng.random_range(-3.0..3.0));
        let inv = common::pencil_inverse(&sys, s);
        for i in 0..n {
            for j in 0..n {
                let t = transfer_deviation(&sys, j, i, s).unwrap();
                let want = inv[(i, j)];
                assert!((t - want).norm() <= 1e-10 * want.norm().max(1e-12));
            }
        }
    }
}

#[test]
fn cost_window_matches_fine_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 4;
    let sys = common::random_stable(&mut rng, n);
    let cost = DVector::from_fn(n, |i, _| 0.5 + i as f64);
    let sys = sys.with_cost(cost.clone());
    let curve = cost_curve(&sys, 2, Waveform::step(1.0), 1.0, 1e-3).unwrap();
    // Reference: composite Simpson on the exact response.
    let m = 4000;
    let times: Vec<f64> = (0..=m).map(|k| 0.73 * k as f64 / m as f64).collect();
    let exact = common::expm_step_response(&sys, 2, 1.0, &times);
    let f: Vec<f64> = exact.iter().map(|x| cost.dot(&x.abs())).collect();
    let h = 0.73 / m as f64;
    let simpson = h / 3.0
        * (f[0] + f[m] + (1..m).map(|k| if k % 2 == 1 { 4.0 } else { 2.0 } * f[k]).sum::<f64>());
    let got = curve.at(0.73).unwrap();
    assert!((got - simpson).abs() < 1e-5 * simpson, "{got} vs {simpson}");
}

#[test]
fn decoupled_reference_attack_costs_nothing() {
    let scenario = reference_scenario().decoupled();
    let sys = scenario.assemble().unwrap();
    for label in ["hg[S1]", "hg[S2]", "hw[T1]", "hw[T2]"] {
        let j = sys.index_of(label).unwrap();
        let attack = AttackScenario::new(&sys, vec![j], Waveform::step(1.0), 2.0).unwrap();
        let dp = cost_deviation(&sys, &attack, &[2.0], 1e-3).unwrap();
        assert_eq!(dp.total, 0.0, "{label}");
    }
}

#[test]
fn cost_deviation_adds_per_state_curves() {
    let sys = reference_scenario().assemble().unwrap();
    let targets = vec![0, 8, 11];
    let windows = [0.5, 1.25, 2.5];
    let attack = AttackScenario::new(&sys, targets.clone(), Waveform::step(1.0), 2.5).unwrap();
    let dp = cost_deviation(&sys, &attack, &windows, 1e-3).unwrap();
    let mut sum = 0.0;
    for (&j, &w) in targets.iter().zip(&windows) {
        sum += cost_curve(&sys, j, Waveform::step(1.0), w, 1e-3).unwrap().at(w).unwrap();
    }
    assert_eq!(dp.total, sum);
}

fn small_system() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 2usize..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn response_is_linear_in_the_attack((seed, n) in small_system(), mag in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = common::random_stable(&mut rng, n);
        let one = |targets: Vec<usize>, m: f64| {
            let a = AttackScenario::new(&sys, targets, Waveform::step(m), 0.5).unwrap();
            integrate_attacked(&sys, &a, 1e-2).unwrap().samples
        };
        let a = one(vec![0], mag);
        let b = one(vec![n - 1], mag);
        let both = one(vec![0, n - 1], mag);
        let unit = one(vec![0], 1.0);
        for k in 0..a.len() {
            prop_assert!((&a[k] + &b[k] - &both[k]).amax() <= 1e-12 * (1.0 + both[k].amax()));
            prop_assert!((&unit[k] * mag - &a[k]).amax() <= 1e-12 * (1.0 + a[k].amax()));
        }
    }

    #[test]
    fn cost_is_nondecreasing_in_the_window((seed, n) in small_system(), w1 in 0.01f64..1.0, w2 in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = common::random_stable(&mut rng, n).with_cost(DVector::from_element(n, 1.0));
        let curve = cost_curve(&sys, 0, Waveform::step(1.0), 1.0, 1e-2).unwrap();
        let (lo, hi) = (w1.min(w2), w1.max(w2));
        prop_assert!(curve.at(lo).unwrap() <= curve.at(hi).unwrap());
    }

    #[test]
    fn cost_is_absolutely_homogeneous((seed, n) in small_system(), k in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = common::random_stable(&mut rng, n).with_cost(DVector::from_element(n, 1.0));
        let base = cost_curve(&sys, 0, Waveform::step(1.0), 0.5, 1e-2).unwrap().at(0.5).unwrap();
        let scaled = cost_curve(&sys, 0, Waveform::step(k), 0.5, 1e-2).unwrap().at(0.5).unwrap();
        prop_assert!((scaled - k.abs() * base).abs() <= 1e-12 * (1.0 + scaled));
    }
}
