mod common;

use infrasec_core::detection::{
    centralized_filter, consistent_initial_state, measurement_stream, relax_distributed,
    DetectionError, FilterConfig, InitialGuess, DEFAULT_THRESHOLD,
};
use infrasec_core::dynamics::{AttackScenario, Waveform};
use infrasec_core::model::DescriptorSystem;
use infrasec_core::scenario::reference_scenario;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference() -> DescriptorSystem {
    reference_scenario().assemble().unwrap()
}

fn x0(sys: &DescriptorSystem) -> DVector<f64> {
    consistent_initial_state(sys, &DVector::from_fn(sys.n(), |i, _| 0.05 * (i as f64 + 1.0)))
}

fn sup(run: &[DVector<f64>], other: &[DVector<f64>]) -> f64 {
    run.iter().zip(other).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
}

#[test]
fn stabilizing_gain_is_block_diagonal_and_hurwitz() {
    let sys = reference();
    let cfg = FilterConfig::stabilizing(&sys, 1.0, 10, DEFAULT_THRESHOLD).unwrap();
    assert!(cfg.abscissa() < 0.0);
    let g = cfg.gain();
    let c = sys.c();
    for q in 0..c.nrows() {
        let measured = (0..sys.n()).find(|&s| c[(q, s)] != 0.0).unwrap();
        for r in 0..sys.n() {
            if sys.partition().owner(r) != sys.partition().owner(measured) {
                assert_eq!(g[(r, q)], 0.0);
            }
        }
    }
}

#[test]
fn unattacked_residue_stays_small() {
    let sys = reference();
    let cfg = FilterConfig::stabilizing(&sys, 2.0, 1, DEFAULT_THRESHOLD).unwrap();
    let x0 = x0(&sys);
    let (_, y) = measurement_stream(&sys, &x0, None, 2.0, 1e-3).unwrap();
    let run = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
    assert!(run.max_residue() < 1e-7, "{:e}", run.max_residue());
    assert_eq!(run.first_alarm(DEFAULT_THRESHOLD), None);
}

#[test]
fn every_single_state_attack_is_flagged_within_the_shortest_window() {
    let sys = reference();
    let window = 5.0 / 700.0;
    let onset = 0.01;
    let horizon = onset + window;
    let cfg = FilterConfig::stabilizing(&sys, window, 1, DEFAULT_THRESHOLD).unwrap();
    let x0 = x0(&sys);
    for j in 0..sys.n() {
        let wave = Waveform::Step { magnitude: 1.0, start: onset };
        let attack = AttackScenario::new(&sys, vec![j], wave, horizon).unwrap();
        let (_, y) = measurement_stream(&sys, &x0, Some(&attack), horizon, 1e-4).unwrap();
        let run = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
        let alarm = run.first_alarm(DEFAULT_THRESHOLD).expect("attack must raise an alarm");
        assert!(alarm > onset && alarm <= onset + window + 1e-12, "state {j}: alarm at {alarm}");
    }
}

#[test]
fn relaxation_converges_to_the_centralized_filter() {
    let sys = reference();
    let cfg = FilterConfig::stabilizing(&sys, 1.0, 200, DEFAULT_THRESHOLD).unwrap();
    let x0 = x0(&sys);
    let attack = AttackScenario::new(&sys, vec![8], Waveform::step(0.5), 1.0).unwrap();
    let (_, y) = measurement_stream(&sys, &x0, Some(&attack), 1.0, 1e-3).unwrap();
    let central = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
    for guess in [InitialGuess::Zero, InitialGuess::Constant] {
        let run = relax_distributed(&sys, &cfg, &y, &x0, &guess).unwrap();
        run.ensure_converged().unwrap();
        assert!(sup(run.final_estimates(), &central.estimates) < 1e-6);
        assert!(sup(run.final_residues(), &central.residues) < 1e-6);
    }
}

#[test]
fn exact_initial_guess_is_a_fixed_point() {
    let sys = reference();
    let cfg = FilterConfig::stabilizing(&sys, 1.0, 200, DEFAULT_THRESHOLD).unwrap();
    let x0 = x0(&sys);
    let (_, y) = measurement_stream(&sys, &x0, None, 0.5, 1e-3).unwrap();
    let central = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
    let zero = relax_distributed(&sys, &cfg, &y, &x0, &InitialGuess::Zero).unwrap();
    let exact = InitialGuess::Trajectory(central.estimates.clone());
    let warm = relax_distributed(&sys, &cfg, &y, &x0, &exact).unwrap();
    assert!(warm.iterations() <= 2);
    assert!(warm.deltas[0] < 1e-6);
    assert!(sup(warm.final_estimates(), zero.final_estimates()) < 1e-7);
}

#[test]
fn uncoupled_blocks_converge_in_one_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = common::random_stable(&mut rng, 6);
    let partition = common::blocks(&[2, 3, 1]);
    let a = DMatrix::from_fn(6, 6, |r, c| {
        if partition.owner(r) == partition.owner(c) {
            base.a()[(r, c)]
        } else {
            0.0
        }
    });
    let sys = DescriptorSystem::new(base.e().clone(), a)
        .unwrap()
        .with_partition(partition)
        .unwrap();
    let cfg = FilterConfig::stabilizing(&sys, 1.0, 50, DEFAULT_THRESHOLD).unwrap();
    let x0 = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
    let (_, y) = measurement_stream(&sys, &x0, None, 1.0, 1e-2).unwrap();
    let run = relax_distributed(&sys, &cfg, &y, &x0, &InitialGuess::Constant).unwrap();
    let central = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
    // The first sweep is already exact; the second only confirms it.
    assert!(sup(&run.iterates[0], &central.estimates) < 1e-12);
    assert!(run.iterations() <= 2);
    assert_eq!(run.messages, 0);
    if run.iterations() == 2 {
        assert_eq!(run.deltas[1], 0.0);
    }
}

#[test]
fn iteration_cap_reports_no_convergence() {
    let sys = reference();
    let cfg = FilterConfig::stabilizing(&sys, 1.0, 2, DEFAULT_THRESHOLD).unwrap();
    let x0 = x0(&sys);
    let (_, y) = measurement_stream(&sys, &x0, None, 1.0, 1e-3).unwrap();
    let run = relax_distributed(&sys, &cfg, &y, &x0, &InitialGuess::Zero).unwrap();
    assert!(!run.converged);
    assert_eq!(run.iterations(), 2);
    assert!(matches!(
        run.ensure_converged(),
        Err(DetectionError::NoConvergence { iterations: 2, .. })
    ));
}
