use infrasec_core::dynamics::{cost_deviation, AttackScenario, Waveform};
use infrasec_core::game::{
    build_payoff, count_allocations, enumerate_allocations, enumerate_attacks, fictitious_play,
    lp_minimax, restricted_game, AttackerRestriction, DefenderRestriction, GameSetup,
    PayoffSettings,
};
use infrasec_core::model::DescriptorSystem;
use infrasec_core::scenario::reference_scenario;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference() -> DescriptorSystem {
    reference_scenario().assemble().unwrap()
}

fn settings() -> PayoffSettings {
    PayoffSettings {
        period: 5.0,
        waveform: Waveform::step(1.0),
        step: 1e-3,
    }
}

fn small_setup(budget: u64) -> GameSetup {
    GameSetup {
        max_attacked: 2,
        include_empty: false,
        budget,
        granularity: 100,
        exact_budget: true,
        allocation_cap: 10_000,
        payoff: settings(),
    }
}

#[test]
fn compositions_match_brute_force() {
    for (subsystems, budget, g, exact) in [(3, 9, 1, true), (3, 9, 1, false), (4, 1000, 200, true), (2, 7, 2, false)] {
        let mut brute = Vec::new();
        let units = budget / g;
        let mut tuple = vec![1u64; subsystems];
        loop {
            let total: u64 = tuple.iter().sum();
            if total <= units && (!exact || total == units) {
                brute.push(tuple.iter().map(|u| u * g).collect::<Vec<_>>());
            }
            // Odometer over [1, units]^subsystems, last digit fastest.
            let mut pos = subsystems;
            while pos > 0 && tuple[pos - 1] == units {
                tuple[pos - 1] = 1;
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            tuple[pos - 1] += 1;
        }
        let got: Vec<Vec<u64>> = enumerate_allocations(subsystems, budget, g, exact, 100_000)
            .unwrap()
            .into_iter()
            .map(|a| a.0)
            .collect();
        assert_eq!(got, brute);
        assert_eq!(count_allocations(subsystems, budget, g, exact), brute.len() as u128);
    }
}

#[test]
fn payoff_entries_equal_cost_deviation_bitwise() {
    let sys = reference();
    let attacks = enumerate_attacks(&[0, 5, 8, 11], 3, false).unwrap();
    let allocations = enumerate_allocations(6, 900, 100, true, 1000).unwrap();
    let payoff = build_payoff(&sys, &attacks, &allocations, &settings()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..15 {
        let r = rng.random_range(0..attacks.len());
        let c = rng.random_range(0..allocations.len());
        let windows: Vec<f64> = attacks[r]
            .iter()
            .map(|&j| allocations[c].window(5.0, sys.partition().owner(j)))
            .collect();
        let horizon = windows.iter().copied().fold(0.0, f64::max);
        let attack = AttackScenario::new(&sys, attacks[r].clone(), Waveform::step(1.0), horizon).unwrap();
        let dp = cost_deviation(&sys, &attack, &windows, 1e-3).unwrap();
        assert_eq!(payoff.values()[(r, c)], dp.total);
    }
}

#[test]
fn payoff_is_nonincreasing_in_every_allocation() {
    let sys = reference();
    let attacks = enumerate_attacks(&(0..12).collect::<Vec<_>>(), 1, false).unwrap();
    let allocations = enumerate_allocations(6, 900, 100, false, 1000).unwrap();
    let payoff = build_payoff(&sys, &attacks, &allocations, &settings()).unwrap();
    for (c1, a1) in allocations.iter().enumerate() {
        for (c2, a2) in allocations.iter().enumerate() {
            if a1.0.iter().zip(&a2.0).all(|(x, y)| x <= y) {
                for r in 0..attacks.len() {
                    assert!(payoff.values()[(r, c2)] <= payoff.values()[(r, c1)]);
                }
            }
        }
    }
}

#[test]
fn restrictions_move_the_value_the_right_way() {
    let sys = reference();
    let setup = small_setup(900);
    let (_, full) = restricted_game(&sys, &setup, &AttackerRestriction::All, DefenderRestriction::All).unwrap();
    let (_, electric_attacker) =
        restricted_game(&sys, &setup, &AttackerRestriction::Electric, DefenderRestriction::All).unwrap();
    let (_, electric_defender) =
        restricted_game(&sys, &setup, &AttackerRestriction::All, DefenderRestriction::Electric).unwrap();
    assert!(electric_attacker.value <= full.value);
    assert!(electric_defender.value >= full.value);
    let (_, richer) =
        restricted_game(&sys, &small_setup(1200), &AttackerRestriction::All, DefenderRestriction::All).unwrap();
    assert!(richer.value <= full.value);
}

#[test]
fn fictitious_play_approaches_the_lp_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let (m, n) = (rng.random_range(1..12), rng.random_range(1..30));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let lp = lp_minimax(&a).unwrap();
        let fp = fictitious_play(&a, 1_000_000, 1e-3);
        assert!(fp.converged, "{m}x{n} after {} rounds", fp.iterations);
        assert!((fp.value - lp.value).abs() < 1e-3, "{} vs {}", fp.value, lp.value);
        // The LP value lies inside every fictitious-play bracket.
        assert!(fp.value - fp.defender_gain <= lp.value + 1e-12);
        assert!(lp.value <= fp.value + fp.attacker_gain + 1e-12);
    }
}

fn matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..9, 1usize..9).prop_flat_map(|(m, n)| {
        prop::collection::vec(-10.0f64..10.0, m * n)
            .prop_map(move |v| DMatrix::from_row_slice(m, n, &v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lp_equilibrium_is_certified(a in matrix()) {
        let eq = lp_minimax(&a).unwrap();
        let tol = 1e-9 * a.amax().max(1.0);
        prop_assert!(eq.certificate(&a).holds(tol));
        for p in [&eq.attacker, &eq.defender] {
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let maximin = a.row_iter().map(|r| r.min()).fold(f64::NEG_INFINITY, f64::max);
        let minimax = a.column_iter().map(|c| c.max()).fold(f64::INFINITY, f64::min);
        prop_assert!(maximin - tol <= eq.value && eq.value <= minimax + tol);
    }

    #[test]
    fn lp_value_is_affine_equivariant(a in matrix(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let v = lp_minimax(&a).unwrap().value;
        let moved = lp_minimax(&a.map(|x| scale * x + shift)).unwrap().value;
        prop_assert!((moved - (scale * v + shift)).abs() <= 1e-8 * (1.0 + moved.abs()));
        let swapped = lp_minimax(&(-a.transpose())).unwrap().value;
        prop_assert!((swapped + v).abs() <= 1e-8 * (1.0 + v.abs()));
    }
}
