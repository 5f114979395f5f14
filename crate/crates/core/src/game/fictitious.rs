use nalgebra::DMatrix;

use super::{EquilibriumResult, Solver};

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Alternating fictitious play. Each round the attacker best-responds to
/// the defender's empirical mixture (uniform before the first defender
/// move), then the defender best-responds to the attacker's. Ties go to the
/// lowest index. Stops once `max_r (A y) - min_c (x^T A)` falls below
/// `tol` times the payoff span, or after `max_iters` rounds.
pub fn fictitious_play(payoff: &DMatrix<f64>, max_iters: usize, tol: f64) -> EquilibriumResult {
    let (rows, cols) = payoff.shape();
    assert!(rows > 0 && cols > 0, "empty payoff matrix");
    let span = payoff.max() - payoff.min();
    let threshold = tol * if span > 0.0 { span } else { 1.0 };
    // Row-major copy so both row and column updates are contiguous.
    let transposed = payoff.transpose();

    // against_defender[r] = sum over defender plays c of A[r, c].
    let mut against_defender = vec![0.0; rows];
    // against_attacker[c] = sum over attacker plays r of A[r, c].
    let mut against_attacker = vec![0.0; cols];
    let mut count_a = vec![0usize; rows];
    let mut count_d = vec![0usize; cols];
    let uniform: Vec<f64> = (0..rows).map(|r| payoff.row(r).sum() / cols as f64).collect();

    let mut rounds = 0;
    let mut converged = false;
    while rounds < max_iters.max(1) {
        let r = if rounds == 0 {
            argmax_first(&uniform)
        } else {
            argmax_first(&against_defender)
        };
        count_a[r] += 1;
        for (acc, v) in against_attacker.iter_mut().zip(transposed.column(r).iter()) {
            *acc += v;
        }
        let c = argmin_first(&against_attacker);
        count_d[c] += 1;
        for (acc, v) in against_defender.iter_mut().zip(payoff.column(c).iter()) {
            *acc += v;
        }
        rounds += 1;
        let t = rounds as f64;
        let upper = against_defender.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lower = against_attacker.iter().copied().fold(f64::INFINITY, f64::min) / t;
        if upper - lower < threshold {
            converged = true;
            break;
        }
    }

    let t = rounds as f64;
    let attacker = count_a.iter().map(|&k| k as f64 / t).collect();
    let defender = count_d.iter().map(|&k| k as f64 / t).collect();
    EquilibriumResult {
        iterations: rounds,
        converged,
        ..EquilibriumResult::evaluate(Solver::FictitiousPlay, payoff, attacker, defender)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_pennies() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let eq = fictitious_play(&a, 100_000, 1e-4);
        assert!(eq.value.abs() < 0.01);
        for p in eq.attacker.iter().chain(&eq.defender) {
            assert!((p - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn saddle_point_is_pure() {
        // (0, 0) is a saddle: 3 is its row minimum and column maximum.
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 2.0, 5.0]);
        let eq = fictitious_play(&a, 10_000, 1e-9);
        assert!(eq.converged);
        assert_eq!(eq.attacker, vec![1.0, 0.0]);
        assert_eq!(eq.defender, vec![1.0, 0.0]);
        assert_eq!(eq.value, 3.0);
    }
}
