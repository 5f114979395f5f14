//! Exact minimax strategies by linear programming.
//!
//! With the payoff rescaled into `[1, 2]`, the row player's game is the
//! pair `max 1^T w s.t. B w <= 1, w >= 0` and its dual
//! `min 1^T u s.t. B^T u >= 1, u >= 0`; `1 / 1^T w` is the value and the
//! normalized `u`, `w` are the optimal mixtures. The primal is solved with a
//! dense tableau simplex (Dantzig entering rule, lexicographic ratio test)
//! and the final basis is re-solved by LU to polish both vectors.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use super::{EquilibriumResult, GameError, Solver};

/// Pivot elements and reduced costs below this are treated as zero.
const PIVOT_EPS: f64 = 1e-11;
/// Ratios closer than this (relative) are ties for the lexicographic rule.
const TIE_EPS: f64 = 1e-12;
/// Certificate tolerance, scaled by `max(1, |A|_max)`.
pub const CERTIFICATE_TOL: f64 = 1e-9;

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`, last column is the right-hand side.
    data: Vec<f64>,
    /// Reduced costs `c_B B^-1 a_j - c_j` and the objective in the last slot.
    objective: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    /// Row `r` of `B^-1` (the slack block) scaled by `1 / pivot`, compared
    /// lexicographically after the ratio itself.
    fn lex_cmp(&self, r1: usize, r2: usize, entering: usize, structural: usize) -> Ordering {
        let (p1, p2) = (self.at(r1, entering), self.at(r2, entering));
        let key = |r: usize, p: f64, k: usize| {
            if k == 0 {
                self.rhs(r) / p
            } else {
                self.at(r, structural + k - 1) / p
            }
        };
        for k in 0..=self.rows {
            let (a, b) = (key(r1, p1, k), key(r2, p2, k));
            let scale = a.abs().max(b.abs()).max(1.0);
            if (a - b).abs() > TIE_EPS * scale {
                return a.partial_cmp(&b).unwrap_or(Ordering::Equal);
            }
        }
        Ordering::Equal
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let width = self.cols + 1;
        let p = self.at(pr, pc);
        let (before, rest) = self.data.split_at_mut(pr * width);
        let (pivot_row, after) = rest.split_at_mut(width);
        for v in pivot_row.iter_mut() {
            *v /= p;
        }
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
            }
        };
        for row in before.chunks_mut(width).chain(after.chunks_mut(width)) {
            eliminate(row);
        }
        eliminate(&mut self.objective);
        self.basis[pr] = pc;
    }
}

struct Solution {
    /// Row player mixture.
    rows: Vec<f64>,
    /// Column player mixture.
    cols: Vec<f64>,
    pivots: usize,
    degenerate: usize,
}

/// Solves the game for the row maximizer of `b`, whose entries must be
/// positive.
fn solve_positive(b: &DMatrix<f64>) -> Result<Solution, GameError> {
    let (m, n) = b.shape();
    let cols = n + m;
    let width = cols + 1;
    let mut data = vec![0.0; m * width];
    for r in 0..m {
        for c in 0..n {
            data[r * width + c] = b[(r, c)];
        }
        data[r * width + n + r] = 1.0;
        data[r * width + cols] = 1.0;
    }
    let mut objective = vec![0.0; width];
    for v in objective.iter_mut().take(n) {
        *v = -1.0;
    }
    let mut t = Tableau {
        rows: m,
        cols,
        data,
        objective,
        basis: (n..n + m).collect(),
    };

    let limit = 50 * (m + n) + 1000;
    let mut pivots = 0;
    let mut degenerate = 0;
    loop {
        let entering = (0..cols)
            .filter(|&c| t.objective[c] < -PIVOT_EPS)
            .min_by(|&a, &b| {
                t.objective[a]
                    .partial_cmp(&t.objective[b])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
        let Some(entering) = entering else { break };
        let leaving = (0..m)
            .filter(|&r| t.at(r, entering) > PIVOT_EPS)
            .min_by(|&a, &b| t.lex_cmp(a, b, entering, n).then(a.cmp(&b)));
        let Some(leaving) = leaving else {
            return Err(GameError::DegenerateLp(
                "unbounded program (payoff not positive after rescaling)".into(),
            ));
        };
        if t.rhs(leaving) <= PIVOT_EPS {
            degenerate += 1;
        }
        t.pivot(leaving, entering);
        pivots += 1;
        if pivots > limit {
            return Err(GameError::DegenerateLp(format!(
                "no optimum after {pivots} pivots"
            )));
        }
    }

    // Polish: re-solve B_basis w_B = 1 and B_basis^T u = c_B by LU.
    let basis_matrix = DMatrix::from_fn(m, m, |r, k| {
        let j = t.basis[k];
        if j < n {
            b[(r, j)]
        } else if j - n == r {
            1.0
        } else {
            0.0
        }
    });
    let lu = basis_matrix.clone().lu();
    let w_basic = lu
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| GameError::DegenerateLp("singular final basis".into()))?;
    let c_basic = DVector::from_fn(m, |k, _| if t.basis[k] < n { 1.0 } else { 0.0 });
    let u = basis_matrix
        .transpose()
        .lu()
        .solve(&c_basic)
        .ok_or_else(|| GameError::DegenerateLp("singular final basis".into()))?;

    let mut w = vec![0.0; n];
    for (k, &j) in t.basis.iter().enumerate() {
        if j < n {
            w[j] = w_basic[k].max(0.0);
        }
    }
    let u: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
    Ok(Solution {
        rows: normalized(&u)?,
        cols: normalized(&w)?,
        pivots,
        degenerate,
    })
}

fn normalized(v: &[f64]) -> Result<Vec<f64>, GameError> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(GameError::DegenerateLp("optimal vector has zero mass".into()));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

/// Exact equilibrium of the zero-sum game with attacker (row, maximizing)
/// payoff `payoff`. The program is posed over the smaller dimension. Fails
/// with [`GameError::DegenerateLp`] if the result misses the certificate.
pub fn lp_minimax(payoff: &DMatrix<f64>) -> Result<EquilibriumResult, GameError> {
    let (rows, cols) = payoff.shape();
    if rows == 0 || cols == 0 {
        return Err(GameError::EmptyStrategies);
    }
    super::check_finite(payoff)?;
    let (lo, hi) = (payoff.min(), payoff.max());
    let span = hi - lo;
    if span == 0.0 {
        let mut pa = vec![0.0; rows];
        let mut pd = vec![0.0; cols];
        pa[0] = 1.0;
        pd[0] = 1.0;
        return Ok(EquilibriumResult::evaluate(Solver::LinearProgram, payoff, pa, pd));
    }

    let (attacker, defender, pivots, degenerate) = if rows <= cols {
        let b = payoff.map(|v| 1.0 + (v - lo) / span);
        let s = solve_positive(&b)?;
        (s.rows, s.cols, s.pivots, s.degenerate)
    } else {
        // The defender maximizes -A^T; rescale that into [1, 2].
        let b = payoff.transpose().map(|v| 1.0 + (hi - v) / span);
        let s = solve_positive(&b)?;
        (s.cols, s.rows, s.pivots, s.degenerate)
    };

    let result = EquilibriumResult {
        iterations: pivots,
        degenerate_pivots: degenerate,
        ..EquilibriumResult::evaluate(Solver::LinearProgram, payoff, attacker, defender)
    };
    let tol = CERTIFICATE_TOL * hi.abs().max(lo.abs()).max(1.0);
    let cert = result.certificate(payoff);
    if !cert.holds(tol) {
        return Err(GameError::DegenerateLp(format!(
            "certificate violated: attacker excess {:e}, defender excess {:e}, indifference {:e}",
            cert.attacker_excess, cert.defender_excess, cert.indifference
        )));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let eq = lp_minimax(&DMatrix::from_element(1, 1, 4.5)).unwrap();
        assert_eq!(eq.value, 4.5);
        assert_eq!(eq.attacker, vec![1.0]);
        assert_eq!(eq.defender, vec![1.0]);
    }

    #[test]
    fn matching_pennies() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let eq = lp_minimax(&a).unwrap();
        assert!(eq.value.abs() < 1e-12);
        for p in eq.attacker.iter().chain(&eq.defender) {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rock_paper_scissors_both_orientations() {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(3, 3, &[
            0.0, -1.0, 1.0,
            1.0, 0.0, -1.0,
            -1.0, 1.0, 0.0,
        ]);
        let eq = lp_minimax(&a).unwrap();
        assert!(eq.value.abs() < 1e-12);
        // Duplicated row forces the transposed orientation.
        let tall = DMatrix::from_fn(4, 3, |r, c| a[(r.min(2), c)]);
        let eq = lp_minimax(&tall).unwrap();
        assert!(eq.value.abs() < 1e-12);
        assert!((eq.defender.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominated_rows_get_no_weight() {
        let a = DMatrix::from_row_slice(3, 2, &[3.0, 1.0, 1.0, 3.0, 0.5, 0.5]);
        let eq = lp_minimax(&a).unwrap();
        assert!((eq.value - 2.0).abs() < 1e-12);
        assert_eq!(eq.attacker[2], 0.0);
    }

    #[test]
    fn degenerate_constant_columns() {
        // Every basis at the optimum is degenerate: identical columns.
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let eq = lp_minimax(&a).unwrap();
        assert!((eq.value - 0.5).abs() < 1e-12);
    }
}
