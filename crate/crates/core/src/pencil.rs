//! Spectral utilities for descriptor pencils `sE - A` with diagonal `E`.
//!
//! Finite generalized eigenvalues are obtained by eliminating the algebraic
//! rows (Kron reduction) when the algebraic block `A_aa` is invertible, and by
//! a shift-and-invert transform otherwise.

use nalgebra::{Complex, DMatrix, DVector};

/// Diagonal entries of `E` with magnitude at or below this are algebraic rows.
const ZERO_DIAG: f64 = 0.0;

/// Threshold on `|det| / hadamard_bound` below which a matrix is treated as singular.
pub(crate) const SINGULAR_RATIO: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub enum PencilIssue {
    /// `det(sE - A)` vanishes at every probe point.
    Irregular,
}

/// Indices of differential (nonzero `E`) and algebraic (zero `E`) rows.
pub fn split_rows(e: &DVector<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut diff = Vec::new();
    let mut alg = Vec::new();
    for (i, &v) in e.iter().enumerate() {
        if v.abs() > ZERO_DIAG {
            diff.push(i);
        } else {
            alg.push(i);
        }
    }
    (diff, alg)
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])])
}

/// Hadamard bound on `|det(m)|`: the product of the row 2-norms.
pub(crate) fn hadamard_bound<T: nalgebra::ComplexField<RealField = f64>>(m: &DMatrix<T>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.clone().modulus_squared()).sum::<f64>().sqrt())
        .product()
}

pub(crate) fn is_numerically_singular<T: nalgebra::ComplexField<RealField = f64>>(
    m: &DMatrix<T>,
    det: f64,
) -> bool {
    let bound = hadamard_bound(m);
    bound == 0.0 || det.abs() <= SINGULAR_RATIO * bound
}

/// Checks `det(sE - A) != 0` at a handful of fixed complex probe points.
pub fn is_regular(e: &DVector<f64>, a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let probes = [
        Complex::new(0.3137, 0.7093),
        Complex::new(-1.2718, 2.1903),
        Complex::new(2.6543, -0.4142),
    ];
    probes.iter().any(|&s| {
        let m = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s * e[i] } else { Complex::new(0.0, 0.0) };
            diag - Complex::new(a[(i, j)], 0.0)
        });
        let det = m.clone().lu().determinant().norm();
        !is_numerically_singular(&m, det)
    })
}

/// Finite generalized eigenvalues of the pencil `(E, A)`, i.e. the roots of
/// `det(sE - A)`.
pub fn finite_eigenvalues(
    e: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<Vec<Complex<f64>>, PencilIssue> {
    if !is_regular(e, a) {
        return Err(PencilIssue::Irregular);
    }
    let (diff, alg) = split_rows(e);
    if diff.is_empty() {
        return Ok(Vec::new());
    }
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(
        diff.len(),
        diff.iter().map(|&i| 1.0 / e[i]),
    ));
    if alg.is_empty() {
        return Ok(sorted(
            (scale * a).complex_eigenvalues().iter().copied().collect(),
        ));
    }
    let a_aa = submatrix(a, &alg, &alg);
    let lu = a_aa.clone().lu();
    if !is_numerically_singular(&a_aa, lu.determinant()) {
        let a_dd = submatrix(a, &diff, &diff);
        let a_da = submatrix(a, &diff, &alg);
        let a_ad = submatrix(a, &alg, &diff);
        let elim = lu.solve(&a_ad).expect("checked nonsingular");
        let reduced = a_dd - a_da * elim;
        return Ok(sorted(
            (scale * reduced).complex_eigenvalues().iter().copied().collect(),
        ));
    }
    Ok(sorted(shift_invert_eigenvalues(e, a)))
}

/// Higher-index fallback: eigenvalues `mu` of `(A - sigma E)^{-1} E` map to
/// `lambda = sigma + 1/mu`; `mu ~ 0` are the infinite eigenvalues.
fn shift_invert_eigenvalues(e: &DVector<f64>, a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let n = a.nrows();
    let e_mat = DMatrix::from_diagonal(e);
    for sigma in [0.5772, -0.3291, 1.6180, -2.6917, 4.1231] {
        let shifted = a - &e_mat * sigma;
        let lu = shifted.clone().lu();
        if is_numerically_singular(&shifted, lu.determinant()) {
            continue;
        }
        let k = lu.solve(&e_mat).expect("checked nonsingular");
        let mus = k.complex_eigenvalues();
        // Nilpotent (infinite) parts of index k perturb to |mu| ~ eps^(1/k).
        let tol = 1e-6 * k.norm().max(1e-300) * (n as f64).sqrt();
        return mus
            .iter()
            .filter(|m| m.norm() > tol)
            .map(|m| Complex::new(sigma, 0.0) + m.inv())
            .collect();
    }
    Vec::new()
}

fn sorted(mut values: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    values.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    values
}

/// Largest real part among the finite eigenvalues, or `-inf` when there are none.
pub fn spectral_abscissa(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invertible_e_matches_plain_eigenvalues() {
        let e = DVector::from_vec(vec![1.0, 2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -4.0]);
        let eigs = finite_eigenvalues(&e, &a).unwrap();
        assert!((eigs[0].re + 1.0).abs() < 1e-12);
        assert!((eigs[1].re + 2.0).abs() < 1e-12);
    }

    #[test]
    fn kron_reduction_drops_infinite_eigenvalues() {
        // x1' = -x1 + x2, 0 = x1 - 2 x2  =>  x1' = -x1/2
        let e = DVector::from_vec(vec![1.0, 0.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -2.0]);
        let eigs = finite_eigenvalues(&e, &a).unwrap();
        assert_eq!(eigs.len(), 1);
        assert!((eigs[0].re + 0.5).abs() < 1e-12);
    }

    #[test]
    fn shift_invert_agrees_with_kron() {
        let e = DVector::from_vec(vec![1.0, 3.0, 0.0]);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[-2.0, 1.0, 0.5, 0.3, -1.0, 0.2, 1.0, 0.4, -3.0],
        );
        let mut kron = finite_eigenvalues(&e, &a).unwrap();
        let mut si = shift_invert_eigenvalues(&e, &a);
        kron = sorted(kron);
        si = sorted(si);
        assert_eq!(kron.len(), si.len());
        for (x, y) in kron.iter().zip(&si) {
            assert!((x - y).norm() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_pencil_is_irregular() {
        let e = DVector::from_vec(vec![1.0, 0.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(finite_eigenvalues(&e, &a), Err(PencilIssue::Irregular));
    }

    #[test]
    fn higher_index_pencil_still_reports_finite_part() {
        // x0' = -2 x0 plus an index-2 block: x1' = x2, x2' = -x1 - x2 + x3, 0 = x1.
        let e = DVector::from_vec(vec![1.0, 1.0, 1.0, 0.0]);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            -2.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, -1.0, -1.0, 1.0,
            0.0, 1.0, 0.0, 0.0,
        ]);
        let eigs = finite_eigenvalues(&e, &a).unwrap();
        assert_eq!(eigs.len(), 1, "{eigs:?}");
        assert!((eigs[0].re + 2.0).abs() < 1e-9);
    }
}
