//! Shared fixtures and independent oracles for integration tests.
#![allow(dead_code)]

use infrasec_core::model::{DescriptorSystem, Partition};
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random `E x' = A x` with positive diagonal `E` and `A + A^T` negative
/// definite, hence asymptotically stable.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> DescriptorSystem {
    let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) / (n as f64).sqrt());
    let shift = r.norm() + 0.3;
    let a = r - DMatrix::identity(n, n) * shift;
    let e = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    DescriptorSystem::new(e, a).expect("stable by construction")
}

/// Random stable system with one algebraic row and an invertible algebraic block.
pub fn random_descriptor(rng: &mut ChaCha8Rng, n: usize) -> DescriptorSystem {
    loop {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            a[(i, i)] = -(n as f64) - rng.random_range(0.5..1.5);
        }
        let mut e = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        e[n - 1] = 0.0;
        if let Ok(sys) = DescriptorSystem::new(e, a) {
            return sys;
        }
    }
}

/// Response of `E x' = A x + e_j v0` to a step `v0` applied at `t = 0`,
/// sampled at `times`, via the exponential of the augmented matrix
/// `[[E^-1 A, E^-1 e_j v0], [0, 0]]`. Requires invertible `E`.
pub fn expm_step_response(sys: &DescriptorSystem, j: usize, v0: f64, times: &[f64]) -> Vec<DVector<f64>> {
    let n = sys.n();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    for r in 0..n {
        for c in 0..n {
            aug[(r, c)] = sys.a()[(r, c)] / sys.e()[r];
        }
    }
    aug[(j, n)] = v0 / sys.e()[j];
    times
        .iter()
        .map(|&t| {
            let phi = (&aug * t).exp();
            DVector::from_fn(n, |r, _| phi[(r, n)])
        })
        .collect()
}

/// `(sE - A)^-1` by dense complex LU.
pub fn pencil_inverse(sys: &DescriptorSystem, s: Complex<f64>) -> DMatrix<Complex<f64>> {
    let n = sys.n();
    let p = DMatrix::from_fn(n, n, |r, c| {
        let d = if r == c { s * sys.e()[r] } else { Complex::new(0.0, 0.0) };
        d - Complex::new(sys.a()[(r, c)], 0.0)
    });
    p.try_inverse().expect("s is not a pole")
}

/// Partition into consecutive blocks of the given sizes.
pub fn blocks(sizes: &[usize]) -> Partition {
    let mut start = 0;
    let mut out = Vec::new();
    for &s in sizes {
        out.push((start..start + s).collect());
        start += s;
    }
    let names = (0..sizes.len()).map(|i| format!("s{i}")).collect();
    Partition::new(start, names, out).unwrap()
}

pub fn sup_rel_error(x: &[DVector<f64>], reference: &[DVector<f64>]) -> f64 {
    let scale = reference.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let err = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    err / scale
}
