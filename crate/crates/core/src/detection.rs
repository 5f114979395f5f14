//! Residual attack-detection filters.
//!
//! The centralized filter integrates `E z' = (A + G C) z - G y` with
//! `r = C z - y`. The distributed variant splits `A = A_D + A_C` along the
//! subsystem partition and runs waveform relaxation: every subsystem
//! integrates its local filter over the whole window using the neighbour
//! trajectories received in the previous sweep, then exchanges its own.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{grid, AttackScenario, DynamicsError, Stepper};
use crate::model::{split_block_diagonal, DescriptorSystem, STABILITY_MARGIN};
use crate::pencil;
use crate::report::fmt_num;

/// Default residue alarm threshold (measurement units).
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
/// Relaxation stops once successive iterates differ by less than this (sup-norm).
pub const RELAXATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("(E, A + GC) is not regular and Hurwitz: {0}")]
    NotHurwitz(String),
    #[error("gain matrix does not match the subsystem partition: {0}")]
    GainPattern(String),
    #[error("measurement grid mismatch: {0}")]
    MeasurementGridMismatch(String),
    #[error("relaxation did not converge in {iterations} iterations (last delta {last_delta:e})")]
    NoConvergence { iterations: usize, last_delta: f64 },
    #[error("subsystem {0} has no communication connections")]
    ZeroConnections(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Subsystem owning each output row of `C`.
fn output_owners(sys: &DescriptorSystem) -> Result<Vec<usize>, DetectionError> {
    let c = sys.c();
    (0..c.nrows())
        .map(|r| {
            let owners: Vec<usize> = (0..c.ncols())
                .filter(|&s| c[(r, s)] != 0.0)
                .map(|s| sys.partition().owner(s))
                .collect();
            match owners.split_first() {
                Some((&first, rest)) if rest.iter().all(|&o| o == first) => Ok(first),
                _ => Err(DetectionError::GainPattern(format!(
                    "output row {r} is not confined to one subsystem"
                ))),
            }
        })
        .collect()
}

/// Filter gain and relaxation settings, validated against a system.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    gain: DMatrix<f64>,
    window: f64,
    max_iterations: usize,
    threshold: f64,
    /// Scale used when the gain came from [`FilterConfig::stabilizing`].
    gamma: Option<f64>,
    abscissa: f64,
}

impl FilterConfig {
    pub fn new(
        sys: &DescriptorSystem,
        gain: DMatrix<f64>,
        window: f64,
        max_iterations: usize,
        threshold: f64,
    ) -> Result<Self, DetectionError> {
        let (n, p) = (sys.n(), sys.c().nrows());
        if gain.nrows() != n || gain.ncols() != p {
            return Err(DetectionError::GainPattern(format!(
                "expected {n}x{p}, got {}x{}",
                gain.nrows(),
                gain.ncols()
            )));
        }
        let owners = output_owners(sys)?;
        for r in 0..n {
            for q in 0..p {
                if gain[(r, q)] != 0.0 && sys.partition().owner(r) != owners[q] {
                    return Err(DetectionError::GainPattern(format!(
                        "entry ({r}, {q}) couples two subsystems"
                    )));
                }
            }
        }
        if !(window > 0.0 && window.is_finite()) {
            return Err(DynamicsError::HorizonNonpositive(window).into());
        }
        let closed = sys.a() + &gain * sys.c();
        let eigs = pencil::finite_eigenvalues(sys.e(), &closed)
            .map_err(|_| DetectionError::NotHurwitz("pencil is not regular".into()))?;
        if let Some(z) = eigs.iter().find(|z| z.re >= STABILITY_MARGIN) {
            return Err(DetectionError::NotHurwitz(format!(
                "finite eigenvalue {} {:+}i",
                z.re, z.im
            )));
        }
        Ok(Self {
            gain,
            window,
            max_iterations,
            threshold,
            gamma: None,
            abscissa: pencil::spectral_abscissa(&eigs),
        })
    }

    /// `G = -gamma C^T` with `gamma` doubled from 1 until `(E, A + GC)` is
    /// Hurwitz. Block-diagonal by construction.
    pub fn stabilizing(
        sys: &DescriptorSystem,
        window: f64,
        max_iterations: usize,
        threshold: f64,
    ) -> Result<Self, DetectionError> {
        let mut last = None;
        for power in 0..=20 {
            let gamma = f64::from(1u32 << power);
            let gain = -sys.c().transpose() * gamma;
            match Self::new(sys, gain, window, max_iterations, threshold) {
                Ok(cfg) => {
                    return Ok(Self {
                        gamma: Some(gamma),
                        ..cfg
                    })
                }
                Err(e @ DetectionError::NotHurwitz(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// Largest real part of the closed-loop finite spectrum.
    pub fn abscissa(&self) -> f64 {
        self.abscissa
    }
}

/// Sensor stream `y(t_k)` on a uniform grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub step: f64,
    pub values: Vec<DVector<f64>>,
}

impl Measurements {
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.step).collect()
    }
}

/// Simulates the plant `E x' = A x + b v` from `x0` over `[0, horizon]` and
/// returns the state samples and `y = C x`. `attack = None` is the
/// unattacked plant; the attack's own horizon is ignored.
pub fn measurement_stream(
    sys: &DescriptorSystem,
    x0: &DVector<f64>,
    attack: Option<&AttackScenario>,
    horizon: f64,
    step: f64,
) -> Result<(Vec<DVector<f64>>, Measurements), DetectionError> {
    if x0.len() != sys.n() {
        return Err(DetectionError::MeasurementGridMismatch(format!(
            "initial state has {} entries, system has {}",
            x0.len(),
            sys.n()
        )));
    }
    if !(horizon > 0.0) {
        return Err(DynamicsError::HorizonNonpositive(horizon).into());
    }
    let (steps, h) = grid(horizon, step);
    let stepper = Stepper::new(sys.e(), sys.a(), h)?;
    let n = sys.n();
    let b = attack.map(|a| a.b(n)).unwrap_or_else(|| DVector::zeros(n));
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x.clone());
    for k in 0..steps {
        let (t0, t1) = (k as f64 * h, (k + 1) as f64 * h);
        let (mean, node) = match attack {
            Some(a) => (a.waveform().mean(t0, t1), a.waveform().value(t1)),
            None => (0.0, 0.0),
        };
        let forcing = DVector::from_fn(n, |r, _| {
            b[r] * if stepper.is_algebraic(r) { node } else { mean }
        });
        x = stepper.advance(&x, &forcing);
        states.push(x.clone());
    }
    let values = states.iter().map(|x| sys.c() * x).collect();
    Ok((states, Measurements { step: h, values }))
}

/// Makes the algebraic components of `x` consistent with `A_aa x_a = -A_ad x_d`.
pub fn consistent_initial_state(sys: &DescriptorSystem, x: &DVector<f64>) -> DVector<f64> {
    let (diff, alg) = pencil::split_rows(sys.e());
    if alg.is_empty() {
        return x.clone();
    }
    let a = sys.a();
    let a_aa = DMatrix::from_fn(alg.len(), alg.len(), |r, c| a[(alg[r], alg[c])]);
    let rhs = DVector::from_fn(alg.len(), |r, _| {
        -diff.iter().map(|&d| a[(alg[r], d)] * x[d]).sum::<f64>()
    });
    let mut out = x.clone();
    if let Some(sol) = a_aa.lu().solve(&rhs) {
        for (k, &i) in alg.iter().enumerate() {
            out[i] = sol[k];
        }
    }
    out
}

fn check_stream(
    sys: &DescriptorSystem,
    y: &Measurements,
    x0: &DVector<f64>,
) -> Result<(), DetectionError> {
    let p = sys.c().nrows();
    if y.values.len() < 2 {
        return Err(DetectionError::MeasurementGridMismatch(
            "need at least two samples".into(),
        ));
    }
    if !(y.step > 0.0 && y.step.is_finite()) {
        return Err(DetectionError::MeasurementGridMismatch(format!(
            "invalid sample step {}",
            y.step
        )));
    }
    if let Some(k) = y.values.iter().position(|v| v.len() != p) {
        return Err(DetectionError::MeasurementGridMismatch(format!(
            "sample {k} has {} entries, expected {p}",
            y.values[k].len()
        )));
    }
    if x0.len() != sys.n() {
        return Err(DetectionError::MeasurementGridMismatch(format!(
            "initial state has {} entries, system has {}",
            x0.len(),
            sys.n()
        )));
    }
    Ok(())
}

/// Filter state and residue samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub step: f64,
    pub estimates: Vec<DVector<f64>>,
    pub residues: Vec<DVector<f64>>,
}

impl FilterRun {
    pub fn residue_norms(&self) -> Vec<f64> {
        self.residues.iter().map(|r| r.amax()).collect()
    }

    pub fn max_residue(&self) -> f64 {
        self.residue_norms().into_iter().fold(0.0, f64::max)
    }

    /// First sample time at which `|r|_inf` exceeds `threshold`.
    pub fn first_alarm(&self, threshold: f64) -> Option<f64> {
        self.residue_norms()
            .iter()
            .position(|&v| v > threshold)
            .map(|k| k as f64 * self.step)
    }

    pub fn write_residue_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let p = self.residues.first().map_or(0, |r| r.len());
        write!(out, "t")?;
        for q in 0..p {
            write!(out, ",r{}", q + 1)?;
        }
        writeln!(out)?;
        for (k, r) in self.residues.iter().enumerate() {
            write!(out, "{}", fmt_num(k as f64 * self.step))?;
            for v in r.iter() {
                write!(out, ",{}", fmt_num(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs the centralized detection filter over the measurement grid from `z(0) = x0`.
pub fn centralized_filter(
    sys: &DescriptorSystem,
    config: &FilterConfig,
    y: &Measurements,
    x0: &DVector<f64>,
) -> Result<FilterRun, DetectionError> {
    check_stream(sys, y, x0)?;
    let closed = sys.a() + config.gain() * sys.c();
    let stepper = Stepper::new(sys.e(), &closed, y.step)?;
    let injected: Vec<DVector<f64>> = y.values.iter().map(|v| -(config.gain() * v)).collect();
    let mut z = x0.clone();
    let mut estimates = Vec::with_capacity(y.values.len());
    estimates.push(z.clone());
    for k in 0..y.values.len() - 1 {
        let forcing = stepper.forcing_from_nodes(&injected[k], &injected[k + 1]);
        z = stepper.advance(&z, &forcing);
        estimates.push(z.clone());
    }
    let residues = estimates
        .iter()
        .zip(&y.values)
        .map(|(z, y)| sys.c() * z - y)
        .collect();
    Ok(FilterRun {
        step: y.step,
        estimates,
        residues,
    })
}

/// Starting trajectories `z^(0)` for waveform relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// `z_j^(0)(t) = 0`.
    Zero,
    /// `z_j^(0)(t) = x0_j` for all `t`.
    Constant,
    /// Full-state samples on the measurement grid.
    Trajectory(Vec<DVector<f64>>),
}

/// History of a waveform-relaxation run.
#[derive(Debug, Clone)]
pub struct RelaxationRun {
    pub step: f64,
    /// `iterates[k-1]` holds the full-state samples of `z^(k)`.
    pub iterates: Vec<Vec<DVector<f64>>>,
    /// Local residues `C_i z_i^(k) - y_i`, stacked as full output vectors.
    pub residues: Vec<Vec<DVector<f64>>>,
    /// `deltas[k-1] = sup_t |z^(k)(t) - z^(k-1)(t)|_inf`.
    pub deltas: Vec<f64>,
    pub converged: bool,
    /// Trajectory transmissions between subsystems over the run.
    pub messages: usize,
}

impl RelaxationRun {
    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    pub fn final_estimates(&self) -> &[DVector<f64>] {
        self.iterates.last().expect("at least one iteration")
    }

    pub fn final_residues(&self) -> &[DVector<f64>] {
        self.residues.last().expect("at least one iteration")
    }

    /// `Err(NoConvergence)` when the run stopped at the iteration cap.
    pub fn ensure_converged(&self) -> Result<(), DetectionError> {
        if self.converged {
            Ok(())
        } else {
            Err(DetectionError::NoConvergence {
                iterations: self.iterations(),
                last_delta: self.deltas.last().copied().unwrap_or(f64::INFINITY),
            })
        }
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,delta")?;
        for (k, d) in self.deltas.iter().enumerate() {
            writeln!(out, "{},{}", k + 1, fmt_num(*d))?;
        }
        Ok(())
    }
}

/// Local data of one subsystem filter.
struct LocalFilter {
    states: Vec<usize>,
    stepper: Stepper,
    /// Rows of `A_C` for this block, restricted to each inbound neighbour's columns.
    coupling: BTreeMap<usize, DMatrix<f64>>,
}

fn sup_delta(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

/// Waveform-relaxation iteration of the distributed filter over the
/// measurement grid. Non-convergence is reported through
/// [`RelaxationRun::converged`], not as an error.
pub fn relax_distributed(
    sys: &DescriptorSystem,
    config: &FilterConfig,
    y: &Measurements,
    x0: &DVector<f64>,
    initial: &InitialGuess,
) -> Result<RelaxationRun, DetectionError> {
    check_stream(sys, y, x0)?;
    let samples = y.values.len();
    let n = sys.n();
    let split = split_block_diagonal(sys);
    let local_matrix = &split.a_d + config.gain() * sys.c();
    let blocks = sys.partition().blocks();

    let locals = blocks
        .iter()
        .enumerate()
        .map(|(i, states)| {
            let e = DVector::from_fn(states.len(), |r, _| sys.e()[states[r]]);
            let f = DMatrix::from_fn(states.len(), states.len(), |r, c| {
                local_matrix[(states[r], states[c])]
            });
            let coupling = split.inbound[i]
                .iter()
                .map(|&j| {
                    let cols = &blocks[j];
                    let m = DMatrix::from_fn(states.len(), cols.len(), |r, c| {
                        split.a_c[(states[r], cols[c])]
                    });
                    (j, m)
                })
                .collect();
            Ok(LocalFilter {
                states: states.clone(),
                stepper: Stepper::new(&e, &f, y.step)?,
                coupling,
            })
        })
        .collect::<Result<Vec<_>, DynamicsError>>()?;

    let injected: Vec<DVector<f64>> = y.values.iter().map(|v| -(config.gain() * v)).collect();

    let mut previous: Vec<DVector<f64>> = match initial {
        InitialGuess::Zero => vec![DVector::zeros(n); samples],
        InitialGuess::Constant => vec![x0.clone(); samples],
        InitialGuess::Trajectory(t) => {
            if t.len() != samples || t.iter().any(|v| v.len() != n) {
                return Err(DetectionError::MeasurementGridMismatch(
                    "initial guess does not match the measurement grid".into(),
                ));
            }
            t.clone()
        }
    };
    let restrict = |traj: &[DVector<f64>], states: &[usize]| -> Vec<DVector<f64>> {
        traj.iter()
            .map(|v| DVector::from_fn(states.len(), |r, _| v[states[r]]))
            .collect()
    };
    // mailbox[i][j]: subsystem i's copy of neighbour j's latest trajectory.
    let mut mailbox: Vec<BTreeMap<usize, Vec<DVector<f64>>>> = locals
        .iter()
        .map(|l| {
            l.coupling
                .keys()
                .map(|&j| (j, restrict(&previous, &blocks[j])))
                .collect()
        })
        .collect();

    let mut run = RelaxationRun {
        step: y.step,
        iterates: Vec::new(),
        residues: Vec::new(),
        deltas: Vec::new(),
        converged: false,
        messages: 0,
    };
    for _ in 0..config.max_iterations().max(1) {
        // Step 1: every subsystem integrates its local filter (independent given the mailbox).
        let local_traj: Vec<Vec<DVector<f64>>> = locals
            .par_iter()
            .zip(mailbox.par_iter())
            .map(|(local, inbox)| {
                let m = local.states.len();
                let forcing_at = |k: usize| {
                    let mut u = DVector::from_fn(m, |r, _| injected[k][local.states[r]]);
                    for (j, a_ij) in &local.coupling {
                        u += a_ij * &inbox[j][k];
                    }
                    u
                };
                let mut z = DVector::from_fn(m, |r, _| x0[local.states[r]]);
                let mut out = Vec::with_capacity(samples);
                out.push(z.clone());
                let mut u_prev = forcing_at(0);
                for k in 0..samples - 1 {
                    let u_next = forcing_at(k + 1);
                    let forcing = local.stepper.forcing_from_nodes(&u_prev, &u_next);
                    z = local.stepper.advance(&z, &forcing);
                    out.push(z.clone());
                    u_prev = u_next;
                }
                out
            })
            .collect();

        let mut current = vec![DVector::zeros(n); samples];
        for (local, traj) in locals.iter().zip(&local_traj) {
            for (k, z) in traj.iter().enumerate() {
                for (r, &s) in local.states.iter().enumerate() {
                    current[k][s] = z[r];
                }
            }
        }

        // Steps 2-3: transmit z_i^(k) to dependants, receive from neighbours.
        for (i, inbox) in mailbox.iter_mut().enumerate() {
            for (&j, copy) in inbox.iter_mut() {
                debug_assert!(split.outbound[j].contains(&i));
                *copy = local_traj[j].clone();
                run.messages += 1;
            }
        }

        let delta = sup_delta(&current, &previous);
        run.residues
            .push(current.iter().zip(&y.values).map(|(z, y)| sys.c() * z - y).collect());
        run.iterates.push(current.clone());
        run.deltas.push(delta);
        previous = current;
        if delta < RELAXATION_TOL {
            run.converged = true;
            break;
        }
    }
    Ok(run)
}

/// Time an attacker stays undetected in a subsystem served by `connections`
/// communication slots per window: `window / connections`.
pub fn detection_time(window: f64, subsystem: usize, connections: u64) -> Result<f64, DetectionError> {
    if connections == 0 {
        return Err(DetectionError::ZeroConnections(subsystem));
    }
    Ok(window / connections as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Waveform;
    use crate::model::Partition;

    fn two_block() -> DescriptorSystem {
        let e = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(3, 3, &[
            -1.0, 0.5, 0.2,
            -0.5, -1.0, 0.0,
            0.3, 0.0, -2.0,
        ]);
        DescriptorSystem::new(e, a)
            .unwrap()
            .with_partition(
                Partition::new(3, vec!["a".into(), "b".into()], vec![vec![0, 1], vec![2]]).unwrap(),
            )
            .unwrap()
    }

    #[test]
    fn detection_time_formula() {
        assert_eq!(detection_time(5.0, 0, 100).unwrap(), 0.05);
        assert_eq!(detection_time(5.0, 0, 1).unwrap(), 5.0);
        assert_eq!(detection_time(5.0, 0, 1000).unwrap(), 0.005);
        assert_eq!(detection_time(5.0, 3, 0), Err(DetectionError::ZeroConnections(3)));
    }

    #[test]
    fn cross_block_gain_rejected() {
        let sys = two_block();
        let mut g = -DMatrix::identity(3, 3);
        g[(0, 2)] = 0.1;
        assert!(matches!(
            FilterConfig::new(&sys, g, 1.0, 10, 1e-5),
            Err(DetectionError::GainPattern(_))
        ));
    }

    #[test]
    fn destabilizing_gain_rejected() {
        let sys = two_block();
        let g = DMatrix::identity(3, 3) * 5.0;
        assert!(matches!(
            FilterConfig::new(&sys, g, 1.0, 10, 1e-5),
            Err(DetectionError::NotHurwitz(_))
        ));
    }

    #[test]
    fn unattacked_residue_vanishes() {
        let sys = two_block();
        let cfg = FilterConfig::stabilizing(&sys, 2.0, 50, DEFAULT_THRESHOLD).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let (_, y) = measurement_stream(&sys, &x0, None, 2.0, 1e-3).unwrap();
        let run = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
        assert!(run.max_residue() < 1e-7);
    }

    #[test]
    fn relaxation_matches_centralized() {
        let sys = two_block();
        let cfg = FilterConfig::stabilizing(&sys, 2.0, 100, DEFAULT_THRESHOLD).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let attack = AttackScenario::new(&sys, vec![2], Waveform::step(0.3), 2.0).unwrap();
        let (_, y) = measurement_stream(&sys, &x0, Some(&attack), 2.0, 1e-3).unwrap();
        let central = centralized_filter(&sys, &cfg, &y, &x0).unwrap();
        let run = relax_distributed(&sys, &cfg, &y, &x0, &InitialGuess::Zero).unwrap();
        assert!(run.converged);
        assert!(sup_delta(run.final_estimates(), &central.estimates) < 1e-6);
        // Each sweep: subsystem a receives from b and b from a.
        assert_eq!(run.messages, 2 * run.iterations());
    }

    #[test]
    fn mismatched_stream_rejected() {
        let sys = two_block();
        let cfg = FilterConfig::stabilizing(&sys, 1.0, 10, DEFAULT_THRESHOLD).unwrap();
        let y = Measurements {
            step: 0.01,
            values: vec![DVector::zeros(2); 5],
        };
        assert!(matches!(
            centralized_filter(&sys, &cfg, &y, &DVector::zeros(3)),
            Err(DetectionError::MeasurementGridMismatch(_))
        ));
    }
}
