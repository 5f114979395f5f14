//! State attacks on the descriptor system and their generation-cost impact.
//!
//! Deviations obey `E dx' = A dx + b v(t)` from `dx(0) = 0`. They are
//! integrated with the trapezoidal rule on differential rows while algebraic
//! rows (zero `E` entries) are enforced exactly at each new time point.

use std::collections::VecDeque;
use std::io::{self, Write};

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DescriptorSystem;
use crate::pencil;
use crate::report::fmt_num;

/// Default integrator step (s).
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("step matrix E/h - A/2 is singular at h = {step}")]
    SingularStepMatrix { step: f64 },
    #[error("horizon must be positive, got {0}")]
    HorizonNonpositive(f64),
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("s = {re} {im:+}i is a generalized eigenvalue of the pencil")]
    PoleEvaluation { re: f64, im: f64 },
    #[error("window {window} s exceeds the integration horizon {horizon} s")]
    WindowExceedsHorizon { window: f64, horizon: f64 },
    #[error("integration window must be positive, got {0}")]
    NonpositiveWindow(f64),
    #[error("invalid attack: {0}")]
    InvalidAttack(String),
}

/// Attack signal `v(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Waveform {
    /// `v = magnitude` for `t >= start`.
    Step { magnitude: f64, start: f64 },
    /// `v = magnitude` on `[start, stop)`.
    Pulse { magnitude: f64, start: f64, stop: f64 },
    /// `v = amplitude sin(2 pi f (t - start) + phase)` for `t >= start`.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        start: f64,
    },
}

impl Waveform {
    pub fn step(magnitude: f64) -> Self {
        Waveform::Step {
            magnitude,
            start: 0.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Waveform::Step { magnitude, start } => {
                if t >= start {
                    magnitude
                } else {
                    0.0
                }
            }
            Waveform::Pulse {
                magnitude,
                start,
                stop,
            } => {
                if t >= start && t < stop {
                    magnitude
                } else {
                    0.0
                }
            }
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                start,
            } => {
                if t >= start {
                    amplitude * (std::f64::consts::TAU * frequency * (t - start) + phase).sin()
                } else {
                    0.0
                }
            }
        }
    }

    /// Mean of `v` over `[t0, t1]`, exact for every shape.
    pub fn mean(&self, t0: f64, t1: f64) -> f64 {
        let overlap = |a: f64, b: f64| (t1.min(b) - t0.max(a)).max(0.0);
        let len = t1 - t0;
        match *self {
            Waveform::Step { magnitude, start } => magnitude * overlap(start, f64::INFINITY) / len,
            Waveform::Pulse {
                magnitude,
                start,
                stop,
            } => magnitude * overlap(start, stop) / len,
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                start,
            } => {
                let a = t0.max(start);
                if a >= t1 {
                    return 0.0;
                }
                if frequency == 0.0 {
                    return amplitude * phase.sin() * (t1 - a) / len;
                }
                let w = std::f64::consts::TAU * frequency;
                let integral = amplitude / w
                    * ((w * (a - start) + phase).cos() - (w * (t1 - start) + phase).cos());
                integral / len
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            Waveform::Step { magnitude, start } => Waveform::Step {
                magnitude: magnitude * factor,
                start,
            },
            Waveform::Pulse {
                magnitude,
                start,
                stop,
            } => Waveform::Pulse {
                magnitude: magnitude * factor,
                start,
                stop,
            },
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                start,
            } => Waveform::Sine {
                amplitude: amplitude * factor,
                frequency,
                phase,
                start,
            },
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Waveform::Step { magnitude, start } => magnitude.is_finite() && start.is_finite(),
            Waveform::Pulse {
                magnitude,
                start,
                stop,
            } => magnitude.is_finite() && start.is_finite() && stop.is_finite(),
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                start,
            } => {
                amplitude.is_finite() && frequency.is_finite() && phase.is_finite() && start.is_finite()
            }
        }
    }
}

/// Attacked index set `kappa`, waveform and simulation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    targets: Vec<usize>,
    waveform: Waveform,
    horizon: f64,
}

impl AttackScenario {
    pub fn new(
        sys: &DescriptorSystem,
        targets: Vec<usize>,
        waveform: Waveform,
        horizon: f64,
    ) -> Result<Self, DynamicsError> {
        if targets.is_empty() {
            return Err(DynamicsError::InvalidAttack(
                "empty target set (use AttackScenario::null)".into(),
            ));
        }
        let mut sorted = targets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != targets.len() {
            return Err(DynamicsError::InvalidAttack("duplicate target".into()));
        }
        if let Some(&bad) = sorted.iter().find(|&&i| i >= sys.n()) {
            return Err(DynamicsError::InvalidAttack(format!(
                "state index {bad} out of range (n = {})",
                sys.n()
            )));
        }
        Self::checked(sorted, waveform, horizon)
    }

    /// The empty attack `b = 0`.
    pub fn null(horizon: f64) -> Result<Self, DynamicsError> {
        Self::checked(Vec::new(), Waveform::step(0.0), horizon)
    }

    fn checked(targets: Vec<usize>, waveform: Waveform, horizon: f64) -> Result<Self, DynamicsError> {
        if !waveform.is_finite() {
            return Err(DynamicsError::InvalidAttack("non-finite waveform".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(DynamicsError::HorizonNonpositive(horizon));
        }
        Ok(Self {
            targets,
            waveform,
            horizon,
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn with_waveform(&self, waveform: Waveform) -> Self {
        Self {
            waveform,
            ..self.clone()
        }
    }

    /// Attack indicator vector `b`.
    pub fn b(&self, n: usize) -> DVector<f64> {
        let mut b = DVector::zeros(n);
        for &j in &self.targets {
            b[j] = 1.0;
        }
        b
    }
}

/// Sampled deviation `dx(t_k)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationTrajectory {
    pub times: Vec<f64>,
    pub samples: Vec<DVector<f64>>,
    pub step: f64,
    pub scheme: &'static str,
}

impl DeviationTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with columns `t, <label_1>, ..., <label_n>`.
    pub fn write_csv<W: Write>(&self, mut out: W, labels: &[&str]) -> io::Result<()> {
        write!(out, "t")?;
        for l in labels {
            write!(out, ",{l}")?;
        }
        writeln!(out)?;
        for (t, x) in self.times.iter().zip(&self.samples) {
            write!(out, "{}", fmt_num(*t))?;
            for v in x.iter() {
                write!(out, ",{}", fmt_num(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// One-step map of the mixed trapezoidal / algebraic-collocation scheme for
/// `E x' = F x + u(t)`.
#[derive(Debug, Clone)]
pub struct Stepper {
    lhs: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: DMatrix<f64>,
    algebraic: Vec<bool>,
    step: f64,
}

impl Stepper {
    pub fn new(e: &DVector<f64>, f: &DMatrix<f64>, step: f64) -> Result<Self, DynamicsError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(DynamicsError::InvalidStep(step));
        }
        let n = e.len();
        let algebraic: Vec<bool> = e.iter().map(|&v| v == 0.0).collect();
        let mut lhs = DMatrix::zeros(n, n);
        let mut rhs = DMatrix::zeros(n, n);
        for r in 0..n {
            if algebraic[r] {
                for c in 0..n {
                    lhs[(r, c)] = -f[(r, c)];
                }
            } else {
                for c in 0..n {
                    lhs[(r, c)] = -0.5 * f[(r, c)];
                    rhs[(r, c)] = 0.5 * f[(r, c)];
                }
                lhs[(r, r)] += e[r] / step;
                rhs[(r, r)] += e[r] / step;
            }
        }
        let det = lhs.clone().lu().determinant();
        if pencil::is_numerically_singular(&lhs, det) {
            return Err(DynamicsError::SingularStepMatrix { step });
        }
        Ok(Self {
            lhs: lhs.lu(),
            rhs,
            algebraic,
            step,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_algebraic(&self, row: usize) -> bool {
        self.algebraic[row]
    }

    /// Advances `x_k -> x_{k+1}`. `forcing` holds, per row, the interval
    /// mean of `u` on differential rows and `u(t_{k+1})` on algebraic rows.
    pub fn advance(&self, x: &DVector<f64>, forcing: &DVector<f64>) -> DVector<f64> {
        let mut rhs = &self.rhs * x;
        for r in 0..rhs.len() {
            if self.algebraic[r] {
                rhs[r] = forcing[r];
            } else {
                rhs[r] += forcing[r];
            }
        }
        self.lhs.solve(&rhs).expect("factorization checked at construction")
    }

    /// Forcing vector from node samples `u_k`, `u_{k+1}` (trapezoidal mean).
    pub fn forcing_from_nodes(&self, u_k: &DVector<f64>, u_next: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u_k.len(), |r, _| {
            if self.algebraic[r] {
                u_next[r]
            } else {
                0.5 * (u_k[r] + u_next[r])
            }
        })
    }
}

/// Number of steps covering `[0, horizon]` at roughly `step`, and the
/// adjusted step that lands exactly on the horizon.
pub fn grid(horizon: f64, step: f64) -> (usize, f64) {
    let steps = (horizon / step - 1e-9).ceil().max(1.0) as usize;
    (steps, horizon / steps as f64)
}

/// Integrates the attacked deviation dynamics over `[0, attack.horizon()]`.
pub fn integrate_attacked(
    sys: &DescriptorSystem,
    attack: &AttackScenario,
    step: f64,
) -> Result<DeviationTrajectory, DynamicsError> {
    let (steps, h) = grid(attack.horizon(), step);
    let stepper = Stepper::new(sys.e(), sys.a(), h)?;
    let n = sys.n();
    let b = attack.b(n);
    let wave = attack.waveform();
    let mut times = Vec::with_capacity(steps + 1);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = DVector::zeros(n);
    times.push(0.0);
    samples.push(x.clone());
    for k in 0..steps {
        let (t0, t1) = (k as f64 * h, (k + 1) as f64 * h);
        let mean = wave.mean(t0, t1);
        let node = wave.value(t1);
        let forcing = DVector::from_fn(n, |r, _| {
            b[r] * if stepper.is_algebraic(r) { node } else { mean }
        });
        x = stepper.advance(&x, &forcing);
        times.push(t1);
        samples.push(x.clone());
    }
    Ok(DeviationTrajectory {
        times,
        samples,
        step: h,
        scheme: "trapezoidal (differential rows) + collocated algebraic rows",
    })
}

/// States reachable from `source` along nonzero entries of `A` (column to row).
fn reachable(a: &DMatrix<f64>, source: usize) -> Vec<bool> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([source]);
    seen[source] = true;
    while let Some(c) = queue.pop_front() {
        for r in 0..n {
            if !seen[r] && a[(r, c)] != 0.0 {
                seen[r] = true;
                queue.push_back(r);
            }
        }
    }
    seen
}

fn pencil_at(sys: &DescriptorSystem, s: Complex<f64>) -> DMatrix<Complex<f64>> {
    let n = sys.n();
    DMatrix::from_fn(n, n, |r, c| {
        let diag = if r == c { s * sys.e()[r] } else { Complex::new(0.0, 0.0) };
        diag - Complex::new(sys.a()[(r, c)], 0.0)
    })
}

/// Transfer from an attack on state `j` to the deviation of state `i` at the
/// Laplace point `s`, by cofactor expansion:
/// `(-1)^(i+j) |(sE - A) without row j, column i| / |sE - A|`.
pub fn transfer_deviation(
    sys: &DescriptorSystem,
    j: usize,
    i: usize,
    s: Complex<f64>,
) -> Result<Complex<f64>, DynamicsError> {
    let n = sys.n();
    assert!(i < n && j < n, "state index out of range");
    let p = pencil_at(sys, s);
    let det = p.clone().lu().determinant();
    if pencil::is_numerically_singular(&p, det.norm()) {
        return Err(DynamicsError::PoleEvaluation { re: s.re, im: s.im });
    }
    if !reachable(sys.a(), j)[i] {
        return Ok(Complex::new(0.0, 0.0));
    }
    let minor = p.remove_row(j).remove_column(i);
    let minor_det = if n == 1 {
        Complex::new(1.0, 0.0)
    } else {
        minor.lu().determinant()
    };
    let sign = if (i + j).is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(minor_det / det * sign)
}

/// Generation-cost deviation of an attack, decomposed per attacked state.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDeviation {
    pub total: f64,
    /// `(state j, window upper limit, contribution)` per attacked state.
    pub per_state: Vec<(usize, f64, f64)>,
}

/// Running integral `F(t) = int_0^t sum_i c_i |dx_i^(j)(s)| ds` for a single
/// attacked state `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub state: usize,
    pub step: f64,
    /// Integrand samples `sum_i c_i |dx_i(t_k)|`.
    pub rate: Vec<f64>,
    /// Cumulative trapezoidal integral at each grid point.
    pub cumulative: Vec<f64>,
}

impl CostCurve {
    pub fn horizon(&self) -> f64 {
        self.step * (self.rate.len() - 1) as f64
    }

    /// Integral up to `window`, with a partial trapezoid on the last cell.
    pub fn at(&self, window: f64) -> Result<f64, DynamicsError> {
        if !(window > 0.0) {
            return Err(DynamicsError::NonpositiveWindow(window));
        }
        let horizon = self.horizon();
        if window > horizon * (1.0 + 1e-12) {
            return Err(DynamicsError::WindowExceedsHorizon { window, horizon });
        }
        let pos = (window / self.step).min((self.rate.len() - 1) as f64);
        let k = (pos.floor() as usize).min(self.rate.len() - 2);
        let frac = pos - k as f64;
        let (r0, r1) = (self.rate[k], self.rate[k + 1]);
        let r_end = r0 + frac * (r1 - r0);
        Ok(self.cumulative[k] + 0.5 * frac * self.step * (r0 + r_end))
    }
}

/// Instantaneous cost deviation `sum_{i in N_e} c_i |dx_i(t)|` along a trajectory.
pub fn cost_rate(sys: &DescriptorSystem, traj: &DeviationTrajectory) -> Vec<f64> {
    let c = sys.cost();
    traj.samples
        .iter()
        .map(|x| c.iter().zip(x.iter()).map(|(ci, xi)| ci * xi.abs()).sum())
        .collect()
}

/// Cumulative trapezoidal integral of uniformly sampled values.
pub fn cumulative_trapezoid(values: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * step * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Cost curve for attacking state `j` alone with `waveform` over `[0, horizon]`.
pub fn cost_curve(
    sys: &DescriptorSystem,
    j: usize,
    waveform: Waveform,
    horizon: f64,
    step: f64,
) -> Result<CostCurve, DynamicsError> {
    let attack = AttackScenario::new(sys, vec![j], waveform, horizon)?;
    let traj = integrate_attacked(sys, &attack, step)?;
    let rate = cost_rate(sys, &traj);
    let cumulative = cumulative_trapezoid(&rate, traj.step);
    Ok(CostCurve {
        state: j,
        step: traj.step,
        rate,
        cumulative,
    })
}

/// Cost deviation with a separate integration window per attacked state
/// (`windows[k]` belongs to `attack.targets()[k]`). Each attacked state
/// contributes `sum_i c_i int_0^w |dx_i^(j)| dt` from its own single-state
/// response; the attack horizon must cover every window.
pub fn cost_deviation(
    sys: &DescriptorSystem,
    attack: &AttackScenario,
    windows: &[f64],
    step: f64,
) -> Result<CostDeviation, DynamicsError> {
    let targets = attack.targets();
    if windows.len() != targets.len() {
        return Err(DynamicsError::InvalidAttack(format!(
            "{} windows for {} attacked states",
            windows.len(),
            targets.len()
        )));
    }
    for &w in windows {
        if !(w > 0.0) {
            return Err(DynamicsError::NonpositiveWindow(w));
        }
        if w > attack.horizon() * (1.0 + 1e-12) {
            return Err(DynamicsError::WindowExceedsHorizon {
                window: w,
                horizon: attack.horizon(),
            });
        }
    }
    let per_state = targets
        .par_iter()
        .zip(windows.par_iter())
        .map(|(&j, &w)| {
            let curve = cost_curve(sys, j, *attack.waveform(), w, step)?;
            Ok((j, w, curve.at(w)?))
        })
        .collect::<Result<Vec<_>, DynamicsError>>()?;
    let total = per_state.iter().map(|p| p.2).sum();
    Ok(CostDeviation { total, per_state })
}
