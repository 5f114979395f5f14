//! Attacker/defender communication-allocation game.
//!
//! Rows of a payoff matrix are attack index sets, columns are allocations of
//! communication connections over subsystems. The attacker receives the
//! generation-cost deviation and maximizes; the defender minimizes.

mod fictitious;
mod simplex;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detection::detection_time;
use crate::dynamics::{cost_curve, DynamicsError, Waveform};
use crate::model::{DescriptorSystem, Infrastructure};

pub use fictitious::fictitious_play;
pub use simplex::lp_minimax;

/// Default ceiling on the number of enumerated allocations.
pub const DEFAULT_ALLOCATION_CAP: usize = 200_000;
/// Probabilities at or below this are outside the reported support.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("K = {k} exceeds the attack pool of {pool} states")]
    KExceedsPool { k: usize, pool: usize },
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error(
        "{count} allocations exceed the cap of {cap}; raise the granularity, lower the budget \
         or restrict the defender"
    )]
    CapExceeded { count: u128, cap: usize },
    #[error("empty strategy list")]
    EmptyStrategies,
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("attack pool contains invalid state {state} (n = {n})")]
    InvalidPool { state: usize, n: usize },
    #[error("no equal or balanced allocation {0:?} in the defender list")]
    NoEqualAllocation(Vec<u64>),
    #[error("payoff matrix has a non-finite entry at ({row}, {col})")]
    NonFinitePayoff { row: usize, col: usize },
    #[error("linear program failed: {0}")]
    DegenerateLp(String),
    #[error("payoff entry for attack {attack:?}, allocation {allocation:?}: {source}")]
    Payoff {
        attack: Vec<usize>,
        allocation: Vec<u64>,
        source: DynamicsError,
    },
}

/// Connections per subsystem, `m_1..m_N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Allocation(pub Vec<u64>);

impl Allocation {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Detection window `T / m_i` of subsystem `i`.
    pub fn window(&self, horizon: f64, i: usize) -> f64 {
        detection_time(horizon, i, self.0[i]).expect("allocations hold positive entries")
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, m) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, ")")
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(u128::from(n - i)) / u128::from(i + 1);
    }
    acc
}

/// All subsets of `pool` with size in `[1, k]` (plus the empty set when
/// `include_empty`), ordered by size and then lexicographically.
pub fn enumerate_attacks(
    pool: &[usize],
    k: usize,
    include_empty: bool,
) -> Result<Vec<Vec<usize>>, GameError> {
    let mut pool = pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if k > pool.len() {
        return Err(GameError::KExceedsPool {
            k,
            pool: pool.len(),
        });
    }
    let mut out = Vec::new();
    if include_empty {
        out.push(Vec::new());
    }
    for size in 1..=k {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| pool[i]).collect());
            // Advance to the next size-combination in lexicographic order.
            let mut pos = size;
            while pos > 0 && idx[pos - 1] == pool.len() - size + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            idx[pos - 1] += 1;
            for q in pos..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Number of allocations [`enumerate_allocations`] would produce.
pub fn count_allocations(subsystems: usize, budget: u64, granularity: u64, exact: bool) -> u128 {
    if granularity == 0 || subsystems == 0 {
        return 0;
    }
    let units = budget / granularity;
    let n = subsystems as u64;
    if exact {
        if units < n {
            0
        } else {
            binomial(units - 1, n - 1)
        }
    } else {
        binomial(units, n)
    }
}

/// Allocations `m_i in {g, 2g, ...}` with `sum m_i <= budget`, in
/// lexicographic order. With `exact`, only allocations spending
/// `floor(budget / g) * g` are kept; the others are dominated since the
/// payoff is nonincreasing in every `m_i`.
pub fn enumerate_allocations(
    subsystems: usize,
    budget: u64,
    granularity: u64,
    exact: bool,
    cap: usize,
) -> Result<Vec<Allocation>, GameError> {
    enumerate_constrained(&vec![None; subsystems], budget, granularity, exact, cap)
}

/// Like [`enumerate_allocations`], with some subsystems pinned to a fixed
/// number of connections.
pub fn enumerate_constrained(
    fixed: &[Option<u64>],
    budget: u64,
    granularity: u64,
    exact: bool,
    cap: usize,
) -> Result<Vec<Allocation>, GameError> {
    if granularity == 0 {
        return Err(GameError::InfeasibleBudget("granularity must be positive".into()));
    }
    if fixed.is_empty() {
        return Err(GameError::InfeasibleBudget("no subsystems".into()));
    }
    if let Some(bad) = fixed.iter().flatten().find(|&&m| m == 0 || m % granularity != 0) {
        return Err(GameError::InvalidAllocation(format!(
            "pinned value {bad} is not a positive multiple of {granularity}"
        )));
    }
    let pinned: u64 = fixed.iter().flatten().sum();
    let free = fixed.iter().filter(|m| m.is_none()).count();
    let min_total = pinned + free as u64 * granularity;
    if min_total > budget {
        return Err(GameError::InfeasibleBudget(format!(
            "{} subsystems at {granularity} connections need {min_total} > budget {budget}",
            fixed.len()
        )));
    }
    let units = (budget - pinned) / granularity;
    let count = if free == 0 {
        1
    } else {
        count_allocations(free, units * granularity, granularity, exact)
    };
    if count > cap as u128 {
        return Err(GameError::CapExceeded { count, cap });
    }

    let mut out = Vec::with_capacity(count as usize);
    let mut parts = vec![0u64; free];
    fn recurse(
        parts: &mut Vec<u64>,
        pos: usize,
        remaining: u64,
        exact: bool,
        emit: &mut dyn FnMut(&[u64]),
    ) {
        if pos == parts.len() {
            if !exact || remaining == 0 {
                emit(parts);
            }
            return;
        }
        let later = (parts.len() - pos - 1) as u64;
        if remaining < 1 + later {
            return;
        }
        let hi = if exact && later == 0 {
            if remaining == 0 {
                return;
            }
            parts[pos] = remaining;
            recurse(parts, pos + 1, 0, exact, emit);
            return;
        } else {
            remaining - later
        };
        for u in 1..=hi {
            parts[pos] = u;
            recurse(parts, pos + 1, remaining - u, exact, emit);
        }
    }
    let mut emit = |units_per_free: &[u64]| {
        let mut it = units_per_free.iter();
        out.push(Allocation(
            fixed
                .iter()
                .map(|m| m.unwrap_or_else(|| it.next().expect("one unit count per free slot") * granularity))
                .collect(),
        ));
    };
    if free == 0 {
        emit(&[]);
    } else {
        recurse(&mut parts, 0, units, exact, &mut emit);
    }
    Ok(out)
}

/// Payoff to the attacker for every (attack set, allocation) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    values: DMatrix<f64>,
    attacks: Vec<Vec<usize>>,
    allocations: Vec<Allocation>,
    provenance: String,
}

impl PayoffMatrix {
    /// Wraps a raw matrix; strategy handles are generated from indices.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self, GameError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(GameError::EmptyStrategies);
        }
        check_finite(&values)?;
        Ok(Self {
            attacks: (0..values.nrows()).map(|r| vec![r]).collect(),
            allocations: (0..values.ncols()).map(|c| Allocation(vec![c as u64])).collect(),
            values,
            provenance: String::new(),
        })
    }

    /// Attacker payoff `u_a`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Defender payoff `u_d = -u_a`.
    pub fn defender_values(&self) -> DMatrix<f64> {
        -&self.values
    }

    pub fn attacks(&self) -> &[Vec<usize>] {
        &self.attacks
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(self, provenance: impl Into<String>) -> Self {
        Self {
            provenance: provenance.into(),
            ..self
        }
    }
}

fn check_finite(values: &DMatrix<f64>) -> Result<(), GameError> {
    for c in 0..values.ncols() {
        for r in 0..values.nrows() {
            if !values[(r, c)].is_finite() {
                return Err(GameError::NonFinitePayoff { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Impact settings shared by every payoff entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffSettings {
    /// Period `T` whose fraction `T / m_i` is the detection window.
    pub period: f64,
    pub waveform: Waveform,
    /// Integration step for the cost integrals.
    pub step: f64,
}

/// Fills the payoff matrix. Entry `(kappa, mu)` is the sum over attacked
/// states `j` of the single-state cost integral up to `T / m_{sub(j)}`,
/// computed exactly as [`crate::dynamics::cost_deviation`] does.
pub fn build_payoff(
    sys: &DescriptorSystem,
    attacks: &[Vec<usize>],
    allocations: &[Allocation],
    settings: &PayoffSettings,
) -> Result<PayoffMatrix, GameError> {
    if attacks.is_empty() || allocations.is_empty() {
        return Err(GameError::EmptyStrategies);
    }
    let subsystems = sys.partition().len();
    for a in allocations {
        if a.0.len() != subsystems || a.0.contains(&0) {
            return Err(GameError::InvalidAllocation(format!(
                "{a} for {subsystems} subsystems"
            )));
        }
    }
    for &j in attacks.iter().flatten() {
        if j >= sys.n() {
            return Err(GameError::InvalidPool { state: j, n: sys.n() });
        }
    }

    // Each entry is a sum of (state, connection count) contributions.
    let mut needed: BTreeMap<(usize, u64), ()> = BTreeMap::new();
    for attack in attacks {
        for &j in attack {
            let sub = sys.partition().owner(j);
            for a in allocations {
                needed.insert((j, a.0[sub]), ());
            }
        }
    }
    let keys: Vec<(usize, u64)> = needed.into_keys().collect();
    let values: Vec<Result<f64, DynamicsError>> = keys
        .par_iter()
        .map(|&(j, m)| {
            let w = settings.period / m as f64;
            cost_curve(sys, j, settings.waveform, w, settings.step)?.at(w)
        })
        .collect();
    let mut table = BTreeMap::new();
    for (&(j, m), v) in keys.iter().zip(values) {
        match v {
            Ok(v) => {
                table.insert((j, m), v);
            }
            Err(source) => {
                let sub = sys.partition().owner(j);
                let attack = attacks.iter().find(|a| a.contains(&j)).cloned().unwrap_or_default();
                let allocation = allocations
                    .iter()
                    .find(|a| a.0[sub] == m)
                    .map(|a| a.0.clone())
                    .unwrap_or_default();
                return Err(GameError::Payoff {
                    attack,
                    allocation,
                    source,
                });
            }
        }
    }

    let values = DMatrix::from_fn(attacks.len(), allocations.len(), |r, c| {
        attacks[r]
            .iter()
            .map(|&j| table[&(j, allocations[c].0[sys.partition().owner(j)])])
            .sum()
    });
    check_finite(&values)?;
    Ok(PayoffMatrix {
        values,
        attacks: attacks.to_vec(),
        allocations: allocations.to_vec(),
        provenance: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    FictitiousPlay,
    LinearProgram,
}

/// Worst-case deviation of an equilibrium from the defining inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    /// `max_r (A p_d)_r - V`: best attacker gain from a pure deviation.
    pub attacker_excess: f64,
    /// `V - min_c (p_a^T A)_c`: best defender gain from a pure deviation.
    pub defender_excess: f64,
    /// Largest `|payoff - V|` over pure strategies in either support.
    pub indifference: f64,
}

impl Certificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.attacker_excess <= tol && self.defender_excess <= tol && self.indifference <= tol
    }
}

/// Mixed strategies and value of the zero-sum game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub solver: Solver,
    /// Attacker mixture over payoff rows.
    pub attacker: Vec<f64>,
    /// Defender mixture over payoff columns.
    pub defender: Vec<f64>,
    /// `p_a^T A p_d`.
    pub value: f64,
    /// `max_r (A p_d)_r - value`, never negative.
    pub attacker_gain: f64,
    /// `value - min_c (p_a^T A)_c`, never negative.
    pub defender_gain: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Pivots whose ratio test tied at zero (LP only).
    pub degenerate_pivots: usize,
}

impl EquilibriumResult {
    pub(crate) fn evaluate(
        solver: Solver,
        payoff: &DMatrix<f64>,
        attacker: Vec<f64>,
        defender: Vec<f64>,
    ) -> Self {
        let pd = nalgebra::DVector::from_column_slice(&defender);
        let pa = nalgebra::DVector::from_column_slice(&attacker);
        let row_payoffs = payoff * &pd;
        let col_payoffs = payoff.tr_mul(&pa);
        let value = pa.dot(&row_payoffs);
        let upper = row_payoffs.max();
        let lower = col_payoffs.min();
        Self {
            solver,
            attacker,
            defender,
            value,
            attacker_gain: (upper - value).max(0.0),
            defender_gain: (value - lower).max(0.0),
            iterations: 0,
            converged: true,
            degenerate_pivots: 0,
        }
    }

    /// Total exploitability: the sum of both sides' best pure-deviation gains.
    pub fn gap(&self) -> f64 {
        self.attacker_gain + self.defender_gain
    }

    pub fn attacker_support(&self) -> Vec<(usize, f64)> {
        support(&self.attacker)
    }

    pub fn defender_support(&self) -> Vec<(usize, f64)> {
        support(&self.defender)
    }

    pub fn certificate(&self, payoff: &DMatrix<f64>) -> Certificate {
        let pd = nalgebra::DVector::from_column_slice(&self.defender);
        let pa = nalgebra::DVector::from_column_slice(&self.attacker);
        let rows = payoff * &pd;
        let cols = payoff.tr_mul(&pa);
        let v = self.value;
        let mut indifference: f64 = 0.0;
        for (r, &p) in self.attacker.iter().enumerate() {
            if p > SUPPORT_THRESHOLD {
                indifference = indifference.max((rows[r] - v).abs());
            }
        }
        for (c, &p) in self.defender.iter().enumerate() {
            if p > SUPPORT_THRESHOLD {
                indifference = indifference.max((cols[c] - v).abs());
            }
        }
        Certificate {
            attacker_excess: rows.max() - v,
            defender_excess: v - cols.min(),
            indifference,
        }
    }
}

fn support(p: &[f64]) -> Vec<(usize, f64)> {
    p.iter()
        .enumerate()
        .filter(|(_, &v)| v > SUPPORT_THRESHOLD)
        .map(|(i, &v)| (i, v))
        .collect()
}

/// Equal (or most balanced) allocation: `budget / g` units split evenly with
/// the remainder going to the lowest-index subsystems.
pub fn balanced_allocation(subsystems: usize, budget: u64, granularity: u64) -> (Allocation, bool) {
    let units = budget / granularity;
    let n = subsystems as u64;
    let (base, extra) = (units / n, units % n);
    let alloc = (0..n)
        .map(|i| (base + u64::from(i < extra)) * granularity)
        .collect();
    (Allocation(alloc), extra == 0)
}

/// Defender committing to the equal allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualAllocationBaseline {
    pub column: usize,
    pub allocation: Allocation,
    /// `false` when the budget does not split evenly and the most balanced
    /// allocation was used instead.
    pub exact: bool,
    /// Attacker's equilibrium mixture played against the fixed column.
    pub msne_value: f64,
    /// Best pure attack against the fixed column.
    pub best_response_value: f64,
    pub best_response_row: usize,
}

pub fn equal_allocation_baseline(
    payoff: &PayoffMatrix,
    equilibrium: &EquilibriumResult,
    budget: u64,
    granularity: u64,
) -> Result<EqualAllocationBaseline, GameError> {
    let subsystems = payoff.allocations.first().map_or(0, |a| a.0.len());
    if subsystems == 0 || granularity == 0 {
        return Err(GameError::EmptyStrategies);
    }
    let (target, exact) = balanced_allocation(subsystems, budget, granularity);
    let column = payoff
        .allocations
        .iter()
        .position(|a| *a == target)
        .ok_or_else(|| GameError::NoEqualAllocation(target.0.clone()))?;
    let col = payoff.values.column(column);
    let msne_value = equilibrium
        .attacker
        .iter()
        .zip(col.iter())
        .map(|(p, v)| p * v)
        .sum();
    let (best_response_row, best_response_value) = col
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    Ok(EqualAllocationBaseline {
        column,
        allocation: target,
        exact,
        msne_value,
        best_response_value,
        best_response_row,
    })
}

/// Which states the attacker may target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackerRestriction {
    All,
    Electric,
    States(Vec<usize>),
}

/// Which subsystems the defender may reinforce beyond the minimum `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenderRestriction {
    All,
    /// Non-electric subsystems stay at `g`; the rest of the budget goes to
    /// electric subsystems.
    Electric,
}

/// Strategy-space parameters of one game instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSetup {
    pub max_attacked: usize,
    pub include_empty: bool,
    pub budget: u64,
    pub granularity: u64,
    pub exact_budget: bool,
    pub allocation_cap: usize,
    pub payoff: PayoffSettings,
}

pub fn attack_pool(
    sys: &DescriptorSystem,
    restriction: &AttackerRestriction,
) -> Result<Vec<usize>, GameError> {
    match restriction {
        AttackerRestriction::All => Ok((0..sys.n()).collect()),
        AttackerRestriction::Electric => Ok(sys.electric_states()),
        AttackerRestriction::States(list) => {
            if let Some(&bad) = list.iter().find(|&&s| s >= sys.n()) {
                return Err(GameError::InvalidPool { state: bad, n: sys.n() });
            }
            if list.is_empty() {
                return Err(GameError::EmptyStrategies);
            }
            Ok(list.clone())
        }
    }
}

/// Attack sets and allocations under the given restrictions.
pub fn strategy_lists(
    sys: &DescriptorSystem,
    setup: &GameSetup,
    attacker: &AttackerRestriction,
    defender: DefenderRestriction,
) -> Result<(Vec<Vec<usize>>, Vec<Allocation>), GameError> {
    let pool = attack_pool(sys, attacker)?;
    let k = setup.max_attacked.min(pool.len());
    let attacks = enumerate_attacks(&pool, k, setup.include_empty)?;
    let fixed: Vec<Option<u64>> = (0..sys.partition().len())
        .map(|i| match defender {
            DefenderRestriction::All => None,
            DefenderRestriction::Electric => {
                (sys.subsystem_infrastructure(i) != Some(Infrastructure::Electric))
                    .then_some(setup.granularity)
            }
        })
        .collect();
    if fixed.iter().all(Option::is_some) {
        return Err(GameError::EmptyStrategies);
    }
    let allocations = enumerate_constrained(
        &fixed,
        setup.budget,
        setup.granularity,
        setup.exact_budget,
        setup.allocation_cap,
    )?;
    Ok((attacks, allocations))
}

/// Builds and solves (by linear programming) the game under restrictions.
pub fn restricted_game(
    sys: &DescriptorSystem,
    setup: &GameSetup,
    attacker: &AttackerRestriction,
    defender: DefenderRestriction,
) -> Result<(PayoffMatrix, EquilibriumResult), GameError> {
    let (attacks, allocations) = strategy_lists(sys, setup, attacker, defender)?;
    let payoff = build_payoff(sys, &attacks, &allocations, &setup.payoff)?;
    let eq = lp_minimax(payoff.values())?;
    Ok((payoff, eq))
}
