//! Experiment drivers behind the command-line tool: system summaries,
//! attack simulations, game solutions and budget sweeps, each with a
//! deterministic file output.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::{Complex, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::detection::{centralized_filter, measurement_stream, DetectionError, FilterConfig};
use crate::dynamics::{
    cost_rate, cumulative_trapezoid, integrate_attacked, AttackScenario, DeviationTrajectory,
    DynamicsError, Waveform,
};
use crate::game::{
    build_payoff, equal_allocation_baseline, fictitious_play, lp_minimax, strategy_lists,
    DefenderRestriction, EqualAllocationBaseline, EquilibriumResult, GameError, GameSetup,
    PayoffSettings,
};
use crate::model::{split_block_diagonal, DescriptorSystem, ModelError};
use crate::report::{fmt_num, fmt_short};
use crate::scenario::{AttackPool, DefenderPool, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_artifact(dir: &Path, name: &str, contents: &[u8]) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
}

impl RunMetadata {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        Self {
            scenario: scenario.name.clone(),
            config_hash: scenario.config_hash(),
            seed,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// Structural and spectral facts about an assembled system.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub n: usize,
    pub subsystems: Vec<(String, Vec<String>)>,
    pub algebraic_states: usize,
    pub eigenvalues: Vec<Complex<f64>>,
    pub abscissa: f64,
    /// Nonzeros of `A_C` over the off-block entries.
    pub coupling_density: f64,
    /// Nonzeros of `A` linking states of different infrastructures, over
    /// the number of such entries.
    pub interdependency_density: f64,
}

pub fn build_summary(sys: &DescriptorSystem) -> BuildSummary {
    let split = split_block_diagonal(sys);
    let n = sys.n();
    let in_block: usize = sys.partition().blocks().iter().map(|b| b.len() * b.len()).sum();
    let off_block = n * n - in_block;
    let nonzeros = split.a_c.iter().filter(|v| **v != 0.0).count();
    let labels = sys.labels();
    let states = sys.states();
    let (mut cross, mut cross_nonzero) = (0usize, 0usize);
    for r in 0..n {
        for c in 0..n {
            if states[r].infrastructure != states[c].infrastructure {
                cross += 1;
                cross_nonzero += usize::from(sys.a()[(r, c)] != 0.0);
            }
        }
    }
    BuildSummary {
        n,
        subsystems: sys
            .partition()
            .names()
            .iter()
            .zip(sys.partition().blocks())
            .map(|(name, block)| {
                (
                    name.clone(),
                    block.iter().map(|&i| labels[i].to_string()).collect(),
                )
            })
            .collect(),
        algebraic_states: sys.e().iter().filter(|v| **v == 0.0).count(),
        eigenvalues: sys.spectrum().eigenvalues.clone(),
        abscissa: sys.spectrum().abscissa,
        coupling_density: if off_block == 0 {
            0.0
        } else {
            nonzeros as f64 / off_block as f64
        },
        interdependency_density: if cross == 0 {
            0.0
        } else {
            cross_nonzero as f64 / cross as f64
        },
    }
}

impl fmt::Display for BuildSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "states n = {}", self.n)?;
        writeln!(f, "algebraic states = {}", self.algebraic_states)?;
        writeln!(f, "subsystems N = {}", self.subsystems.len())?;
        for (name, states) in &self.subsystems {
            writeln!(f, "  {name}: {}", states.join(", "))?;
        }
        writeln!(f, "stability margin = {}", fmt_num(-self.abscissa))?;
        writeln!(f, "coupling-block density = {}", fmt_short(self.coupling_density))?;
        writeln!(f, "interdependency density = {}", fmt_short(self.interdependency_density))?;
        writeln!(f, "finite eigenvalues ({}):", self.eigenvalues.len())?;
        for z in &self.eigenvalues {
            writeln!(f, "  {} {}i", fmt_num(z.re), fmt_num(z.im))?;
        }
        Ok(())
    }
}

/// Attacked trajectory with its instantaneous and cumulative cost deviation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub labels: Vec<String>,
    pub targets: Vec<usize>,
    pub trajectory: DeviationTrajectory,
    pub rate: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub nominal_cost: f64,
}

impl Simulation {
    /// Instantaneous deviation as a percentage of the nominal cost rate.
    pub fn percent(&self) -> Vec<f64> {
        self.rate.iter().map(|r| 100.0 * r / self.nominal_cost).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for l in &self.labels {
            write!(out, ",{l}")?;
        }
        writeln!(out, ",dp_rate,dp_cumulative,dp_percent")?;
        let percent = self.percent();
        for (k, x) in self.trajectory.samples.iter().enumerate() {
            write!(out, "{}", fmt_num(self.trajectory.times[k]))?;
            for v in x.iter() {
                write!(out, ",{}", fmt_num(*v))?;
            }
            writeln!(
                out,
                ",{},{},{}",
                fmt_num(self.rate[k]),
                fmt_num(self.cumulative[k]),
                fmt_num(percent[k])
            )?;
        }
        Ok(())
    }
}

/// Simulates `targets` (all jointly) with `waveform`; empty `targets` is the null attack.
pub fn simulate(
    sys: &DescriptorSystem,
    targets: &[usize],
    waveform: Waveform,
    horizon: f64,
    step: f64,
    nominal_cost: f64,
) -> Result<Simulation, ExperimentError> {
    let attack = if targets.is_empty() {
        AttackScenario::null(horizon)?
    } else {
        AttackScenario::new(sys, targets.to_vec(), waveform, horizon)?
    };
    let trajectory = integrate_attacked(sys, &attack, step)?;
    let rate = cost_rate(sys, &trajectory);
    let cumulative = cumulative_trapezoid(&rate, trajectory.step);
    Ok(Simulation {
        labels: sys.labels().iter().map(|l| l.to_string()).collect(),
        targets: attack.targets().to_vec(),
        trajectory,
        rate,
        cumulative,
        nominal_cost,
    })
}

/// Percentage cost deviation over time, one column per separately attacked state.
#[derive(Debug, Clone)]
pub struct DeviationTable {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl DeviationTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for l in &self.labels {
            write!(out, ",{l}")?;
        }
        writeln!(out)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{}", fmt_num(*t))?;
            for c in &self.columns {
                write!(out, ",{}", fmt_num(c[k]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn deviation_table(
    sys: &DescriptorSystem,
    targets: &[usize],
    waveform: Waveform,
    horizon: f64,
    step: f64,
    nominal_cost: f64,
) -> Result<DeviationTable, ExperimentError> {
    let mut table = DeviationTable {
        labels: Vec::new(),
        times: Vec::new(),
        columns: Vec::new(),
    };
    for &j in targets {
        let sim = simulate(sys, &[j], waveform, horizon, step, nominal_cost)?;
        table.labels.push(sys.labels()[j].to_string());
        table.columns.push(sim.percent());
        table.times = sim.trajectory.times;
    }
    Ok(table)
}

/// Residue of the centralized filter watching the attacked plant from a
/// consistent nonzero initial state.
pub fn residue_for_attack(
    sys: &DescriptorSystem,
    attack: Option<&AttackScenario>,
    horizon: f64,
    step: f64,
    threshold: f64,
) -> Result<crate::detection::FilterRun, ExperimentError> {
    let cfg = FilterConfig::stabilizing(sys, horizon, 1, threshold)?;
    let x0 = crate::detection::consistent_initial_state(
        sys,
        &DVector::from_fn(sys.n(), |i, _| 0.1 * (1.0 + i as f64 % 3.0)),
    );
    let (_, y) = measurement_stream(sys, &x0, attack, horizon, step)?;
    Ok(centralized_filter(sys, &cfg, &y, &x0)?)
}

/// Game inputs derived from a scenario and command-line overrides.
pub fn game_setup(scenario: &Scenario, budget: u64, granularity: u64) -> GameSetup {
    let d = &scenario.defender;
    GameSetup {
        max_attacked: scenario.attack.max_attacked,
        include_empty: scenario.attack.include_empty,
        budget,
        granularity,
        exact_budget: d.exact_budget,
        allocation_cap: d.allocation_cap,
        payoff: PayoffSettings {
            period: d.period,
            waveform: scenario.attack.waveform,
            step: scenario.solver.impact_step,
        },
    }
}

/// Options of one game solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub budget: u64,
    pub granularity: u64,
    pub attacker: AttackPool,
    pub defender: DefenderPool,
    pub max_iters: usize,
    pub tol: f64,
}

impl SolveOptions {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            budget: scenario.defender.effective_budget(),
            granularity: scenario.defender.granularity,
            attacker: scenario.attack.pool.clone(),
            defender: scenario.defender.pool,
            max_iters: scenario.solver.max_iters,
            tol: scenario.solver.tol,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportEntry {
    pub strategy: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GameReport {
    pub metadata: RunMetadata,
    pub budget: u64,
    pub granularity: u64,
    pub attacker_pool: String,
    pub defender_pool: String,
    pub attack_count: usize,
    pub allocation_count: usize,
    pub lp: EquilibriumResult,
    pub fictitious_play: EquilibriumResult,
    pub attacker_support: Vec<SupportEntry>,
    pub defender_support: Vec<SupportEntry>,
    pub equal_allocation: Option<EqualAllocationBaseline>,
    #[serde(skip)]
    pub attacks: Vec<String>,
    #[serde(skip)]
    pub allocations: Vec<String>,
    #[serde(skip)]
    pub payoff: nalgebra::DMatrix<f64>,
}

fn attack_label(sys: &DescriptorSystem, attack: &[usize]) -> String {
    let labels = sys.labels();
    let names: Vec<&str> = attack.iter().map(|&i| labels[i]).collect();
    format!("{{{}}}", names.join(", "))
}

fn probability_vector(entries: &[SupportEntry]) -> String {
    let parts: Vec<String> = entries
        .iter()
        .map(|e| format!("{:.3}", e.probability))
        .collect();
    format!("[{}]", parts.join(", "))
}

/// Builds the payoff matrix and solves the game by fictitious play and by
/// linear programming.
pub fn solve(
    sys: &DescriptorSystem,
    scenario: &Scenario,
    options: &SolveOptions,
    seed: u64,
) -> Result<GameReport, ExperimentError> {
    let setup = game_setup(scenario, options.budget, options.granularity);
    let attacker = options.attacker.resolve(sys)?;
    let defender: DefenderRestriction = options.defender.into();
    let (attacks, allocations) = strategy_lists(sys, &setup, &attacker, defender)?;
    let metadata = RunMetadata::new(scenario, seed);
    let payoff = build_payoff(sys, &attacks, &allocations, &setup.payoff)?
        .with_provenance(metadata.config_hash.clone());
    let lp = lp_minimax(payoff.values())?;
    let fp = fictitious_play(payoff.values(), options.max_iters, options.tol);
    let equal_allocation = match defender {
        DefenderRestriction::All => {
            match equal_allocation_baseline(&payoff, &lp, options.budget, options.granularity) {
                Ok(b) => Some(b),
                Err(GameError::NoEqualAllocation(_)) => None,
                Err(e) => return Err(e.into()),
            }
        }
        DefenderRestriction::Electric => None,
    };
    let attack_labels: Vec<String> = attacks.iter().map(|a| attack_label(sys, a)).collect();
    let allocation_labels: Vec<String> = allocations.iter().map(|a| a.to_string()).collect();
    let attacker_support = lp
        .attacker_support()
        .into_iter()
        .map(|(i, p)| SupportEntry {
            strategy: attack_labels[i].clone(),
            probability: p,
        })
        .collect();
    let defender_support = lp
        .defender_support()
        .into_iter()
        .map(|(i, p)| SupportEntry {
            strategy: allocation_labels[i].clone(),
            probability: p,
        })
        .collect();
    Ok(GameReport {
        metadata,
        budget: options.budget,
        granularity: options.granularity,
        attacker_pool: String::from(options.attacker.clone()),
        defender_pool: match options.defender {
            DefenderPool::All => "all".into(),
            DefenderPool::Electric => "electric".into(),
        },
        attack_count: attacks.len(),
        allocation_count: allocations.len(),
        lp,
        fictitious_play: fp,
        attacker_support,
        defender_support,
        equal_allocation,
        attacks: attack_labels,
        allocations: allocation_labels,
        payoff: payoff.values().clone(),
    })
}

impl GameReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        use std::fmt::Write as _;
        let _ = writeln!(w, "scenario {} ({})", self.metadata.scenario, self.metadata.config_hash);
        let _ = writeln!(
            w,
            "budget {} in steps of {}; attacker pool {}; defender pool {}",
            self.budget, self.granularity, self.attacker_pool, self.defender_pool
        );
        let _ = writeln!(
            w,
            "{} attack sets x {} allocations",
            self.attack_count, self.allocation_count
        );
        let _ = writeln!(w, "game value (LP) = {}", fmt_num(self.lp.value));
        let _ = writeln!(
            w,
            "game value (fictitious play) = {} after {} rounds, gap {}",
            fmt_num(self.fictitious_play.value),
            self.fictitious_play.iterations,
            fmt_num(self.fictitious_play.gap())
        );
        let _ = writeln!(w, "attacker support:");
        for e in &self.attacker_support {
            let _ = writeln!(w, "  {}", e.strategy);
        }
        let _ = writeln!(w, "p_a = {}", probability_vector(&self.attacker_support));
        let _ = writeln!(w, "defender support:");
        for e in &self.defender_support {
            let _ = writeln!(w, "  {}", e.strategy);
        }
        let _ = writeln!(w, "p_d = {}", probability_vector(&self.defender_support));
        if let Some(b) = &self.equal_allocation {
            let _ = writeln!(
                w,
                "equal allocation {}{}: attacker MSNE {} / best response {}",
                b.allocation,
                if b.exact { "" } else { " (most balanced)" },
                fmt_num(b.msne_value),
                fmt_num(b.best_response_value)
            );
        }
        s
    }

    pub fn write_payoff_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "attack")?;
        for a in &self.allocations {
            write!(out, ",\"{a}\"")?;
        }
        writeln!(out)?;
        for (r, label) in self.attacks.iter().enumerate() {
            write!(out, "\"{label}\"")?;
            for c in 0..self.payoff.ncols() {
                write!(out, ",{}", fmt_num(self.payoff[(r, c)]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_mixture_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "player,strategy,lp,fictitious_play")?;
        for (i, label) in self.attacks.iter().enumerate() {
            writeln!(
                out,
                "attacker,\"{label}\",{},{}",
                fmt_num(self.lp.attacker[i]),
                fmt_num(self.fictitious_play.attacker[i])
            )?;
        }
        for (i, label) in self.allocations.iter().enumerate() {
            writeln!(
                out,
                "defender,\"{label}\",{},{}",
                fmt_num(self.lp.defender[i]),
                fmt_num(self.fictitious_play.defender[i])
            )?;
        }
        Ok(())
    }

    /// Writes `summary.txt`, `equilibrium.json`, `payoff.csv` and `mixtures.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        write_artifact(dir, "summary.txt", self.summary().as_bytes())?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        write_artifact(dir, "equilibrium.json", (json + "\n").as_bytes())?;
        let mut buf = Vec::new();
        self.write_payoff_csv(&mut buf).map_err(io_err(dir))?;
        write_artifact(dir, "payoff.csv", &buf)?;
        let mut buf = Vec::new();
        self.write_mixture_csv(&mut buf).map_err(io_err(dir))?;
        write_artifact(dir, "mixtures.csv", &buf)
    }
}

/// One budget of a sweep: the game value and the equal-allocation baselines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub budget: u64,
    pub spent: u64,
    pub value: f64,
    pub fictitious_play_value: f64,
    pub equal_exact: bool,
    pub equal_msne: f64,
    pub equal_best_response: f64,
}

pub fn sweep(
    sys: &DescriptorSystem,
    scenario: &Scenario,
    base: &SolveOptions,
    budgets: &[u64],
    seed: u64,
) -> Result<Vec<SweepRow>, ExperimentError> {
    budgets
        .iter()
        .map(|&budget| {
            let options = SolveOptions {
                budget,
                defender: DefenderPool::All,
                ..base.clone()
            };
            let report = solve(sys, scenario, &options, seed)?;
            let baseline = report.equal_allocation.clone().ok_or_else(|| {
                GameError::NoEqualAllocation(Vec::new())
            })?;
            Ok(SweepRow {
                budget,
                spent: budget / base.granularity * base.granularity,
                value: report.lp.value,
                fictitious_play_value: report.fictitious_play.value,
                equal_exact: baseline.exact,
                equal_msne: baseline.msne_value,
                equal_best_response: baseline.best_response_value,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "budget,spent,value,fictitious_play_value,equal_exact,equal_msne,equal_best_response"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.budget,
            r.spent,
            fmt_num(r.value),
            fmt_num(r.fictitious_play_value),
            r.equal_exact,
            fmt_num(r.equal_msne),
            fmt_num(r.equal_best_response)
        )?;
    }
    Ok(())
}
