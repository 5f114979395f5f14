//! Scenario files: one TOML document describing the infrastructure, the
//! attacker, the defender and solver settings.
//!
//! Top-level tables `power`, `gas`, `water`, `coupling` and the arrays
//! `partition`, `cost`, `measured` map onto [`InfrastructureSpec`]; `attack`,
//! `defender`, `solver` and `simulation` hold experiment settings. See
//! `scenarios/reference.toml` for an annotated example with units.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::Waveform;
use crate::game::{AttackerRestriction, DefenderRestriction, DEFAULT_ALLOCATION_CAP};
use crate::model::{
    assemble, Bus, CostEntry, CouplingSpec, DescriptorSystem, FluidSpec, Fuel, Generator,
    GeneratorFeed, InfrastructureSpec, Junction, JunctionKind, ModelError, Pipe, PowerSpec,
    SubsystemSpec,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Which budget the defender spends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetConvention {
    /// `B = M`: total connections over the period.
    Connections,
    /// `B = T * M`.
    PeriodConnections,
}

/// Attack pool restriction as written in a scenario or on the command
/// line: `all`, `electric`, or a comma-separated list of state labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AttackPool {
    All,
    Electric,
    States(Vec<String>),
}

impl TryFrom<String> for AttackPool {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<AttackPool> for String {
    fn from(p: AttackPool) -> String {
        match p {
            AttackPool::All => "all".into(),
            AttackPool::Electric => "electric".into(),
            AttackPool::States(list) => list.join(","),
        }
    }
}

impl std::str::FromStr for AttackPool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "all" => Ok(AttackPool::All),
            "electric" => Ok(AttackPool::Electric),
            "" => Err("empty attack pool".into()),
            list => Ok(AttackPool::States(
                list.split(',').map(|l| l.trim().to_string()).collect(),
            )),
        }
    }
}

impl AttackPool {
    pub fn resolve(&self, sys: &DescriptorSystem) -> Result<AttackerRestriction, ScenarioError> {
        Ok(match self {
            AttackPool::All => AttackerRestriction::All,
            AttackPool::Electric => AttackerRestriction::Electric,
            AttackPool::States(labels) => AttackerRestriction::States(resolve_labels(
                sys,
                labels,
                "attack.pool",
            )?),
        })
    }
}

/// Defender restriction: `all` or `electric`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenderPool {
    All,
    Electric,
}

impl std::str::FromStr for DefenderPool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "all" => Ok(DefenderPool::All),
            "electric" => Ok(DefenderPool::Electric),
            other => Err(format!("expected `all` or `electric`, got `{other}`")),
        }
    }
}

impl From<DefenderPool> for DefenderRestriction {
    fn from(p: DefenderPool) -> Self {
        match p {
            DefenderPool::All => DefenderRestriction::All,
            DefenderPool::Electric => DefenderRestriction::Electric,
        }
    }
}

fn resolve_labels(
    sys: &DescriptorSystem,
    labels: &[String],
    field: &str,
) -> Result<Vec<usize>, ScenarioError> {
    labels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            sys.index_of(l)
                .ok_or_else(|| invalid(&format!("{field}[{k}]"), format!("unknown state `{l}`")))
        })
        .collect()
}

fn default_k() -> usize {
    5
}
fn default_game_waveform() -> Waveform {
    Waveform::step(1.0)
}
fn default_pool() -> AttackPool {
    AttackPool::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// `K`: most states attacked at once.
    #[serde(default = "default_k")]
    pub max_attacked: usize,
    /// Signal `v(t)` injected into every attacked state during the game.
    #[serde(default = "default_game_waveform")]
    pub waveform: Waveform,
    #[serde(default = "default_pool")]
    pub pool: AttackPool,
    /// Whether the empty attack is a strategy.
    #[serde(default)]
    pub include_empty: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            max_attacked: default_k(),
            waveform: default_game_waveform(),
            pool: default_pool(),
            include_empty: false,
        }
    }
}

fn default_period() -> f64 {
    5.0
}
fn default_connections() -> u64 {
    1200
}
fn default_convention() -> BudgetConvention {
    BudgetConvention::Connections
}
fn default_granularity() -> u64 {
    100
}
fn default_true() -> bool {
    true
}
fn default_cap() -> usize {
    DEFAULT_ALLOCATION_CAP
}
fn default_defender_pool() -> DefenderPool {
    DefenderPool::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenderConfig {
    /// `T` (s): observation period; detection window of subsystem `i` is `T / m_i`.
    #[serde(default = "default_period")]
    pub period: f64,
    /// `M`: communication connections available.
    #[serde(default = "default_connections")]
    pub connections: u64,
    #[serde(default = "default_convention")]
    pub budget_convention: BudgetConvention,
    /// Explicit budget; overrides the convention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    /// `g`: allocations are multiples of this.
    #[serde(default = "default_granularity")]
    pub granularity: u64,
    /// Keep only allocations that spend the whole budget.
    #[serde(default = "default_true")]
    pub exact_budget: bool,
    #[serde(default = "default_cap")]
    pub allocation_cap: usize,
    #[serde(default = "default_defender_pool")]
    pub pool: DefenderPool,
}

impl Default for DefenderConfig {
    fn default() -> Self {
        Self {
            period: default_period(),
            connections: default_connections(),
            budget_convention: default_convention(),
            budget: None,
            granularity: default_granularity(),
            exact_budget: true,
            allocation_cap: default_cap(),
            pool: default_defender_pool(),
        }
    }
}

impl DefenderConfig {
    pub fn effective_budget(&self) -> u64 {
        self.budget.unwrap_or(match self.budget_convention {
            BudgetConvention::Connections => self.connections,
            BudgetConvention::PeriodConnections => {
                (self.period * self.connections as f64).round() as u64
            }
        })
    }
}

fn default_max_iters() -> usize {
    1_000_000
}
fn default_tol() -> f64 {
    1e-4
}
fn default_impact_step() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Fictitious-play round limit.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Fictitious-play stop: exploitability gap relative to the payoff span.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Integration step (s) for payoff cost integrals.
    #[serde(default = "default_impact_step")]
    pub impact_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            tol: default_tol(),
            impact_step: default_impact_step(),
        }
    }
}

fn default_step() -> f64 {
    crate::dynamics::DEFAULT_STEP
}
fn default_horizon() -> f64 {
    6.0
}
fn default_sim_waveform() -> Waveform {
    Waveform::Pulse {
        magnitude: 1.0,
        start: 1.0,
        stop: 4.0,
    }
}
fn default_nominal() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    crate::detection::DEFAULT_THRESHOLD
}
fn default_relax_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Integrator step (s).
    #[serde(default = "default_step")]
    pub step: f64,
    /// Simulated time span (s).
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sim_waveform")]
    pub waveform: Waveform,
    /// Attacked state labels; every gas and water state when empty.
    #[serde(default)]
    pub targets: Vec<String>,
    /// Nominal generation cost rate the percentage deviation refers to.
    #[serde(default = "default_nominal")]
    pub nominal_cost: f64,
    /// Residue alarm threshold.
    #[serde(default = "default_threshold")]
    pub detection_threshold: f64,
    /// Waveform-relaxation iteration cap.
    #[serde(default = "default_relax_iters")]
    pub relaxation_iterations: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            step: default_step(),
            horizon: default_horizon(),
            waveform: default_sim_waveform(),
            targets: Vec::new(),
            nominal_cost: default_nominal(),
            detection_threshold: default_threshold(),
            relaxation_iterations: default_relax_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub power: PowerSpec,
    #[serde(default)]
    pub gas: FluidSpec,
    #[serde(default)]
    pub water: FluidSpec,
    #[serde(default)]
    pub coupling: CouplingSpec,
    pub partition: Vec<SubsystemSpec>,
    pub cost: Vec<CostEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<Vec<String>>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defender: DefenderConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario types serialize to TOML")
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let d = &self.defender;
        if !(d.period > 0.0 && d.period.is_finite()) {
            return Err(invalid("defender.period", "must be positive"));
        }
        if d.granularity == 0 {
            return Err(invalid("defender.granularity", "must be positive"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if !(self.solver.impact_step > 0.0 && self.solver.impact_step.is_finite()) {
            return Err(invalid("solver.impact_step", "must be positive"));
        }
        let s = &self.simulation;
        if !(s.step > 0.0 && s.step.is_finite()) {
            return Err(invalid("simulation.step", "must be positive"));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(invalid("simulation.horizon", "must be positive"));
        }
        if !(s.nominal_cost > 0.0 && s.nominal_cost.is_finite()) {
            return Err(invalid("simulation.nominal_cost", "must be positive"));
        }
        Ok(())
    }

    pub fn infrastructure(&self) -> InfrastructureSpec {
        InfrastructureSpec {
            power: self.power.clone(),
            gas: self.gas.clone(),
            water: self.water.clone(),
            coupling: self.coupling.clone(),
            partition: self.partition.clone(),
            cost: self.cost.clone(),
            measured: self.measured.clone(),
        }
    }

    pub fn assemble(&self) -> Result<DescriptorSystem, ScenarioError> {
        Ok(assemble(&self.infrastructure())?)
    }

    /// The same scenario with every coupling coefficient zeroed.
    pub fn decoupled(&self) -> Self {
        Self {
            coupling: self.coupling.zeroed(),
            ..self.clone()
        }
    }

    /// Simulation targets; every gas and water state when none are listed.
    pub fn simulation_targets(&self, sys: &DescriptorSystem) -> Result<Vec<usize>, ScenarioError> {
        if self.simulation.targets.is_empty() {
            let mut t = sys.states_of(crate::model::Infrastructure::Gas);
            t.extend(sys.states_of(crate::model::Infrastructure::Water));
            Ok(t)
        } else {
            resolve_labels(sys, &self.simulation.targets, "simulation.targets")
        }
    }
}

/// Twelve-state, six-subsystem reference system: four generators in two
/// electric areas, two gas storages feeding the gas-fired units and two
/// water tanks feeding the others. Parameter values are illustrative.
pub fn reference_scenario() -> Scenario {
    let gen = |name: &str, damping, fuel| Generator {
        name: name.into(),
        inertia: 1.0,
        damping,
        fuel,
    };
    #[rustfmt::skip]
    let l_gg = vec![
        vec![200.0,   0.0, -20.0,  -5.0],
        vec![  0.0, 180.0,  -5.0, -20.0],
        vec![-20.0,  -5.0, 220.0,   0.0],
        vec![ -5.0, -20.0,   0.0, 160.0],
    ];
    let junction = |name: &str, kind, head, ratio: Option<f64>| Junction {
        name: name.into(),
        kind,
        head,
        charging_ratio: ratio,
        demand: None,
    };
    let pipe = |from: &str, to: &str, constant| Pipe {
        from: from.into(),
        to: to.into(),
        constant,
    };
    let gas = FluidSpec {
        junctions: vec![
            junction("W1", JunctionKind::Source, 60.0, None),
            junction("W2", JunctionKind::Source, 60.0, None),
            junction("S1", JunctionKind::Storage, 50.0, Some(0.02)),
            junction("S2", JunctionKind::Storage, 50.0, Some(0.02)),
        ],
        pipes: vec![pipe("W1", "S1", 0.005), pipe("W2", "S2", 0.005)],
        ..FluidSpec::default()
    };
    let water = FluidSpec {
        junctions: vec![
            junction("R1", JunctionKind::Source, 40.0, None),
            junction("R2", JunctionKind::Source, 40.0, None),
            junction("T1", JunctionKind::Storage, 30.0, Some(0.02)),
            junction("T2", JunctionKind::Storage, 30.0, Some(0.02)),
        ],
        pipes: vec![pipe("R1", "T1", 0.04), pipe("R2", "T2", 0.04)],
        ..FluidSpec::default()
    };
    let feed = |junction: &str, generator: &str, coefficient| GeneratorFeed {
        junction: junction.into(),
        generator: generator.into(),
        coefficient,
    };
    let coupling = CouplingSpec {
        gas_to_generator: vec![feed("S1", "G1", 120.0), feed("S2", "G2", 45.0)],
        water_to_generator: vec![feed("T1", "G3", 50.0), feed("T2", "G4", 8.0)],
        ..CouplingSpec::default()
    };
    let sub = |name: &str, states: &[&str]| SubsystemSpec {
        name: name.into(),
        states: states.iter().map(|s| s.to_string()).collect(),
    };
    let mut cost = Vec::new();
    let unit_cost = [("G1", 1.0, 0.1), ("G2", 0.8, 0.08), ("G3", 1.2, 0.12), ("G4", 0.9, 0.09)];
    for (g, c, _) in unit_cost {
        cost.push(CostEntry {
            state: format!("delta[{g}]"),
            coefficient: c,
        });
    }
    for (g, _, c) in unit_cost {
        cost.push(CostEntry {
            state: format!("omega[{g}]"),
            coefficient: c,
        });
    }
    Scenario {
        name: "reference".into(),
        power: PowerSpec {
            generators: vec![
                gen("G1", 30.0, Fuel::Gas),
                gen("G2", 28.0, Fuel::Gas),
                gen("G3", 32.0, Fuel::Other),
                gen("G4", 26.0, Fuel::Other),
            ],
            buses: Vec::<Bus>::new(),
            l_gg,
            l_gl: Vec::new(),
            l_lg: Vec::new(),
            l_ll: Vec::new(),
        },
        gas,
        water,
        coupling,
        partition: vec![
            sub("area1", &["delta[G1]", "delta[G3]", "omega[G1]", "omega[G3]"]),
            sub("area2", &["delta[G2]", "delta[G4]", "omega[G2]", "omega[G4]"]),
            sub("gas1", &["hg[S1]"]),
            sub("gas2", &["hg[S2]"]),
            sub("water1", &["hw[T1]"]),
            sub("water2", &["hw[T2]"]),
        ],
        cost,
        measured: None,
        attack: AttackConfig::default(),
        defender: DefenderConfig::default(),
        solver: SolverConfig::default(),
        simulation: SimulationConfig {
            nominal_cost: 1000.0,
            ..SimulationConfig::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trip() {
        let scn = reference_scenario();
        let text = scn.to_toml();
        assert_eq!(Scenario::from_toml(&text).unwrap(), scn);
    }

    #[test]
    fn annotated_file_matches_generator() {
        let text = include_str!("../../../scenarios/reference.toml");
        assert_eq!(Scenario::from_toml(text).unwrap(), reference_scenario());
    }

    #[test]
    fn reference_assembles() {
        let sys = reference_scenario().assemble().unwrap();
        assert_eq!(sys.n(), 12);
        assert_eq!(sys.partition().len(), 6);
    }

    #[test]
    fn parse_error_is_line_anchored() {
        let mut text = reference_scenario().to_toml();
        text = text.replacen("max_attacked = 5", "max_attacked = \"five\"", 1);
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Parse { line, .. }) => {
                let expected = text
                    .lines()
                    .position(|l| l.contains("\"five\""))
                    .unwrap()
                    + 1;
                assert_eq!(line, expected);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = reference_scenario().to_toml().replacen("[defender]", "[defender]\nbogus = 1", 1);
        assert!(matches!(
            Scenario::from_toml(&text),
            Err(ScenarioError::Parse { .. })
        ));
    }

    #[test]
    fn budget_conventions() {
        let mut d = DefenderConfig::default();
        assert_eq!(d.effective_budget(), 1200);
        d.budget_convention = BudgetConvention::PeriodConnections;
        assert_eq!(d.effective_budget(), 6000);
        d.budget = Some(1680);
        assert_eq!(d.effective_budget(), 1680);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = reference_scenario();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.defender.granularity = 50;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn attack_pool_strings() {
        assert_eq!("all".parse::<AttackPool>(), Ok(AttackPool::All));
        assert_eq!(
            "delta[G1], hg[S1]".parse::<AttackPool>(),
            Ok(AttackPool::States(vec!["delta[G1]".into(), "hg[S1]".into()]))
        );
    }
}
