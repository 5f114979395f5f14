//! Interconnected gas-power-water descriptor model `E x' = A x`, `y = C x`.
//!
//! The electric part follows the linear swing model (phase angles, rotor
//! speeds, bus angles). Gas and water networks contribute storage head
//! pressures (differential rows weighted by the charging ratio) and demand
//! junction heads (algebraic rows). Nonlinear pipe and compressor flow laws
//! enter through a first-order expansion around an operating point.
//!
//! States are ordered in fixed blocks:
//! `delta, omega (gas-fired), omega (other), theta_c, theta_t, theta,
//! h_s^G, h_j^G, h_s^W, h_j^W`.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pencil::{self, PencilIssue};

/// Exponent `n` in the water head-loss law `Q = C |dh|^(1/n)`.
pub const WATER_FLOW_EXPONENT: f64 = 1.85;

/// Finite eigenvalues must have real part strictly below this.
pub const STABILITY_MARGIN: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field}: {message}")]
    InvalidSpec { field: String, message: String },
    #[error("{element}: zero pressure drop at the operating point (h = {head})")]
    ZeroPressureDrop { element: String, head: f64 },
    #[error("{element}: compressor denominator k2 - k1 * ratio^alpha vanishes ({denominator:e})")]
    CompressorSingular { element: String, denominator: f64 },
    #[error("pencil sE - A is not regular")]
    IrregularPencil,
    #[error("system is not asymptotically stable: finite eigenvalue {re} {im:+}i")]
    UnstableSystem { re: f64, im: f64 },
    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::InvalidSpec {
        field: field.into(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Declarative specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fuel {
    Gas,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusClass {
    /// Supplies a gas compressor.
    Compressor,
    /// Supplies a water treatment plant.
    Treatment,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    /// Inertia constant (s^2 pu).
    pub inertia: f64,
    /// Damping coefficient (pu).
    pub damping: f64,
    pub fuel: Fuel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub name: String,
    pub class: BusClass,
}

/// Swing-model data. Susceptance blocks are indexed in the order generators
/// and buses are listed here; assembly permutes them into state order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub buses: Vec<Bus>,
    pub l_gg: Vec<Vec<f64>>,
    #[serde(default)]
    pub l_gl: Vec<Vec<f64>>,
    #[serde(default)]
    pub l_lg: Vec<Vec<f64>>,
    #[serde(default)]
    pub l_ll: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidKind {
    Gas,
    Water,
}

impl FluidKind {
    fn section(self) -> &'static str {
        match self {
            FluidKind::Gas => "gas",
            FluidKind::Water => "water",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunctionKind {
    /// Well or reservoir held at constant head; not a state.
    Source,
    /// Storage unit with charging ratio `R`.
    Storage,
    /// Static-demand junction; algebraic flow balance.
    Demand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub name: String,
    pub kind: JunctionKind,
    /// Operating-point head pressure (pu), strictly positive.
    pub head: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charging_ratio: Option<f64>,
    /// Static demand (pu flow); folded into the operating point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub from: String,
    pub to: String,
    /// Pipeline constant `C_ij` (> 0).
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compressor {
    pub name: String,
    pub from: String,
    pub to: String,
    /// Operating-point power demand `P_c` (pu).
    pub power: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPlant {
    pub name: String,
    /// Junction whose inflow the plant's throughput feeds.
    pub junction: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FluidSpec {
    pub junctions: Vec<Junction>,
    #[serde(default)]
    pub pipes: Vec<Pipe>,
    #[serde(default)]
    pub compressors: Vec<Compressor>,
    #[serde(default)]
    pub treatment_plants: Vec<TreatmentPlant>,
}

/// Fluid head at `junction` drives the mechanical power of `generator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorFeed {
    pub junction: String,
    pub generator: String,
    pub coefficient: f64,
}

/// Bus angle at `bus` drives the electric power of a compressor or plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusFeed {
    pub element: String,
    pub bus: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    #[serde(default)]
    pub gas_to_generator: Vec<GeneratorFeed>,
    #[serde(default)]
    pub water_to_generator: Vec<GeneratorFeed>,
    #[serde(default)]
    pub compressor_to_bus: Vec<BusFeed>,
    #[serde(default)]
    pub treatment_to_bus: Vec<BusFeed>,
}

impl CouplingSpec {
    /// Same maps with every coefficient set to zero.
    pub fn zeroed(&self) -> Self {
        let zero_gen = |v: &Vec<GeneratorFeed>| {
            v.iter()
                .map(|f| GeneratorFeed {
                    coefficient: 0.0,
                    ..f.clone()
                })
                .collect()
        };
        let zero_bus = |v: &Vec<BusFeed>| {
            v.iter()
                .map(|f| BusFeed {
                    coefficient: 0.0,
                    ..f.clone()
                })
                .collect()
        };
        Self {
            gas_to_generator: zero_gen(&self.gas_to_generator),
            water_to_generator: zero_gen(&self.water_to_generator),
            compressor_to_bus: zero_bus(&self.compressor_to_bus),
            treatment_to_bus: zero_bus(&self.treatment_to_bus),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub name: String,
    /// State labels, e.g. `delta[G1]`, `hg[S1]`.
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub state: String,
    pub coefficient: f64,
}

/// Everything needed to assemble a [`DescriptorSystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfrastructureSpec {
    pub power: PowerSpec,
    #[serde(default)]
    pub gas: FluidSpec,
    #[serde(default)]
    pub water: FluidSpec,
    #[serde(default)]
    pub coupling: CouplingSpec,
    pub partition: Vec<SubsystemSpec>,
    pub cost: Vec<CostEntry>,
    /// Measured state labels; all states when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<Vec<String>>,
}

// ---------------------------------------------------------------------------
// Linearization of flow laws
// ---------------------------------------------------------------------------

/// First-order coefficients of one flow element `Q_ij` around the operating
/// point: `dQ = d_from * dh_i + d_to * dh_j (+ d_power * dP_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLinearization {
    pub element: String,
    /// Junction indices into [`FluidSpec::junctions`].
    pub from: usize,
    pub to: usize,
    pub d_from: f64,
    pub d_to: f64,
    /// Present for compressors: sensitivity to the compressor's power demand.
    pub d_power: Option<f64>,
}

/// Gas pipe flow `Q = sgn(h_i, h_j) C sqrt(|h_i^2 - h_j^2|)`.
pub fn gas_pipe_flow(constant: f64, hi: f64, hj: f64) -> f64 {
    let sign = if hi >= hj { 1.0 } else { -1.0 };
    sign * constant * (hi * hi - hj * hj).abs().sqrt()
}

/// Water pipe flow `Q = sgn(h_i, h_j) C |h_i - h_j|^(1/1.85)`.
pub fn water_pipe_flow(constant: f64, hi: f64, hj: f64) -> f64 {
    let sign = if hi >= hj { 1.0 } else { -1.0 };
    sign * constant * (hi - hj).abs().powf(1.0 / WATER_FLOW_EXPONENT)
}

/// Compressor flow `Q = sgn(h_i, h_j) P_c / (k2 - k1 (max/min)^alpha)`.
pub fn compressor_flow(c: &Compressor, power: f64, hi: f64, hj: f64) -> f64 {
    let sign = if hi >= hj { 1.0 } else { -1.0 };
    let ratio = hi.max(hj) / hi.min(hj);
    sign * power / (c.k2 - c.k1 * ratio.powf(c.alpha))
}

fn junction_index(fluid: &FluidSpec) -> HashMap<&str, usize> {
    fluid
        .junctions
        .iter()
        .enumerate()
        .map(|(i, j)| (j.name.as_str(), i))
        .collect()
}

/// Linearizes every pipe (and compressor, for gas) of `fluid` around its
/// junction operating heads.
pub fn linearize_coupling(
    fluid: &FluidSpec,
    kind: FluidKind,
) -> Result<Vec<FlowLinearization>, ModelError> {
    let section = kind.section();
    let index = junction_index(fluid);
    let lookup = |name: &str, field: String| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| invalid(field, format!("unknown junction `{name}`")))
    };
    let mut out = Vec::with_capacity(fluid.pipes.len() + fluid.compressors.len());

    for (p, pipe) in fluid.pipes.iter().enumerate() {
        let field = format!("{section}.pipes[{p}]");
        let i = lookup(&pipe.from, format!("{field}.from"))?;
        let j = lookup(&pipe.to, format!("{field}.to"))?;
        let (hi, hj) = (fluid.junctions[i].head, fluid.junctions[j].head);
        let element = format!("{section} pipe {}->{}", pipe.from, pipe.to);
        if hi <= 0.0 || hj <= 0.0 {
            return Err(invalid(field, "operating heads must be positive"));
        }
        if hi == hj {
            return Err(ModelError::ZeroPressureDrop { element, head: hi });
        }
        let c = pipe.constant;
        let (d_from, d_to) = match kind {
            FluidKind::Gas => {
                let root = (hi * hi - hj * hj).abs().sqrt();
                (c * hi / root, -c * hj / root)
            }
            FluidKind::Water => {
                let exponent = 1.0 / WATER_FLOW_EXPONENT;
                let slope = c * exponent * (hi - hj).abs().powf(exponent - 1.0);
                (slope, -slope)
            }
        };
        out.push(FlowLinearization {
            element,
            from: i,
            to: j,
            d_from,
            d_to,
            d_power: None,
        });
    }

    if kind == FluidKind::Water && !fluid.compressors.is_empty() {
        return Err(invalid("water.compressors", "compressors are gas-only"));
    }
    for (k, comp) in fluid.compressors.iter().enumerate() {
        let field = format!("{section}.compressors[{k}]");
        let i = lookup(&comp.from, format!("{field}.from"))?;
        let j = lookup(&comp.to, format!("{field}.to"))?;
        let (hi, hj) = (fluid.junctions[i].head, fluid.junctions[j].head);
        let element = format!("compressor {}", comp.name);
        if hi <= 0.0 || hj <= 0.0 {
            return Err(invalid(field, "operating heads must be positive"));
        }
        if hi == hj {
            return Err(ModelError::ZeroPressureDrop { element, head: hi });
        }
        let sign = if hi > hj { 1.0 } else { -1.0 };
        let ratio = hi.max(hj) / hi.min(hj);
        let denominator = comp.k2 - comp.k1 * ratio.powf(comp.alpha);
        if !denominator.is_finite() || denominator.abs() < 1e-12 {
            return Err(ModelError::CompressorSingular {
                element,
                denominator,
            });
        }
        // dQ/dratio, then chain through ratio = max/min.
        let dq_dratio = sign * comp.power * comp.k1 * comp.alpha * ratio.powf(comp.alpha - 1.0)
            / (denominator * denominator);
        let (dr_dhi, dr_dhj) = if hi > hj {
            (1.0 / hj, -hi / (hj * hj))
        } else {
            (-hj / (hi * hi), 1.0 / hi)
        };
        out.push(FlowLinearization {
            element,
            from: i,
            to: j,
            d_from: dq_dratio * dr_dhi,
            d_to: dq_dratio * dr_dhj,
            d_power: Some(sign / denominator),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Assembled system
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infrastructure {
    Electric,
    Gas,
    Water,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    PhaseAngle,
    Speed,
    BusAngle,
    StorageHead,
    JunctionHead,
    /// States of systems built directly from matrices.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateInfo {
    pub label: String,
    pub kind: StateKind,
    pub infrastructure: Infrastructure,
}

/// Disjoint cover of the state indices by named subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    names: Vec<String>,
    blocks: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl Partition {
    pub fn new(n: usize, names: Vec<String>, blocks: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        if names.len() != blocks.len() {
            return Err(ModelError::PartitionMismatch(
                "one name per block required".into(),
            ));
        }
        let mut owner = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(ModelError::PartitionMismatch(format!(
                    "subsystem `{}` is empty",
                    names[b]
                )));
            }
            for &i in block {
                if i >= n {
                    return Err(ModelError::PartitionMismatch(format!(
                        "state index {i} out of range (n = {n})"
                    )));
                }
                if owner[i] != usize::MAX {
                    return Err(ModelError::PartitionMismatch(format!(
                        "state {i} assigned to both `{}` and `{}`",
                        names[owner[i]], names[b]
                    )));
                }
                owner[i] = b;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(ModelError::PartitionMismatch(format!(
                "state {i} belongs to no subsystem"
            )));
        }
        let blocks = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        Ok(Self {
            names,
            blocks,
            owner,
        })
    }

    pub fn single(n: usize) -> Self {
        Self::new(n, vec!["all".into()], vec![(0..n).collect()]).expect("trivial partition")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Subsystem containing state `i`.
    pub fn owner(&self, i: usize) -> usize {
        self.owner[i]
    }
}

/// Finite spectrum of the pencil recorded at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Largest real part (negative for an accepted system).
    pub abscissa: f64,
}

/// Immutable descriptor system `E x' = A x`, `y = C x` with a subsystem partition.
#[derive(Debug, Clone)]
pub struct DescriptorSystem {
    e: DVector<f64>,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    states: Vec<StateInfo>,
    partition: Partition,
    cost: DVector<f64>,
    spectrum: Spectrum,
}

impl DescriptorSystem {
    /// Builds a system from raw matrices; checks pencil regularity and
    /// asymptotic stability. Output is the identity, the partition a single
    /// block and all cost coefficients zero until overridden.
    pub fn new(e: DVector<f64>, a: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = e.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(invalid("A", format!("expected {n}x{n}")));
        }
        let spectrum = checked_spectrum(&e, &a)?;
        let states = (0..n)
            .map(|i| StateInfo {
                label: format!("x{}", i + 1),
                kind: StateKind::Generic,
                infrastructure: Infrastructure::Electric,
            })
            .collect();
        Ok(Self {
            c: DMatrix::identity(n, n),
            partition: Partition::single(n),
            cost: DVector::zeros(n),
            e,
            a,
            states,
            spectrum,
        })
    }

    pub fn with_partition(mut self, partition: Partition) -> Result<Self, ModelError> {
        if partition.owner.len() != self.n() {
            return Err(ModelError::PartitionMismatch(format!(
                "partition covers {} states, system has {}",
                partition.owner.len(),
                self.n()
            )));
        }
        self.partition = partition;
        self.c = output_matrix(&self.partition, &(0..self.n()).collect::<Vec<_>>());
        Ok(self)
    }

    pub fn with_cost(mut self, cost: DVector<f64>) -> Self {
        assert_eq!(cost.len(), self.n());
        self.cost = cost;
        self
    }

    pub fn with_states(mut self, states: Vec<StateInfo>) -> Self {
        assert_eq!(states.len(), self.n());
        self.states = states;
        self
    }

    /// Restricts the output to `measured` states, rows grouped by subsystem.
    pub fn with_measured(mut self, measured: &[usize]) -> Self {
        self.c = output_matrix(&self.partition, measured);
        self
    }

    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn e(&self) -> &DVector<f64> {
        &self.e
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn states(&self) -> &[StateInfo] {
        &self.states
    }

    pub fn labels(&self) -> Vec<&str> {
        self.states.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s.label == label)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn cost(&self) -> &DVector<f64> {
        &self.cost
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Indices of electric states (the cost-bearing set).
    pub fn electric_states(&self) -> Vec<usize> {
        self.states_of(Infrastructure::Electric)
    }

    pub fn states_of(&self, infra: Infrastructure) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.states[i].infrastructure == infra)
            .collect()
    }

    /// Infrastructure of a subsystem, if all of its states share one.
    pub fn subsystem_infrastructure(&self, sub: usize) -> Option<Infrastructure> {
        let block = &self.partition.blocks[sub];
        let first = self.states[block[0]].infrastructure;
        block
            .iter()
            .all(|&i| self.states[i].infrastructure == first)
            .then_some(first)
    }

    /// Copy with a different `A` (same `E`, labels, partition, output, cost),
    /// revalidated.
    pub fn with_a(&self, a: DMatrix<f64>) -> Result<Self, ModelError> {
        let spectrum = checked_spectrum(&self.e, &a)?;
        Ok(Self {
            a,
            spectrum,
            ..self.clone()
        })
    }
}

fn output_matrix(partition: &Partition, measured: &[usize]) -> DMatrix<f64> {
    let n = partition.owner.len();
    let set: BTreeSet<usize> = measured.iter().copied().collect();
    let rows: Vec<usize> = partition
        .blocks
        .iter()
        .flat_map(|b| b.iter().copied().filter(|i| set.contains(i)))
        .collect();
    let mut c = DMatrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        c[(r, i)] = 1.0;
    }
    c
}

fn checked_spectrum(e: &DVector<f64>, a: &DMatrix<f64>) -> Result<Spectrum, ModelError> {
    let eigenvalues = pencil::finite_eigenvalues(e, a).map_err(|issue| match issue {
        PencilIssue::Irregular => ModelError::IrregularPencil,
    })?;
    let abscissa = pencil::spectral_abscissa(&eigenvalues);
    if let Some(bad) = eigenvalues.iter().find(|z| z.re >= STABILITY_MARGIN) {
        return Err(ModelError::UnstableSystem {
            re: bad.re,
            im: bad.im,
        });
    }
    Ok(Spectrum {
        eigenvalues,
        abscissa,
    })
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

fn check_square(field: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), ModelError> {
    // An omitted block with zero rows or zero columns is accepted.
    if (rows == 0 || cols == 0) && m.iter().all(|r| r.is_empty()) && m.len() <= rows.max(1) {
        return Ok(());
    }
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(invalid(field, format!("expected a {rows}x{cols} matrix")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(())
}

fn at(m: &[Vec<f64>], i: usize, j: usize) -> f64 {
    m.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0)
}

struct FluidLayout {
    /// State index per junction (`None` for sources).
    state: Vec<Option<usize>>,
}

fn validate_fluid(fluid: &FluidSpec, kind: FluidKind) -> Result<(), ModelError> {
    let section = kind.section();
    let mut seen = BTreeSet::new();
    for (k, j) in fluid.junctions.iter().enumerate() {
        let field = format!("{section}.junctions[{k}]");
        if !seen.insert(j.name.as_str()) {
            return Err(invalid(field, format!("duplicate junction `{}`", j.name)));
        }
        if !(j.head.is_finite() && j.head > 0.0) {
            return Err(invalid(format!("{field}.head"), "must be finite and > 0"));
        }
        match j.kind {
            JunctionKind::Storage => match j.charging_ratio {
                Some(r) if r.is_finite() && r > 0.0 => {}
                _ => {
                    return Err(invalid(
                        format!("{field}.charging_ratio"),
                        "storage needs a finite charging ratio > 0",
                    ))
                }
            },
            JunctionKind::Demand | JunctionKind::Source => {}
        }
    }
    for (p, pipe) in fluid.pipes.iter().enumerate() {
        if !(pipe.constant.is_finite() && pipe.constant > 0.0) {
            return Err(invalid(
                format!("{section}.pipes[{p}].constant"),
                "must be finite and > 0",
            ));
        }
    }
    if kind == FluidKind::Gas && !fluid.treatment_plants.is_empty() {
        return Err(invalid("gas.treatment_plants", "treatment plants are water-only"));
    }
    let index = junction_index(fluid);
    for (t, plant) in fluid.treatment_plants.iter().enumerate() {
        if !index.contains_key(plant.junction.as_str()) {
            return Err(invalid(
                format!("{section}.treatment_plants[{t}].junction"),
                format!("unknown junction `{}`", plant.junction),
            ));
        }
    }
    Ok(())
}

/// Assembles the interconnected descriptor system and verifies that its
/// pencil is regular and asymptotically stable.
pub fn assemble(spec: &InfrastructureSpec) -> Result<DescriptorSystem, ModelError> {
    let power = &spec.power;
    let ng = power.generators.len();
    let nb = power.buses.len();
    if ng == 0 {
        return Err(invalid("power.generators", "at least one generator required"));
    }
    let mut gen_names = BTreeSet::new();
    for (k, g) in power.generators.iter().enumerate() {
        if !gen_names.insert(g.name.as_str()) {
            return Err(invalid(
                format!("power.generators[{k}].name"),
                format!("duplicate generator `{}`", g.name),
            ));
        }
        if !(g.inertia.is_finite() && g.inertia > 0.0) {
            return Err(invalid(format!("power.generators[{k}].inertia"), "must be > 0"));
        }
        if !(g.damping.is_finite() && g.damping >= 0.0) {
            return Err(invalid(format!("power.generators[{k}].damping"), "must be >= 0"));
        }
    }
    let mut bus_names = BTreeSet::new();
    for (k, b) in power.buses.iter().enumerate() {
        if !bus_names.insert(b.name.as_str()) {
            return Err(invalid(
                format!("power.buses[{k}].name"),
                format!("duplicate bus `{}`", b.name),
            ));
        }
    }
    check_square("power.l_gg", &power.l_gg, ng, ng)?;
    check_square("power.l_gl", &power.l_gl, ng, nb)?;
    check_square("power.l_lg", &power.l_lg, nb, ng)?;
    check_square("power.l_ll", &power.l_ll, nb, nb)?;
    validate_fluid(&spec.gas, FluidKind::Gas)?;
    validate_fluid(&spec.water, FluidKind::Water)?;

    // Generator order: gas-fired first; bus order: compressor, treatment, other.
    let gen_order: Vec<usize> = (0..ng)
        .filter(|&g| power.generators[g].fuel == Fuel::Gas)
        .chain((0..ng).filter(|&g| power.generators[g].fuel == Fuel::Other))
        .collect();
    let bus_order: Vec<usize> = [BusClass::Compressor, BusClass::Treatment, BusClass::Other]
        .iter()
        .flat_map(|class| (0..nb).filter(move |&b| power.buses[b].class == *class))
        .collect();

    let mut states: Vec<StateInfo> = Vec::new();
    let mut push = |label: String, kind: StateKind, infra: Infrastructure| {
        states.push(StateInfo {
            label,
            kind,
            infrastructure: infra,
        });
        states.len() - 1
    };
    let delta: Vec<usize> = gen_order
        .iter()
        .map(|&g| {
            push(
                format!("delta[{}]", power.generators[g].name),
                StateKind::PhaseAngle,
                Infrastructure::Electric,
            )
        })
        .collect();
    let omega: Vec<usize> = gen_order
        .iter()
        .map(|&g| {
            push(
                format!("omega[{}]", power.generators[g].name),
                StateKind::Speed,
                Infrastructure::Electric,
            )
        })
        .collect();
    let theta: Vec<usize> = bus_order
        .iter()
        .map(|&b| {
            push(
                format!("theta[{}]", power.buses[b].name),
                StateKind::BusAngle,
                Infrastructure::Electric,
            )
        })
        .collect();
    let mut fluid_layout = |fluid: &FluidSpec, prefix: &str, infra: Infrastructure| {
        let mut state = vec![None; fluid.junctions.len()];
        for kind in [JunctionKind::Storage, JunctionKind::Demand] {
            for (k, j) in fluid.junctions.iter().enumerate() {
                if j.kind == kind {
                    let sk = if kind == JunctionKind::Storage {
                        StateKind::StorageHead
                    } else {
                        StateKind::JunctionHead
                    };
                    state[k] = Some(push(format!("{prefix}[{}]", j.name), sk, infra));
                }
            }
        }
        FluidLayout { state }
    };
    let gas_layout = fluid_layout(&spec.gas, "hg", Infrastructure::Gas);
    let water_layout = fluid_layout(&spec.water, "hw", Infrastructure::Water);
    let n = states.len();

    let mut e = DVector::zeros(n);
    let mut a = DMatrix::zeros(n, n);

    // Electric rows.
    for (p, &g) in gen_order.iter().enumerate() {
        let gen = &power.generators[g];
        e[delta[p]] = 1.0;
        a[(delta[p], omega[p])] = 1.0;
        e[omega[p]] = gen.inertia;
        a[(omega[p], omega[p])] = -gen.damping;
        for (q, &h) in gen_order.iter().enumerate() {
            a[(omega[p], delta[q])] = -at(&power.l_gg, g, h);
        }
        for (q, &b) in bus_order.iter().enumerate() {
            a[(omega[p], theta[q])] = -at(&power.l_gl, g, b);
        }
    }
    for (p, &b) in bus_order.iter().enumerate() {
        for (q, &g) in gen_order.iter().enumerate() {
            a[(theta[p], delta[q])] = -at(&power.l_lg, b, g);
        }
        for (q, &c) in bus_order.iter().enumerate() {
            a[(theta[p], theta[q])] = -at(&power.l_ll, b, c);
        }
    }

    let gen_slot: HashMap<&str, usize> = gen_order
        .iter()
        .enumerate()
        .map(|(p, &g)| (power.generators[g].name.as_str(), p))
        .collect();
    let bus_slot: HashMap<&str, usize> = bus_order
        .iter()
        .enumerate()
        .map(|(p, &b)| (power.buses[b].name.as_str(), p))
        .collect();

    // Fluid rows: storage balances (differential) and demand balances (algebraic).
    let mut compressor_power: HashMap<&str, (usize, usize, f64)> = HashMap::new();
    for (fluid, kind, layout) in [
        (&spec.gas, FluidKind::Gas, &gas_layout),
        (&spec.water, FluidKind::Water, &water_layout),
    ] {
        for (k, j) in fluid.junctions.iter().enumerate() {
            if let (Some(s), JunctionKind::Storage) = (layout.state[k], j.kind) {
                e[s] = j.charging_ratio.expect("validated");
            }
        }
        let lin = linearize_coupling(fluid, kind)?;
        for (idx, l) in lin.iter().enumerate() {
            for (node, sign) in [(l.from, -1.0), (l.to, 1.0)] {
                let Some(row) = layout.state[node] else { continue };
                if let Some(col) = layout.state[l.from] {
                    a[(row, col)] += sign * l.d_from;
                }
                if let Some(col) = layout.state[l.to] {
                    a[(row, col)] += sign * l.d_to;
                }
            }
            if let Some(dp) = l.d_power {
                let comp = &fluid.compressors[idx - fluid.pipes.len()];
                compressor_power.insert(
                    comp.name.as_str(),
                    (l.from, l.to, dp),
                );
            }
        }
    }

    // Compressor power follows its bus angle: dP_c = coeff * dtheta_c.
    let mut fed_compressors = BTreeSet::new();
    for (k, feed) in spec.coupling.compressor_to_bus.iter().enumerate() {
        let field = format!("coupling.compressor_to_bus[{k}]");
        let &(from, to, dp) = compressor_power
            .get(feed.element.as_str())
            .ok_or_else(|| invalid(format!("{field}.element"), format!("unknown compressor `{}`", feed.element)))?;
        let bus = bus_slot
            .get(feed.bus.as_str())
            .copied()
            .ok_or_else(|| invalid(format!("{field}.bus"), format!("unknown bus `{}`", feed.bus)))?;
        if !feed.coefficient.is_finite() {
            return Err(invalid(format!("{field}.coefficient"), "must be finite"));
        }
        if !fed_compressors.insert(feed.element.as_str()) {
            return Err(invalid(field, "compressor mapped to more than one bus"));
        }
        let col = theta[bus];
        for (node, sign) in [(from, -1.0), (to, 1.0)] {
            if let Some(row) = gas_layout.state[node] {
                a[(row, col)] += sign * dp * feed.coefficient;
            }
        }
    }
    if let Some(c) = spec
        .gas
        .compressors
        .iter()
        .find(|c| !fed_compressors.contains(c.name.as_str()))
    {
        return Err(invalid(
            "coupling.compressor_to_bus",
            format!("compressor `{}` has no supplying bus", c.name),
        ));
    }

    // Treatment throughput injected at its junction: dQ = coeff * dtheta_t.
    let plant_junction: HashMap<&str, usize> = {
        let index = junction_index(&spec.water);
        spec.water
            .treatment_plants
            .iter()
            .map(|t| (t.name.as_str(), index[t.junction.as_str()]))
            .collect()
    };
    let mut fed_plants = BTreeSet::new();
    for (k, feed) in spec.coupling.treatment_to_bus.iter().enumerate() {
        let field = format!("coupling.treatment_to_bus[{k}]");
        let &node = plant_junction
            .get(feed.element.as_str())
            .ok_or_else(|| invalid(format!("{field}.element"), format!("unknown treatment plant `{}`", feed.element)))?;
        let bus = bus_slot
            .get(feed.bus.as_str())
            .copied()
            .ok_or_else(|| invalid(format!("{field}.bus"), format!("unknown bus `{}`", feed.bus)))?;
        if !feed.coefficient.is_finite() {
            return Err(invalid(format!("{field}.coefficient"), "must be finite"));
        }
        if !fed_plants.insert(feed.element.as_str()) {
            return Err(invalid(field, "treatment plant mapped to more than one bus"));
        }
        if let Some(row) = water_layout.state[node] {
            a[(row, theta[bus])] += feed.coefficient;
        }
    }
    if let Some(t) = spec
        .water
        .treatment_plants
        .iter()
        .find(|t| !fed_plants.contains(t.name.as_str()))
    {
        return Err(invalid(
            "coupling.treatment_to_bus",
            format!("treatment plant `{}` has no supplying bus", t.name),
        ));
    }

    // Fluid heads drive generator mechanical power.
    let mut gas_fed = BTreeSet::new();
    for (fluid, layout, feeds, name) in [
        (&spec.gas, &gas_layout, &spec.coupling.gas_to_generator, "gas_to_generator"),
        (&spec.water, &water_layout, &spec.coupling.water_to_generator, "water_to_generator"),
    ] {
        let index = junction_index(fluid);
        for (k, feed) in feeds.iter().enumerate() {
            let field = format!("coupling.{name}[{k}]");
            let junction = index
                .get(feed.junction.as_str())
                .copied()
                .ok_or_else(|| invalid(format!("{field}.junction"), format!("unknown junction `{}`", feed.junction)))?;
            let col = layout.state[junction].ok_or_else(|| {
                invalid(format!("{field}.junction"), "source junctions have no head deviation")
            })?;
            let p = gen_slot
                .get(feed.generator.as_str())
                .copied()
                .ok_or_else(|| invalid(format!("{field}.generator"), format!("unknown generator `{}`", feed.generator)))?;
            if !feed.coefficient.is_finite() {
                return Err(invalid(format!("{field}.coefficient"), "must be finite"));
            }
            if name == "gas_to_generator" {
                if power.generators[gen_order[p]].fuel != Fuel::Gas {
                    return Err(invalid(field, format!("generator `{}` is not gas-fired", feed.generator)));
                }
                if !gas_fed.insert(p) {
                    return Err(invalid(field, format!("generator `{}` has two gas supplies", feed.generator)));
                }
            }
            a[(omega[p], col)] += feed.coefficient;
        }
    }
    if let Some(g) = power
        .generators
        .iter()
        .find(|g| g.fuel == Fuel::Gas && !gas_fed.contains(&gen_slot[g.name.as_str()]))
    {
        return Err(invalid(
            "coupling.gas_to_generator",
            format!("gas-fired generator `{}` has no gas supply", g.name),
        ));
    }

    // Partition, cost and output.
    let label_index: HashMap<&str, usize> = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.label.as_str(), i))
        .collect();
    let resolve = |label: &str| {
        label_index
            .get(label)
            .copied()
            .ok_or_else(|| ModelError::PartitionMismatch(format!("unknown state `{label}`")))
    };
    let mut names = Vec::new();
    let mut blocks = Vec::new();
    for sub in &spec.partition {
        names.push(sub.name.clone());
        blocks.push(
            sub.states
                .iter()
                .map(|l| resolve(l))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let partition = Partition::new(n, names, blocks)?;

    let mut cost = DVector::zeros(n);
    let mut costed = BTreeSet::new();
    for (k, entry) in spec.cost.iter().enumerate() {
        let field = format!("cost[{k}]");
        let i = *label_index
            .get(entry.state.as_str())
            .ok_or_else(|| invalid(format!("{field}.state"), format!("unknown state `{}`", entry.state)))?;
        if states[i].infrastructure != Infrastructure::Electric {
            return Err(invalid(field, "cost coefficients apply to electric states only"));
        }
        if !entry.coefficient.is_finite() {
            return Err(invalid(format!("{field}.coefficient"), "must be finite"));
        }
        if !costed.insert(i) {
            return Err(invalid(field, format!("duplicate cost for `{}`", entry.state)));
        }
        cost[i] = entry.coefficient;
    }
    if let Some(i) = (0..n).find(|&i| states[i].infrastructure == Infrastructure::Electric && !costed.contains(&i)) {
        return Err(invalid("cost", format!("missing coefficient for `{}`", states[i].label)));
    }

    let measured: Vec<usize> = match &spec.measured {
        None => (0..n).collect(),
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(k, l)| {
                label_index
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| invalid(format!("measured[{k}]"), format!("unknown state `{l}`")))
            })
            .collect::<Result<_, _>>()?,
    };

    Ok(DescriptorSystem::new(e, a)?
        .with_states(states)
        .with_partition(partition)?
        .with_cost(cost)
        .with_measured(&measured))
}

// ---------------------------------------------------------------------------
// Block split
// ---------------------------------------------------------------------------

/// `A = A_D + A_C` under the subsystem partition, with directed dependencies.
#[derive(Debug, Clone)]
pub struct BlockSplit {
    pub a_d: DMatrix<f64>,
    pub a_c: DMatrix<f64>,
    /// `inbound[i]`: subsystems `j != i` with a nonzero block `A_ij`.
    pub inbound: Vec<BTreeSet<usize>>,
    /// `outbound[i]`: subsystems `j != i` with a nonzero block `A_ji`.
    pub outbound: Vec<BTreeSet<usize>>,
}

pub fn split_block_diagonal(sys: &DescriptorSystem) -> BlockSplit {
    let n = sys.n();
    let part = sys.partition();
    let nsub = part.len();
    let mut a_d = DMatrix::zeros(n, n);
    let mut a_c = DMatrix::zeros(n, n);
    let mut inbound = vec![BTreeSet::new(); nsub];
    let mut outbound = vec![BTreeSet::new(); nsub];
    for r in 0..n {
        for c in 0..n {
            let v = sys.a()[(r, c)];
            let (si, sj) = (part.owner(r), part.owner(c));
            if si == sj {
                a_d[(r, c)] = v;
            } else {
                a_c[(r, c)] = v;
                if v != 0.0 {
                    inbound[si].insert(sj);
                    outbound[sj].insert(si);
                }
            }
        }
    }
    BlockSplit {
        a_d,
        a_c,
        inbound,
        outbound,
    }
}
