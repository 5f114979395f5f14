//! `infrasec`: build, simulate and solve interdependent-infrastructure
//! attack/defense scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use infrasec_core::dynamics::AttackScenario;
use infrasec_core::experiment::{
    self, build_summary, deviation_table, residue_for_attack, simulate, write_artifact,
    write_sweep_csv, ExperimentError, SolveOptions,
};
use infrasec_core::game::GameError;
use infrasec_core::scenario::{reference_scenario, AttackPool, DefenderPool, Scenario};

#[derive(Parser)]
#[command(name = "infrasec", version, about = "Interdependent gas-power-water attack/defense analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the system and print its size, spectrum and coupling density.
    Build(Common),
    /// Simulate a state attack and write trajectory and cost-deviation CSVs.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Attacked states (comma-separated labels) or `none`; defaults to the scenario's targets.
        #[arg(long)]
        attack: Option<String>,
        /// Multiplies the attack waveform.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Solve the attacker/defender game.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        game: GameArgs,
        /// Defender budget (connections); defaults to the scenario's.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Solve the game for several budgets.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        game: GameArgs,
        /// Budget to evaluate; repeat at least twice.
        #[arg(long = "budget", required = true, num_args = 1)]
        budgets: Vec<u64>,
    },
    /// Print the reference scenario.
    Reference {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Recorded in report metadata.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GameArgs {
    #[arg(long)]
    granularity: Option<u64>,
    /// `all`, `electric`, or a comma-separated list of state labels.
    #[arg(long)]
    restrict_attacker: Option<AttackPool>,
    /// `all` or `electric`.
    #[arg(long)]
    restrict_defender: Option<DefenderPool>,
    /// Fictitious-play round limit.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Fictitious-play gap tolerance, relative to the payoff span.
    #[arg(long)]
    tol: Option<f64>,
}

impl GameArgs {
    fn options(&self, scenario: &Scenario) -> SolveOptions {
        let mut o = SolveOptions::from_scenario(scenario);
        if let Some(g) = self.granularity {
            o.granularity = g;
        }
        if let Some(a) = &self.restrict_attacker {
            o.attacker = a.clone();
        }
        if let Some(d) = self.restrict_defender {
            o.defender = d;
        }
        if let Some(m) = self.max_iters {
            o.max_iters = m;
        }
        if let Some(t) = self.tol {
            o.tol = t;
        }
        o
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Scenario(_) | ExperimentError::Model(_) => 2,
            ExperimentError::Game(GameError::CapExceeded { .. }) => 4,
            ExperimentError::Game(
                GameError::KExceedsPool { .. }
                | GameError::InfeasibleBudget(_)
                | GameError::InvalidPool { .. }
                | GameError::InvalidAllocation(_)
                | GameError::EmptyStrategies,
            ) => 2,
            ExperimentError::Io { .. } => 1,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<infrasec_core::scenario::ScenarioError> for Failure {
    fn from(e: infrasec_core::scenario::ScenarioError) -> Self {
        ExperimentError::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    buf
}

fn cmd_build(common: &Common) -> Result<(), Failure> {
    let scenario = Scenario::load(&common.scenario)?;
    let sys = scenario.assemble()?;
    print!("{}", build_summary(&sys));
    Ok(())
}

fn cmd_simulate(common: &Common, attack: Option<&str>, scale: f64) -> Result<(), Failure> {
    let scenario = Scenario::load(&common.scenario)?;
    let sys = scenario.assemble()?;
    let sim = &scenario.simulation;
    let targets = match attack {
        None => scenario.simulation_targets(&sys)?,
        Some("none") => Vec::new(),
        Some(list) => match list.parse::<AttackPool>().map_err(usage)? {
            AttackPool::States(labels) => labels
                .iter()
                .map(|l| sys.index_of(l).ok_or_else(|| usage(format!("unknown state `{l}`"))))
                .collect::<Result<_, _>>()?,
            AttackPool::All => (0..sys.n()).collect(),
            AttackPool::Electric => sys.electric_states(),
        },
    };
    let waveform = sim.waveform.scaled(scale);
    let run = simulate(&sys, &targets, waveform, sim.horizon, sim.step, sim.nominal_cost)?;
    let out = &common.out;
    write_artifact(out, "trajectory.csv", &csv_bytes(|b| run.write_csv(b)))?;
    let table = deviation_table(&sys, &targets, waveform, sim.horizon, sim.step, sim.nominal_cost)?;
    write_artifact(out, "cost_deviation.csv", &csv_bytes(|b| table.write_csv(b)))?;
    let attack = if targets.is_empty() {
        None
    } else {
        Some(
            AttackScenario::new(&sys, targets.clone(), waveform, sim.horizon)
                .map_err(ExperimentError::from)?,
        )
    };
    let residue = residue_for_attack(&sys, attack.as_ref(), sim.horizon, sim.step, sim.detection_threshold)?;
    write_artifact(out, "residue.csv", &csv_bytes(|b| residue.write_residue_csv(b)))?;

    let labels: Vec<&str> = targets.iter().map(|&i| sys.labels()[i]).collect();
    println!("attacked: {}", if labels.is_empty() { "none".into() } else { labels.join(", ") });
    println!("peak cost deviation: {:.6e} ({:.4}% of nominal)", run.rate.iter().copied().fold(0.0, f64::max),
        run.percent().iter().copied().fold(0.0, f64::max));
    println!("cumulative cost deviation: {:.6e}", run.cumulative.last().copied().unwrap_or(0.0));
    match residue.first_alarm(sim.detection_threshold) {
        Some(t) => println!("residue alarm at t = {t:.6} s"),
        None => println!("residue below threshold"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_solve(common: &Common, game: &GameArgs, budget: Option<u64>) -> Result<(), Failure> {
    let scenario = Scenario::load(&common.scenario)?;
    let sys = scenario.assemble()?;
    let mut options = game.options(&scenario);
    if let Some(b) = budget {
        options.budget = b;
    }
    let report = experiment::solve(&sys, &scenario, &options, common.seed)?;
    report.write_to(&common.out)?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_sweep(common: &Common, game: &GameArgs, budgets: &[u64]) -> Result<(), Failure> {
    if budgets.len() < 2 {
        return Err(usage("sweep needs at least two --budget values"));
    }
    let scenario = Scenario::load(&common.scenario)?;
    let sys = scenario.assemble()?;
    let options = game.options(&scenario);
    let rows = experiment::sweep(&sys, &scenario, &options, budgets, common.seed)?;
    let bytes = csv_bytes(|b| write_sweep_csv(&rows, b));
    write_artifact(&common.out, "sweep.csv", &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn cmd_reference(out: Option<&Path>) -> Result<(), Failure> {
    let text = reference_scenario().to_toml();
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(common) => cmd_build(common),
        Command::Simulate {
            common,
            attack,
            scale,
        } => cmd_simulate(common, attack.as_deref(), *scale),
        Command::Solve {
            common,
            game,
            budget,
        } => cmd_solve(common, game, *budget),
        Command::Sweep {
            common,
            game,
            budgets,
        } => cmd_sweep(common, game, budgets),
        Command::Reference { out } => cmd_reference(out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
