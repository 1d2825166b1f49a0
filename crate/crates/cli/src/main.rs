//! `mfbd`: command-line front end for mean-field birth-death computations.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 the
//! self-consistent iteration did not converge (outputs of the last iterate
//! are still written).

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mfbd_core::ensemble::{EnsembleError, SimConfig, DEFAULT_MAX_EVENTS};
use mfbd_core::export::{self, ExportError};
use mfbd_core::master::{self, DEFAULT_MAX_STATES};
use mfbd_core::phylo::{self, PhyloError};
use mfbd_core::quad::uniform_grid;
use mfbd_core::scf::{self, SteadyStates};
use mfbd_core::{MasterError, MasterOptions, ModelError, ModelSpec, ScfError, TruncatedLattice};
use serde::Serialize;

use config::{Checkpoints, RunConfig, DEFAULT_GRID, DEFAULT_OUT_DIR};

const MAX_STATES_VAR: &str = "MFBD_MAX_STATES";

#[derive(Parser)]
#[command(name = "mfbd", version, about = "Mean-field interacting multi-type birth-death processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Self-consistent mean field: field.csv and scf.json.
    Scf(Common),
    /// Steady states of the mean field: steady_states.json.
    Steady(Common),
    /// Truncated forward equation: distribution.csv and moments.csv.
    Master(Common),
    /// Exact ensemble simulation: trace.csv.
    Simulate(Common),
    /// Tree log-likelihood: loglik.json.
    Loglik(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed (overrides ensemble.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of output times (overrides output.grid).
    #[arg(long)]
    grid: Option<usize>,
    /// Horizon (overrides tau).
    #[arg(long)]
    tau: Option<f64>,
    /// Newick tree file (overrides loglik.tree).
    #[arg(long, value_name = "PATH")]
    tree: Option<PathBuf>,
    /// Print the main result to stdout instead of writing files.
    #[arg(long)]
    stdout: bool,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    NotConverged(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::NotConverged(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        Failure::Runtime(format!("writing output: {e}"))
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<ScfError> for Failure {
    fn from(e: ScfError) -> Self {
        match e {
            ScfError::Ode(_) => Failure::Runtime(e.to_string()),
            ScfError::NonConvergence { .. } => Failure::NotConverged(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<MasterError> for Failure {
    fn from(e: MasterError) -> Self {
        match e {
            MasterError::Ode(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<EnsembleError> for Failure {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Model(_) | EnsembleError::InvalidConfig(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<PhyloError> for Failure {
    fn from(e: PhyloError) -> Self {
        match e {
            PhyloError::Field(inner) => inner.into(),
            PhyloError::Ode(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

/// Resolved configuration with command-line overrides applied.
struct Run {
    config_path: PathBuf,
    cfg: RunConfig,
    spec: ModelSpec,
    out_dir: PathBuf,
    grid: usize,
    tau: Option<f64>,
    seed: Option<u64>,
    tree: Option<PathBuf>,
    stdout: bool,
}

impl Run {
    fn new(args: Common) -> Result<Self, Failure> {
        let cfg = config::load(&args.config).map_err(Failure::Invalid)?;
        let spec = cfg.model.resolve().map_err(Failure::Invalid)?;
        spec.check()?;
        let grid = args.grid.or(cfg.output.grid).unwrap_or(DEFAULT_GRID);
        if grid < 2 {
            return Err(Failure::Invalid("grid must have at least 2 points".into()));
        }
        let out_dir = args
            .out
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(Self {
            tau: args.tau.or(cfg.tau),
            seed: args.seed,
            tree: args.tree,
            stdout: args.stdout,
            config_path: args.config,
            cfg,
            spec,
            out_dir,
            grid,
        })
    }

    fn tau(&self) -> Result<f64, Failure> {
        match self.tau {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(Failure::Invalid(format!("tau must be positive and finite, got {t}"))),
            None => Err(Failure::Invalid("tau is required for this command".into())),
        }
    }

    fn times(&self, tau: f64) -> Vec<f64> {
        uniform_grid(0.0, tau, self.grid)
    }

    /// Writer for a file in the output directory, or stdout when `primary`
    /// and `--stdout` is set. Secondary outputs are dropped under `--stdout`.
    fn sink(&self, name: &str, primary: bool) -> Result<Option<Box<dyn Write>>, Failure> {
        if self.stdout {
            return Ok(primary.then(|| Box::new(BufWriter::new(io::stdout().lock())) as Box<dyn Write>));
        }
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("writing {}", path.display());
        Ok(Some(Box::new(BufWriter::new(f))))
    }
}

fn write_json<T: Serialize>(run: &Run, name: &str, primary: bool, value: &T) -> Result<(), Failure> {
    if let Some(mut w) = run.sink(name, primary)? {
        export::write_json(&mut w, value)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ScfReport<'a> {
    converged: bool,
    iterations: usize,
    final_residual: f64,
    averaged: bool,
    residual_history: &'a [f64],
    steady_states: Option<&'a SteadyStates>,
}

fn cmd_scf(run: &Run) -> Result<(), Failure> {
    let tau = run.tau()?;
    let (field, report, failure) = match scf::solve_scf(&run.spec, tau, &run.cfg.scf) {
        Ok(sol) => (sol.field, (true, sol.iterations, sol.residual, sol.averaged, sol.history), None),
        Err(ScfError::NonConvergence {
            iterations,
            residual,
            last,
        }) => {
            let msg = format!("no convergence after {iterations} iterations (residual {residual:e}); writing the last iterate");
            (*last, (false, iterations, residual, true, Vec::new()), Some(Failure::NotConverged(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    let (converged, iterations, residual, averaged, history) = report;
    eprintln!("scf: {iterations} iterations, residual {residual:e}");

    if let Some(mut w) = run.sink("field.csv", true)? {
        export::write_field_csv(&mut w, &field, &run.times(tau))?;
        w.flush()?;
    }
    if !run.stdout {
        let guesses = match &run.cfg.steady.guesses {
            Some(g) => g.clone(),
            None => vec![run.spec.r0.clone(), field.terminal()],
        };
        let steady = scf::steady_states(&run.spec, &guesses)?;
        let report = ScfReport {
            converged,
            iterations,
            final_residual: residual,
            averaged,
            residual_history: &history,
            steady_states: Some(&steady),
        };
        write_json(run, "scf.json", false, &report)?;
    }
    match failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn cmd_steady(run: &Run) -> Result<(), Failure> {
    let guesses = match &run.cfg.steady.guesses {
        Some(g) => g.clone(),
        None => scf::default_guesses(&run.spec),
    };
    let steady = scf::steady_states(&run.spec, &guesses)?;
    let nontrivial = steady.nontrivial().count();
    if nontrivial == 0 {
        eprintln!("steady: only the zero root was found");
    } else {
        eprintln!("steady: {} root(s) besides zero", nontrivial);
    }
    write_json(run, "steady_states.json", true, &steady)
}

fn max_states() -> Result<usize, Failure> {
    match std::env::var(MAX_STATES_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Invalid(format!("{MAX_STATES_VAR} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(DEFAULT_MAX_STATES),
    }
}

fn cmd_master(run: &Run) -> Result<(), Failure> {
    let tau = run.tau()?;
    let section = run
        .cfg
        .master
        .as_ref()
        .ok_or_else(|| Failure::Invalid("the master command needs a \"master\" section".into()))?;
    let options = MasterOptions {
        max_states: max_states()?,
        ..MasterOptions::default()
    };
    let lattice = Arc::new(TruncatedLattice::with_limit(run.spec.d, section.kappa, options.max_states)?);
    let v0 = section.initial.vector(&lattice).map_err(Failure::Invalid)?;
    eprintln!("master: {} states", lattice.len());
    let traj = master::solve_on(&run.spec, &v0, lattice, tau, &options)?;
    let times = run.times(tau);
    let tail = traj.tail_mass(tau);
    eprintln!("master: boundary mass at tau {tail:e}");

    if let Some(mut w) = run.sink("moments.csv", true)? {
        export::write_master_moments_csv(&mut w, &traj, &times)?;
        w.flush()?;
    }
    if let Some(mut w) = run.sink("distribution.csv", false)? {
        export::write_distribution_csv(&mut w, &traj, &times)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_simulate(run: &Run) -> Result<(), Failure> {
    let tau = run.tau()?;
    let section = run
        .cfg
        .ensemble
        .as_ref()
        .ok_or_else(|| Failure::Invalid("the simulate command needs an \"ensemble\" section".into()))?;
    let checkpoints = match &section.checkpoints {
        Some(Checkpoints::Times(t)) => t.clone(),
        Some(Checkpoints::Count(n)) => SimConfig::uniform_checkpoints(tau, *n),
        None => run.times(tau),
    };
    let mut sim = SimConfig::new(
        section.replicas,
        tau,
        section.initial.clone(),
        run.seed.unwrap_or(section.seed),
        checkpoints,
    );
    sim.histogram = section.histogram;
    sim.max_events = section.max_events.unwrap_or(DEFAULT_MAX_EVENTS);
    let trace = mfbd_core::simulate(&run.spec, &sim)?;
    let events = trace.checkpoints.last().map_or(0, |c| c.events.total());
    eprintln!("simulate: {} replicas, {events} events, seed {}", trace.replicas, sim.seed);

    if let Some(mut w) = run.sink("trace.csv", true)? {
        export::write_trace_csv(&mut w, &trace)?;
        w.flush()?;
    }
    if sim.histogram {
        write_json(run, "histograms.json", false, &trace.checkpoints)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LoglikReport {
    loglik: f64,
    conditioned: bool,
    tau: f64,
    diagnostics: LoglikDiagnostics,
}

#[derive(Serialize)]
struct LoglikDiagnostics {
    unconditioned_loglik: f64,
    p_root: f64,
    scf_iterations: usize,
    scf_residual: f64,
    tips: usize,
    nodes: usize,
}

fn cmd_loglik(run: &Run) -> Result<(), Failure> {
    let sampling = run
        .cfg
        .sampling
        .ok_or_else(|| Failure::Invalid("the loglik command needs a \"sampling\" section".into()))?;
    let tree_path = match (&run.tree, &run.cfg.loglik.tree) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => config::relative_to(&run.config_path, p),
        (None, None) => return Err(Failure::Invalid("no tree given (use --tree or loglik.tree)".into())),
    };
    let text = std::fs::read_to_string(&tree_path)
        .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", tree_path.display())))?;
    let tree = phylo::parse_tree(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", tree_path.display())))?;
    let options = run.cfg.loglik.options(run.cfg.scf);
    let result = phylo::log_likelihood_detailed(&tree, &run.spec, &sampling, &options)?;
    eprintln!("loglik: {}", result.loglik);

    let tips = tree.nodes.iter().filter(|n| n.children.is_empty()).count();
    let report = LoglikReport {
        loglik: result.loglik,
        conditioned: result.conditioned,
        tau: result.tau,
        diagnostics: LoglikDiagnostics {
            unconditioned_loglik: result.log_q_root,
            p_root: result.p_root,
            scf_iterations: result.scf_iterations,
            scf_residual: result.scf_residual,
            tips,
            nodes: tree.len(),
        },
    };
    write_json(run, "loglik.json", true, &report)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let (args, f): (Common, fn(&Run) -> Result<(), Failure>) = match command {
        Command::Scf(a) => (a, cmd_scf),
        Command::Steady(a) => (a, cmd_steady),
        Command::Master(a) => (a, cmd_master),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Loglik(a) => (a, cmd_loglik),
    };
    let run = Run::new(args)?;
    f(&run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
