//! `matchlab`: command-line driver for the Monte Carlo experiments.
//!
//! Exit codes: 0 when every check passes, 1 on a statistical failure, 2 on a
//! configuration error, 3 when the transport solver fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matchlab_core::experiments::{self, emit, GridRule, TimeRule};
use matchlab_core::{Error, Experiment, ExperimentConfig, ExperimentReport, OutputFormat, SolveMethod};

const EXIT_STATISTICAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "matchlab", version, about = "Semi-discrete matching experiments on the flat torus")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Base seed of all replicate streams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replicates per sample size (overrides the experiment default).
    #[arg(long, global = true)]
    replicates: Option<usize>,

    /// Output file for records and summaries.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format: csv or json.
    #[arg(long, global = true, default_value = "csv")]
    format: OutputFormat,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Transport solver: exact or certified-approximate.
    #[arg(long, global = true)]
    solver_mode: Option<SolveMethod>,

    /// Transport grid resolution (default 4·ceil(√n)).
    #[arg(long, global = true)]
    grid_k: Option<usize>,

    /// Spectral tail tolerance of the heat kernel sums.
    #[arg(long, global = true)]
    cutoff_tol: Option<f64>,

    /// Gauss–Legendre nodes along trajectories.
    #[arg(long, global = true)]
    quad_nodes: Option<usize>,

    /// Cut replicate counts by 100x.
    #[arg(long, global = true)]
    smoke: bool,
}

#[derive(Debug, Args)]
struct SizeArgs {
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct TimeArgs {
    /// Fixed regularisation time instead of the experiment default.
    #[arg(long)]
    t: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bracketed n·E[W₂²] - ln(n)/4π over n.
    Scaling {
        #[command(flatten)]
        sizes: SizeArgs,
    },
    /// Gradient increments of the linearisation field against the closed form.
    Covariance {
        #[command(flatten)]
        sizes: SizeArgs,
        #[command(flatten)]
        time: TimeArgs,
        /// Evaluation point `u,v`.
        #[arg(long, value_parser = parse_point)]
        y: Option<[f64; 2]>,
    },
    /// Semigroup identity and expected field energy.
    EnergyIdentity {
        #[command(flatten)]
        sizes: SizeArgs,
        #[command(flatten)]
        time: TimeArgs,
        /// Replicates that also run the grid-quadrature check.
        #[arg(long)]
        identity_samples: Option<usize>,
    },
    /// Defect, energy and gradient variation along transport trajectories.
    Trajectory {
        #[command(flatten)]
        sizes: SizeArgs,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Exact 1D laws for the semi-discrete and bipartite costs.
    OnedOracle {
        #[command(flatten)]
        sizes: SizeArgs,
    },
    /// Endpoint defect at t = m/n over multipliers m.
    AnsatzDefect {
        #[command(flatten)]
        sizes: SizeArgs,
        /// Comma-separated multipliers m >= 1.
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
    },
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [u, v] = parts[..] else {
        return Err(format!("expected 'u,v', got '{s}'"));
    };
    let coord = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad coordinate '{x}': {e}"));
    Ok([coord(u)?, coord(v)?])
}

fn build_config(cli: &Cli) -> ExperimentConfig {
    let (experiment, sizes) = match &cli.command {
        Command::Scaling { sizes } => (Experiment::Scaling, sizes),
        Command::Covariance { sizes, .. } => (Experiment::Covariance, sizes),
        Command::EnergyIdentity { sizes, .. } => (Experiment::EnergyIdentity, sizes),
        Command::Trajectory { sizes, .. } => (Experiment::Trajectory, sizes),
        Command::OnedOracle { sizes } => (Experiment::OnedOracle, sizes),
        Command::AnsatzDefect { sizes, .. } => (Experiment::AnsatzDefect, sizes),
    };
    let g = &cli.global;
    let mut cfg = ExperimentConfig::new(experiment);
    if let Some(n_list) = &sizes.n_list {
        cfg.n_list = n_list.clone();
    }
    if let Some(seed) = g.seed {
        cfg.base_seed = seed;
    }
    if let Some(r) = g.replicates {
        cfg.replicates = r;
        cfg.replicate_overrides.clear();
    }
    if let Some(mode) = g.solver_mode {
        cfg.solver_mode = mode;
    }
    if let Some(k) = g.grid_k {
        cfg.grid_k = GridRule::Explicit(k);
    }
    if let Some(tol) = g.cutoff_tol {
        cfg.cutoff_tolerance = tol;
    }
    if let Some(q) = g.quad_nodes {
        cfg.quadrature_nodes = q;
    }
    cfg.smoke = g.smoke;
    cfg.output_path = g.out.clone();
    cfg.output_format = g.format;
    match &cli.command {
        Command::Covariance { time, y, .. } => {
            if let Some(t) = time.t {
                cfg.t_rule = TimeRule::Fixed(t);
            }
            if let Some(y) = y {
                cfg.point_y = *y;
            }
        }
        Command::EnergyIdentity {
            time, identity_samples, ..
        } => {
            if let Some(t) = time.t {
                cfg.t_rule = TimeRule::Fixed(t);
            }
            if let Some(k) = identity_samples {
                cfg.identity_samples = *k;
            }
        }
        Command::Trajectory { time, .. } => {
            if let Some(t) = time.t {
                cfg.t_rule = TimeRule::Fixed(t);
            }
        }
        Command::AnsatzDefect {
            multipliers: Some(m), ..
        } => cfg.t_multipliers = m.clone(),
        _ => {}
    }
    cfg
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Convergence { .. } => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

fn execute(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport, Error> {
    cfg.validate()?;
    if threads == Some(0) {
        return Err(Error::InvalidConfiguration("--threads must be positive".into()));
    }
    // zero lets rayon pick the core count
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfiguration(format!("cannot start worker threads: {e}")))?;
    pool.install(|| experiments::run(cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = build_config(&cli);
    let report = match execute(&cfg, cli.global.threads) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    for check in &report.checks {
        println!("{check}");
    }
    if let Some(path) = &cfg.output_path {
        if let Err(e) = emit(&report.records, &report.summaries, cfg.output_format, path) {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    }
    if report.solver_aborted {
        eprintln!("error: {} replicates failed to certify", report.solver_failures);
        ExitCode::from(EXIT_SOLVER)
    } else if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_STATISTICAL)
    }
}
