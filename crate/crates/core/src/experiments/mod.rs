//! Monte Carlo drivers for the numerical experiments.
//!
//! Every replicate is a pure function of `(base_seed, experiment, n,
//! replicate_index)`: the triple `(base_seed, experiment, n)` is mixed into a
//! stream seed and the replicate index selects the ChaCha stream. Replicates
//! run in parallel and are reduced in index order with compensated sums, so
//! output files do not depend on the thread count.

mod output;
mod runs;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::numeric::NeumaierSum;
use crate::transport::{default_grid_k, SolveMethod, EXACT_MAX_ATOMS, EXACT_MAX_GRID};

pub use output::{emit, render_csv, render_json, OutputRow, CSV_HEADER};
pub use runs::{
    run_1d_oracle, run_ansatz_defect, run_covariance, run_energy_identity, run_scaling, run_trajectory_suite,
};

/// The experiments, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    OnedOracle,
    Covariance,
    EnergyIdentity,
    Scaling,
    Trajectory,
    AnsatzDefect,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::OnedOracle,
        Experiment::Covariance,
        Experiment::EnergyIdentity,
        Experiment::Scaling,
        Experiment::Trajectory,
        Experiment::AnsatzDefect,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::OnedOracle => "oned-oracle",
            Experiment::Covariance => "covariance",
            Experiment::EnergyIdentity => "energy-identity",
            Experiment::Scaling => "scaling",
            Experiment::Trajectory => "trajectory",
            Experiment::AnsatzDefect => "ansatz-defect",
        }
    }

    fn stream_tag(&self) -> u64 {
        let index = Experiment::ALL.iter().position(|e| e == self).expect("listed") as u64;
        (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.tag() == s)
            .ok_or_else(|| invalid_input(format!("unknown experiment '{s}'")))
    }
}

/// How the regularisation time is chosen for each `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeRule {
    /// `t = 1/n`.
    ReciprocalN,
    Fixed(f64),
}

impl TimeRule {
    pub fn time(&self, n: usize) -> f64 {
        match *self {
            TimeRule::ReciprocalN => 1.0 / n as f64,
            TimeRule::Fixed(t) => t,
        }
    }
}

/// Transport grid resolution for each `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridRule {
    /// `K = 4·ceil(√n)`, rounded up to even.
    Auto,
    Explicit(usize),
}

impl GridRule {
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            GridRule::Auto => default_grid_k(n),
            GridRule::Explicit(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(invalid_input(format!("unknown output format '{s}'"))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

/// Full description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_list: Vec<usize>,
    pub t_rule: TimeRule,
    pub grid_k: GridRule,
    pub replicates: usize,
    /// Per-`n` replicate counts that replace `replicates`.
    pub replicate_overrides: Vec<(usize, usize)>,
    pub base_seed: u64,
    pub cutoff_tolerance: f64,
    pub quadrature_nodes: usize,
    pub solver_mode: SolveMethod,
    /// Divides replicate counts by 100 (at least 2 remain).
    pub smoke: bool,
    /// Evaluation point of the covariance experiment.
    pub point_y: [f64; 2],
    /// `t = m/n` multipliers of the ansatz-defect experiment.
    pub t_multipliers: Vec<f64>,
    /// Replicates that also run the grid-quadrature check of the energy identity.
    pub identity_samples: usize,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
}

/// Base seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_240_601;

impl ExperimentConfig {
    /// Defaults of each experiment at full scale.
    pub fn new(experiment: Experiment) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            n_list: vec![],
            t_rule: TimeRule::ReciprocalN,
            grid_k: GridRule::Auto,
            replicates: 50,
            replicate_overrides: vec![],
            base_seed: DEFAULT_SEED,
            cutoff_tolerance: crate::heat::DEFAULT_TAIL_TOLERANCE,
            quadrature_nodes: crate::trajectory::DEFAULT_QUAD_NODES,
            solver_mode: SolveMethod::CertifiedApproximate,
            smoke: false,
            point_y: [0.1, 0.0],
            t_multipliers: vec![1.0, 4.0, 16.0],
            identity_samples: 20,
            output_path: None,
            output_format: OutputFormat::Csv,
        };
        match experiment {
            Experiment::OnedOracle => {
                cfg.n_list = vec![1, 2, 10, 50];
                cfg.replicates = 20_000;
            }
            Experiment::Covariance => {
                cfg.n_list = vec![50];
                cfg.t_rule = TimeRule::Fixed(0.01);
                cfg.replicates = 20_000;
            }
            Experiment::EnergyIdentity => {
                cfg.n_list = vec![32];
                cfg.replicates = 10_000;
            }
            Experiment::Scaling => {
                cfg.n_list = vec![64, 256, 1024];
                cfg.replicates = 200;
                cfg.replicate_overrides = vec![(1024, 50)];
            }
            Experiment::Trajectory => {
                cfg.n_list = vec![64, 256];
            }
            Experiment::AnsatzDefect => {
                cfg.n_list = vec![256];
            }
        }
        cfg
    }

    /// Replicate count for `n` after overrides and smoke scaling.
    pub fn replicates_for(&self, n: usize) -> usize {
        let base = self
            .replicate_overrides
            .iter()
            .find(|(m, _)| *m == n)
            .map_or(self.replicates, |&(_, r)| r);
        if self.smoke {
            (base / 100).max(2)
        } else {
            base
        }
    }

    /// Seed of the replicate streams for `n`.
    pub fn stream_seed(&self, n: usize) -> u64 {
        stream_seed(self.base_seed, self.experiment, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(invalid_config("n-list must hold positive sizes"));
        }
        if self.replicates < 2 || self.replicate_overrides.iter().any(|&(_, r)| r < 2) {
            return Err(invalid_config("at least two replicates are needed for a standard error"));
        }
        if !(self.cutoff_tolerance > 0.0 && self.cutoff_tolerance < 1.0) {
            return Err(invalid_config(format!(
                "cutoff tolerance {} is not in (0, 1)",
                self.cutoff_tolerance
            )));
        }
        if self.quadrature_nodes == 0 {
            return Err(invalid_config("quadrature needs at least one node"));
        }
        if let TimeRule::Fixed(t) = self.t_rule {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid_config(format!("time {t} is not positive")));
            }
        }
        if let GridRule::Explicit(0) = self.grid_k {
            return Err(invalid_config("grid size must be positive"));
        }
        if self.point_y.iter().any(|c| !c.is_finite()) {
            return Err(invalid_config("evaluation point must be finite"));
        }
        let uses_transport = matches!(
            self.experiment,
            Experiment::Scaling | Experiment::Trajectory | Experiment::AnsatzDefect
        );
        if uses_transport && self.solver_mode == SolveMethod::Exact {
            for &n in &self.n_list {
                let k = self.grid_k.resolve(n);
                if n > EXACT_MAX_ATOMS || k > EXACT_MAX_GRID {
                    return Err(invalid_config(format!(
                        "exact mode supports n <= {EXACT_MAX_ATOMS} and K <= {EXACT_MAX_GRID}, got n={n}, K={k}"
                    )));
                }
            }
        }
        if matches!(self.experiment, Experiment::Trajectory | Experiment::AnsatzDefect) {
            for &n in &self.n_list {
                let t = self.t_rule.time(n);
                if t < 1.0 / n as f64 {
                    return Err(invalid_config(format!("t = {t} is below 1/n for n = {n}")));
                }
            }
        }
        if self.experiment == Experiment::AnsatzDefect
            && (self.t_multipliers.is_empty() || self.t_multipliers.iter().any(|m| !(*m >= 1.0 && m.is_finite())))
        {
            return Err(invalid_config("multipliers must be finite and at least 1"));
        }
        Ok(())
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for `(base_seed, experiment, n)`.
pub fn stream_seed(base_seed: u64, experiment: Experiment, n: usize) -> u64 {
    mix64(base_seed ^ mix64(experiment.stream_tag() ^ mix64(n as u64)))
}

/// One measured value of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub experiment: Experiment,
    pub n: usize,
    pub t: Option<f64>,
    pub grid_k: Option<usize>,
    pub base_seed: u64,
    pub replicate_index: u64,
    pub metric: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Mean, spread and standard error of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub experiment: Experiment,
    pub n: usize,
    pub t: Option<f64>,
    pub grid_k: Option<usize>,
    pub base_seed: u64,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub count: usize,
}

/// `(mean, sd, se)` with compensated sums, in the given order.
pub fn mean_sd_se(values: &[f64]) -> (f64, f64, f64) {
    let count = values.len();
    if count == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().copied().collect::<NeumaierSum>().value() / count as f64;
    if count < 2 {
        return (mean, f64::NAN, f64::NAN);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).collect::<NeumaierSum>().value();
    let sd = (ss / (count - 1) as f64).sqrt();
    (mean, sd, sd / (count as f64).sqrt())
}

impl SummaryStats {
    /// Summary of the records matching `metric` (and `t`, when given).
    fn of(records: &[ReplicateRecord], template: &ReplicateRecord) -> Self {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.n == template.n && r.metric == template.metric && r.t == template.t)
            .map(|r| r.value)
            .collect();
        let (mean, sd, se) = mean_sd_se(&values);
        SummaryStats {
            experiment: template.experiment,
            n: template.n,
            t: template.t,
            grid_k: template.grid_k,
            base_seed: template.base_seed,
            metric: template.metric.clone(),
            mean,
            sd,
            se,
            count: values.len(),
        }
    }

    /// Summaries of every `(n, t, metric)` group, in order of first appearance.
    pub fn summarise(records: &[ReplicateRecord]) -> Vec<SummaryStats> {
        let mut seen: Vec<&ReplicateRecord> = Vec::new();
        for r in records {
            if !seen.iter().any(|s| s.n == r.n && s.metric == r.metric && s.t == r.t) {
                seen.push(r);
            }
        }
        seen.into_iter().map(|r| SummaryStats::of(records, r)).collect()
    }
}

/// A pass/fail test: `observed` must lie in `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub n: Option<usize>,
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, n: Option<usize>, observed: f64, lower: f64, upper: f64) -> Self {
        Check {
            name: name.into(),
            n,
            observed,
            lower,
            upper,
            passed: observed >= lower && observed <= upper,
        }
    }

    /// `|observed - target| <= 3·se`.
    pub fn three_se(name: impl Into<String>, n: Option<usize>, observed: f64, target: f64, se: f64) -> Self {
        Check::within(name, n, observed, target - 3.0 * se, target + 3.0 * se)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}", self.name)?;
        if let Some(n) = self.n {
            write!(f, " n={n}")?;
        }
        write!(f, ": {:.6e} in [{:.6e}, {:.6e}]", self.observed, self.lower, self.upper)
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<SummaryStats>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Replicates dropped after a solver convergence failure.
    pub solver_failures: usize,
    /// Set when too many replicates failed for the run to be meaningful.
    pub solver_aborted: bool,
}

impl ExperimentReport {
    fn new(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            config: config.clone(),
            records: vec![],
            summaries: vec![],
            checks: vec![],
            notes: vec![],
            solver_failures: 0,
            solver_aborted: false,
        }
    }

    pub fn passed(&self) -> bool {
        !self.solver_aborted && self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self, n: usize, metric: &str) -> Option<&SummaryStats> {
        self.summaries.iter().find(|s| s.n == n && s.metric == metric)
    }

    pub fn check(&self, name: &str, n: Option<usize>) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name && c.n == n)
    }
}

/// Runs the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.experiment {
        Experiment::OnedOracle => run_1d_oracle(cfg),
        Experiment::Covariance => run_covariance(cfg),
        Experiment::EnergyIdentity => run_energy_identity(cfg),
        Experiment::Scaling => run_scaling(cfg),
        Experiment::Trajectory => run_trajectory_suite(cfg),
        Experiment::AnsatzDefect => run_ansatz_defect(cfg),
    }
}
