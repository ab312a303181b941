//! Optimal transport between an empirical measure on the torus and the
//! Lebesgue measure (through a uniform grid), between two empirical
//! measures, and on the unit interval.
//!
//! Semi-discrete results carry a certified bracket `[lower_bound,
//! upper_bound]` on the continuous `W₂²(μ_n, Leb)`:
//!
//! * the upper bound integrates the squared distance exactly over every grid
//!   cell for the returned cell-to-atom plan, which is an admissible coupling
//!   of `μ_n` with the Lebesgue measure;
//! * the lower bound uses `W₂(μ_n, Leb) >= W₂(μ_n, grid) - W₂(grid, Leb)`
//!   with `W₂²(grid_K, Leb) = s²/6`, `s = 1/K`, and a dual lower bound on
//!   the discrete problem.

mod assignment;
mod network;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use assignment::{solve_assignment, Assignment};
pub use network::DenseCost;
pub use sinkhorn::SinkhornOptions;

use crate::error::{invalid_config, invalid_input, Result};
use crate::numeric::NeumaierSum;
use crate::torus::{dist2, displacement, grid_centers, SampleSet, TorusPoint};

/// One positive mass of a transport plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Sparse plan between `n_sources` atoms of mass `1/n_sources` and
/// `n_targets` targets of mass `1/n_targets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub entries: Vec<CouplingEntry>,
    pub n_sources: usize,
    pub n_targets: usize,
}

impl Coupling {
    /// Row and column sums.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rows = vec![NeumaierSum::default(); self.n_sources];
        let mut cols = vec![NeumaierSum::default(); self.n_targets];
        for e in &self.entries {
            rows[e.source].add(e.mass);
            cols[e.target].add(e.mass);
        }
        (
            rows.iter().map(|s| s.value()).collect(),
            cols.iter().map(|s| s.value()).collect(),
        )
    }

    /// `Σ mass · c(source, target)`.
    pub fn cost(&self, costs: &(impl CostMatrix + ?Sized)) -> f64 {
        self.entries
            .iter()
            .map(|e| e.mass * costs.cost(e.source, e.target))
            .collect::<NeumaierSum>()
            .value()
    }
}

/// Kantorovich potentials: `phi` on sources, `psi` on targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPotentials {
    /// Dual objective under uniform marginals.
    pub fn value(&self) -> f64 {
        let (n, m) = (self.phi.len() as f64, self.psi.len() as f64);
        let mut s = NeumaierSum::default();
        self.phi.iter().for_each(|&f| s.add(f / n));
        self.psi.iter().for_each(|&p| s.add(p / m));
        s.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Exact,
    CertifiedApproximate,
}

impl std::str::FromStr for SolveMethod {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SolveMethod::Exact),
            "certified-approximate" | "approximate" => Ok(SolveMethod::CertifiedApproximate),
            other => Err(invalid_input(format!("unknown solver mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveMethod::Exact => "exact",
            SolveMethod::CertifiedApproximate => "certified-approximate",
        })
    }
}

/// Outcome of a transport solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    /// Cost of the returned plan on the discrete problem.
    pub primal_value: f64,
    /// Dual objective of `duals`; equals `primal_value` for exact solves.
    pub dual_value: f64,
    pub coupling: Coupling,
    pub duals: DualPotentials,
    /// Bounds on the continuous `W₂²` (semi-discrete) or on the discrete
    /// value itself (bipartite).
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub method: SolveMethod,
    /// Gap the approximate solver promised, if any.
    pub declared_gap: Option<f64>,
}

impl TransportResult {
    pub fn certified_gap(&self) -> f64 {
        self.primal_value - self.dual_value
    }
}

/// Read access to a transport cost.
pub trait CostMatrix {
    fn n_sources(&self) -> usize;
    fn n_targets(&self) -> usize;
    fn cost(&self, source: usize, target: usize) -> f64;
}

impl CostMatrix for DenseCost {
    fn n_sources(&self) -> usize {
        DenseCost::n_sources(self)
    }
    fn n_targets(&self) -> usize {
        DenseCost::n_targets(self)
    }
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

impl CostMatrix for [Vec<f64>] {
    fn n_sources(&self) -> usize {
        self.len()
    }
    fn n_targets(&self) -> usize {
        self.first().map_or(0, |r| r.len())
    }
    fn cost(&self, i: usize, j: usize) -> f64 {
        self[i][j]
    }
}

/// Squared periodic distance between two point lists.
#[derive(Debug, Clone)]
pub struct PointCost<'a> {
    pub sources: &'a [TorusPoint],
    pub targets: &'a [TorusPoint],
}

impl CostMatrix for PointCost<'_> {
    fn n_sources(&self) -> usize {
        self.sources.len()
    }
    fn n_targets(&self) -> usize {
        self.targets.len()
    }
    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        dist2(self.sources[i], self.targets[j])
    }
}

/// Atom-to-cell-centre costs on the `K x K` grid.
#[derive(Debug, Clone)]
pub struct GridCost<'a> {
    pub atoms: &'a [TorusPoint],
    pub centers: Vec<TorusPoint>,
    pub k: usize,
}

impl<'a> GridCost<'a> {
    pub fn new(sample: &'a SampleSet, k: usize) -> Result<Self> {
        Ok(Self {
            atoms: sample.points(),
            centers: grid_centers(k)?,
            k,
        })
    }
}

impl CostMatrix for GridCost<'_> {
    fn n_sources(&self) -> usize {
        self.atoms.len()
    }
    fn n_targets(&self) -> usize {
        self.centers.len()
    }
    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        dist2(self.atoms[i], self.centers[j])
    }
}

/// Largest instance accepted by the exact semi-discrete solver.
pub const EXACT_MAX_ATOMS: usize = 128;
pub const EXACT_MAX_GRID: usize = 32;

/// Default grid for `n` atoms: `4·ceil(√n)` rounded up to even.
pub fn default_grid_k(n: usize) -> usize {
    let k = 4 * (n as f64).sqrt().ceil() as usize;
    k + k % 2
}

/// Certified gap the approximate solver must reach: `0.02·ln(n)/(4πn)`,
/// floored at `1e-10` so that `n = 1` has a reachable target.
pub fn gap_target(n: usize) -> f64 {
    let n = n as f64;
    (0.02 * n.ln() / (4.0 * std::f64::consts::PI * n)).max(1e-10)
}

/// Tuning of [`semidiscrete_w2_with`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemiDiscreteOptions {
    /// Overrides [`gap_target`].
    pub gap_target: Option<f64>,
    pub sinkhorn: SinkhornOptions,
}

/// `W₂²(μ_n, Leb)` bracketed through the `K x K` grid.
pub fn semidiscrete_w2(sample: &SampleSet, k: usize, mode: SolveMethod) -> Result<TransportResult> {
    semidiscrete_w2_with(sample, k, mode, &SemiDiscreteOptions::default())
}

pub fn semidiscrete_w2_with(
    sample: &SampleSet,
    k: usize,
    mode: SolveMethod,
    opts: &SemiDiscreteOptions,
) -> Result<TransportResult> {
    let n = sample.n();
    if k == 0 {
        return Err(invalid_input("grid resolution must be positive"));
    }
    let costs = GridCost::new(sample, k)?;
    let m = k * k;
    let s = 1.0 / k as f64;
    match mode {
        SolveMethod::Exact => {
            if n > EXACT_MAX_ATOMS || k > EXACT_MAX_GRID {
                return Err(invalid_config(format!(
                    "exact mode needs n <= {EXACT_MAX_ATOMS} and K <= {EXACT_MAX_GRID}, got n = {n}, K = {k}"
                )));
            }
            let dense = DenseCost::from_fn(n, m, |i, j| costs.cost(i, j));
            let g = gcd(n as u64, m as u64);
            let plan = network::solve_transportation(&dense, &vec![m as u64 / g; n], &vec![n as u64 / g; m]);
            let unit = g as f64 / (n as f64 * m as f64);
            let coupling = Coupling {
                entries: plan
                    .flows
                    .iter()
                    .map(|&(i, j, u)| CouplingEntry {
                        source: i,
                        target: j,
                        mass: u as f64 * unit,
                    })
                    .collect(),
                n_sources: n,
                n_targets: m,
            };
            let primal = coupling.cost(&dense);
            let duals = DualPotentials {
                phi: plan.source_potential,
                psi: plan.target_potential,
            };
            let dual = duals.value();
            let upper = cell_refined_cost(&coupling, sample, k)?;
            Ok(TransportResult {
                primal_value: primal,
                dual_value: dual,
                lower_bound: bracket_lower(primal.min(dual), s),
                upper_bound: upper,
                coupling,
                duals,
                method: SolveMethod::Exact,
                declared_gap: None,
            })
        }
        SolveMethod::CertifiedApproximate => {
            let target = opts.gap_target.unwrap_or_else(|| gap_target(n));
            let cost = |i: usize, j: usize| costs.cost(i, j);
            let plan = sinkhorn::solve_certified(n, m, &cost, target, &opts.sinkhorn)?;
            let coupling = Coupling {
                entries: plan
                    .entries
                    .iter()
                    .map(|&(i, j, x)| CouplingEntry {
                        source: i,
                        target: j,
                        mass: x,
                    })
                    .collect(),
                n_sources: n,
                n_targets: m,
            };
            let upper = cell_refined_cost(&coupling, sample, k)?;
            Ok(TransportResult {
                primal_value: plan.primal,
                dual_value: plan.dual,
                lower_bound: bracket_lower(plan.dual, s),
                upper_bound: upper,
                coupling,
                duals: DualPotentials {
                    phi: plan.phi,
                    psi: plan.psi,
                },
                method: SolveMethod::CertifiedApproximate,
                declared_gap: Some(target),
            })
        }
    }
}

fn bracket_lower(discrete_lower: f64, s: f64) -> f64 {
    let r = discrete_lower.max(0.0).sqrt() - s / 6f64.sqrt();
    r.max(0.0).powi(2)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `∫ wrap(u)² du` over `[lo, hi] ⊂ [-1, 1]`, with `wrap` the periodic
/// distance to 0.
fn periodic_square_integral(lo: f64, hi: f64) -> f64 {
    let cube = |a: f64, b: f64| if b > a { (b * b * b - a * a * a) / 3.0 } else { 0.0 };
    let mut acc = cube(lo.max(-0.5), hi.min(0.5));
    if hi > 0.5 {
        acc += cube(-0.5, hi - 1.0);
    }
    if lo < -0.5 {
        acc += cube(lo + 1.0, 0.5);
    }
    acc
}

/// Mean squared periodic distance from `atom` over the grid cell centred at
/// `center` with side `s`. Equals `|δ|² + s²/6` unless the cell straddles the
/// cut locus of the atom, where it is smaller.
pub fn cell_mean_square_distance(center: TorusPoint, atom: TorusPoint, s: f64) -> f64 {
    let d = displacement(atom, center);
    let h = 0.5 * s;
    (periodic_square_integral(d.du - h, d.du + h) + periodic_square_integral(d.dv - h, d.dv + h)) / s
}

/// Transport cost of the coupling of `μ_n` with the Lebesgue measure that
/// spreads each entry's mass uniformly over its grid cell.
pub fn cell_refined_cost(plan: &Coupling, sample: &SampleSet, k: usize) -> Result<f64> {
    if plan.n_targets != k * k || plan.n_sources != sample.n() {
        return Err(invalid_input(format!(
            "plan is {}x{}, expected {}x{}",
            plan.n_sources,
            plan.n_targets,
            sample.n(),
            k * k
        )));
    }
    let s = 1.0 / k as f64;
    let centers = grid_centers(k)?;
    let pts = sample.points();
    Ok(plan
        .entries
        .iter()
        .map(|e| e.mass * cell_mean_square_distance(centers[e.target], pts[e.source], s))
        .collect::<NeumaierSum>()
        .value())
}

/// Exact `W₂²(μ_n, ν_n)` for two samples of equal size.
pub fn bipartite_w2(x: &SampleSet, y: &SampleSet) -> Result<TransportResult> {
    if x.n() != y.n() {
        return Err(invalid_input(format!("sample sizes differ: {} vs {}", x.n(), y.n())));
    }
    let n = x.n();
    let costs: Vec<Vec<f64>> = x
        .points()
        .iter()
        .map(|&a| y.points().iter().map(|&b| dist2(a, b)).collect())
        .collect();
    let a = solve_assignment(&costs)?;
    Ok(assignment_result(a, n))
}

/// Wraps an assignment of an `n x n` cost matrix as a transport result with
/// masses `1/n` (values are divided by `n`).
pub fn assignment_result(a: Assignment, n: usize) -> TransportResult {
    let mass = 1.0 / n as f64;
    let coupling = Coupling {
        entries: a
            .permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| CouplingEntry {
                source: i,
                target: j,
                mass,
            })
            .collect(),
        n_sources: n,
        n_targets: n,
    };
    let primal = a.value * mass;
    let dual = a.duals.value();
    TransportResult {
        primal_value: primal,
        dual_value: dual,
        coupling,
        duals: a.duals,
        lower_bound: primal,
        upper_bound: primal,
        method: SolveMethod::Exact,
        declared_gap: None,
    }
}

/// `W₂²` between the empirical measure of a sorted sample on `[0, 1]` and the
/// Lebesgue measure, via the monotone map.
pub fn one_dim_w2(sorted: &[f64]) -> Result<f64> {
    if sorted.is_empty() {
        return Err(invalid_input("sample is empty"));
    }
    if let Some(x) = sorted.iter().find(|x| !(0.0..1.0).contains(*x)) {
        return Err(invalid_input(format!("sample value {x} is outside [0, 1)")));
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid_input("sample is not sorted ascending"));
    }
    let n = sorted.len() as f64;
    let mut acc = NeumaierSum::default();
    for (i, &x) in sorted.iter().enumerate() {
        let a = i as f64 / n - x;
        let b = (i + 1) as f64 / n - x;
        acc.add((b * b * b - a * a * a) / 3.0);
    }
    Ok(acc.value())
}

/// W₂² between two empirical measures of equal size on `[0, 1]`, both given
/// sorted ascending: the monotone matching `(1/n) Σ (x₍ᵢ₎ − y₍ᵢ₎)²`.
pub fn one_dim_bipartite_w2(x_sorted: &[f64], y_sorted: &[f64]) -> Result<f64> {
    if x_sorted.is_empty() || x_sorted.len() != y_sorted.len() {
        return Err(invalid_input("samples must be non-empty and of equal size"));
    }
    for xs in [x_sorted, y_sorted] {
        if let Some(x) = xs.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(invalid_input(format!("sample value {x} is outside [0, 1)")));
        }
        if xs.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid_input("sample is not sorted ascending"));
        }
    }
    let sum: NeumaierSum = x_sorted.iter().zip(y_sorted).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(sum.value() / x_sorted.len() as f64)
}

/// Outcome of [`verify_optimality`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub passed: bool,
    pub worst_marginal_violation: f64,
    pub worst_dual_violation: f64,
    /// Largest `|c - φ - ψ|` on the support (exact mode only).
    pub worst_slackness: f64,
    /// Recomputed `primal - dual`.
    pub gap: f64,
    pub failures: Vec<String>,
}

impl OptimalityReport {
    /// Largest violation of any checked condition.
    pub fn worst_violation(&self) -> f64 {
        self.worst_marginal_violation
            .max(self.worst_dual_violation)
            .max(self.worst_slackness)
    }
}

/// Tolerance of the feasibility and slackness checks.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

/// Re-derives marginals, dual feasibility over the full product, and either
/// complementary slackness (exact) or the declared gap (approximate) from
/// the plan and potentials alone.
pub fn verify_optimality(result: &TransportResult, costs: &(impl CostMatrix + ?Sized)) -> OptimalityReport {
    let c = &result.coupling;
    let mut failures = Vec::new();
    if costs.n_sources() != c.n_sources || costs.n_targets() != c.n_targets {
        failures.push("cost shape does not match the coupling".to_string());
        return OptimalityReport {
            passed: false,
            worst_marginal_violation: f64::INFINITY,
            worst_dual_violation: f64::INFINITY,
            worst_slackness: f64::INFINITY,
            gap: f64::INFINITY,
            failures,
        };
    }
    let (a, b) = (1.0 / c.n_sources as f64, 1.0 / c.n_targets as f64);
    let (rows, cols) = c.marginals();
    let worst_marginal = rows
        .iter()
        .map(|r| (r - a).abs())
        .chain(cols.iter().map(|x| (x - b).abs()))
        .fold(0.0, f64::max);
    if worst_marginal > VERIFY_TOLERANCE {
        failures.push(format!("marginal violation {worst_marginal:.3e}"));
    }
    if let Some(e) = c.entries.iter().find(|e| !(e.mass > 0.0)) {
        failures.push(format!("non-positive mass {} at ({}, {})", e.mass, e.source, e.target));
    }

    let (phi, psi) = (&result.duals.phi, &result.duals.psi);
    let mut worst_dual = 0.0f64;
    for (i, &f) in phi.iter().enumerate() {
        for (j, &p) in psi.iter().enumerate() {
            worst_dual = worst_dual.max(f + p - costs.cost(i, j));
        }
    }
    if worst_dual > VERIFY_TOLERANCE {
        failures.push(format!("dual infeasibility {worst_dual:.3e}"));
    }

    let primal = c.entries
        .iter()
        .map(|e| e.mass * costs.cost(e.source, e.target))
        .collect::<NeumaierSum>()
        .value();
    let dual = result.duals.value();
    let gap = primal - dual;
    let mut worst_slack = 0.0f64;
    match result.method {
        SolveMethod::Exact => {
            for e in &c.entries {
                worst_slack = worst_slack.max((costs.cost(e.source, e.target) - phi[e.source] - psi[e.target]).abs());
            }
            if worst_slack > VERIFY_TOLERANCE {
                failures.push(format!("complementary slackness violated by {worst_slack:.3e}"));
            }
            if gap.abs() > VERIFY_TOLERANCE {
                failures.push(format!("primal and dual differ by {gap:.3e}"));
            }
        }
        SolveMethod::CertifiedApproximate => {
            let declared = result.declared_gap.unwrap_or(0.0);
            if gap > declared + VERIFY_TOLERANCE * 1e-3 {
                failures.push(format!("certified gap {gap:.3e} exceeds declared {declared:.3e}"));
            }
        }
    }
    OptimalityReport {
        passed: failures.is_empty(),
        worst_marginal_violation: worst_marginal,
        worst_dual_violation: worst_dual.max(0.0),
        worst_slackness: worst_slack,
        gap,
        failures,
    }
}

#[cfg(test)]
mod tests;
