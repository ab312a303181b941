use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use super::{Check, ExperimentConfig, ExperimentReport, ReplicateRecord, SummaryStats};
use crate::ansatz::{field_dot_integral, field_dot_quadrature, AnsatzField, GradientField, GridField, DEFAULT_GRID_K};
use crate::error::{Error, Result};
use crate::heat::{covariance_closed_form, field_energy_closed_form, SpectralCutoff};
use crate::torus::{replicate_rng, sample_uniform, SampleSet, TorusPoint};
use crate::trajectory::{coupling_pairs, trajectory_values, QuadratureRule};
use crate::transport::{
    one_dim_bipartite_w2, one_dim_w2, semidiscrete_w2_with, SemiDiscreteOptions, TransportResult,
};

/// Largest fraction of replicates whose solver may fail before a run aborts.
const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Clone, Copy)]
struct Template {
    experiment: super::Experiment,
    n: usize,
    t: Option<f64>,
    grid_k: Option<usize>,
    base_seed: u64,
}

impl Template {
    fn new(cfg: &ExperimentConfig, n: usize, t: Option<f64>, grid_k: Option<usize>) -> Self {
        Template {
            experiment: cfg.experiment,
            n,
            t,
            grid_k,
            base_seed: cfg.base_seed,
        }
    }

    fn record(&self, replicate_index: u64, metric: &str, value: f64) -> ReplicateRecord {
        ReplicateRecord {
            experiment: self.experiment,
            n: self.n,
            t: self.t,
            grid_k: self.grid_k,
            base_seed: self.base_seed,
            replicate_index,
            metric: metric.to_string(),
            value,
            lower: None,
            upper: None,
        }
    }

    fn at_time(&self, t: f64) -> Self {
        Template { t: Some(t), ..*self }
    }

    fn derived(&self, metric: &str, mean: f64, sd: f64, se: f64, count: usize) -> SummaryStats {
        SummaryStats {
            experiment: self.experiment,
            n: self.n,
            t: self.t,
            grid_k: self.grid_k,
            base_seed: self.base_seed,
            metric: metric.to_string(),
            mean,
            sd,
            se,
            count,
        }
    }
}

/// Runs `f` on replicates `0..count` in parallel and returns results in
/// replicate order.
fn par_replicates<T: Send>(count: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count as u64).into_par_iter().map(f).collect()
}

fn flatten(report: &mut ExperimentReport, per_replicate: Vec<Vec<ReplicateRecord>>) -> Vec<ReplicateRecord> {
    let records: Vec<ReplicateRecord> = per_replicate.into_iter().flatten().collect();
    report.records.extend(records.iter().cloned());
    records
}

fn summary<'a>(summaries: &'a [SummaryStats], metric: &str, t: Option<f64>) -> &'a SummaryStats {
    summaries
        .iter()
        .find(|s| s.metric == metric && s.t == t)
        .expect("metric was recorded")
}

/// Grid size for a [`GridField`] at time `t`.
fn field_grid_k(t: f64, tol: f64) -> Result<usize> {
    let kmax = SpectralCutoff::for_time(t, tol)?.kmax;
    Ok(DEFAULT_GRID_K.max((2 * kmax + 1).next_power_of_two()))
}

fn solve(cfg: &ExperimentConfig, sample: &SampleSet, k: usize) -> Result<Option<TransportResult>> {
    let opts = SemiDiscreteOptions::default();
    match semidiscrete_w2_with(sample, k, cfg.solver_mode, &opts) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Convergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn note_failures(report: &mut ExperimentReport, n: usize, failed: usize, total: usize) {
    if failed == 0 {
        return;
    }
    report.solver_failures += failed;
    report
        .notes
        .push(format!("n={n}: {failed} of {total} replicates missed the certified gap"));
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        report.solver_aborted = true;
    }
}

/// 1D law on `[0, 1]`: the semi-discrete cost `one_dim_w2` has mean
/// `1/(6n)` and the bipartite cost `one_dim_bipartite_w2` has mean `1/(3(n+1))`.
pub fn run_1d_oracle(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg);
    for &n in &cfg.n_list {
        let tpl = Template::new(cfg, n, None, None);
        let seed = cfg.stream_seed(n);
        let per_rep = par_replicates(cfg.replicates_for(n), |r| {
            let mut rng = replicate_rng(seed, r);
            let mut xs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let mut ys: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            Ok(vec![
                tpl.record(r, "semidiscrete_w2", one_dim_w2(&xs)?),
                tpl.record(r, "bipartite_w2", one_dim_bipartite_w2(&xs, &ys)?),
            ])
        })?;
        let records = flatten(&mut report, per_rep);
        let sums = SummaryStats::summarise(&records);
        let semi = summary(&sums, "semidiscrete_w2", None);
        let bip = summary(&sums, "bipartite_w2", None);
        report.checks.push(Check::three_se(
            "bipartite_w2 mean vs 1/(3(n+1))",
            Some(n),
            bip.mean,
            1.0 / (3.0 * (n as f64 + 1.0)),
            bip.se,
        ));
        report.checks.push(Check::three_se(
            "semidiscrete_w2 mean vs 1/(6n)",
            Some(n),
            semi.mean,
            1.0 / (6.0 * n as f64),
            semi.se,
        ));
        report.summaries.extend(sums);
    }
    Ok(report)
}

/// `n·|∇f(0) - ∇f(y)|²` against `2(q_{2t}(0) - q_{2t}(y))`.
pub fn run_covariance(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg);
    let y = TorusPoint::wrap(cfg.point_y[0], cfg.point_y[1])?;
    for &n in &cfg.n_list {
        let t = cfg.t_rule.time(n);
        if t < 1.0 / n as f64 {
            report.notes.push(format!("n={n}: t = {t} is below 1/n"));
        }
        let tpl = Template::new(cfg, n, Some(t), None);
        let seed = cfg.stream_seed(n);
        let per_rep = par_replicates(cfg.replicates_for(n), |r| {
            let sample = sample_uniform(n, seed, r)?;
            let field = AnsatzField::new_unrestricted(&sample, t)?.with_tolerance(cfg.cutoff_tolerance)?;
            let a = field.grad(TorusPoint::ORIGIN);
            let b = field.grad(y);
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            Ok(vec![tpl.record(r, "n_grad_increment_sq", n as f64 * d2)])
        })?;
        let records = flatten(&mut report, per_rep);
        let sums = SummaryStats::summarise(&records);
        let est = summary(&sums, "n_grad_increment_sq", Some(t)).clone();
        let closed = covariance_closed_form(t, y)?;
        report.checks.push(Check::three_se(
            "covariance vs 2(q_2t(0) - q_2t(y))",
            Some(n),
            est.mean,
            closed,
            est.se,
        ));
        report.summaries.extend(sums);
        report
            .summaries
            .push(tpl.derived("closed_form", closed, 0.0, 0.0, est.count));
    }
    Ok(report)
}

/// Semigroup identity, grid quadrature of `∫∇f_s·∇f_t`, and the expected
/// field energy against `q_{2t}(0)`.
pub fn run_energy_identity(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg);
    for &n in &cfg.n_list {
        let t = cfg.t_rule.time(n);
        let (s, u) = (t, 2.0 * t);
        let mid = 0.5 * (s + u);
        let tpl = Template::new(cfg, n, Some(t), None);
        let seed = cfg.stream_seed(n);
        let field_k = field_grid_k(s, cfg.cutoff_tolerance)?;
        let per_rep = par_replicates(cfg.replicates_for(n), |r| {
            let sample = sample_uniform(n, seed, r)?;
            let energy = field_dot_integral(&sample, t, t)?;
            let cross = field_dot_integral(&sample, s, u)?;
            let folded = field_dot_integral(&sample, mid, mid)?;
            let mut out = vec![
                tpl.record(r, "n_field_energy", n as f64 * energy),
                tpl.record(r, "semigroup_residual", (cross - folded).abs() / folded.abs()),
            ];
            if (r as usize) < cfg.identity_samples {
                let a = GridField::build(&sample, s, field_k, cfg.cutoff_tolerance)?;
                let b = GridField::build(&sample, u, field_k, cfg.cutoff_tolerance)?;
                let quad = field_dot_quadrature(&a, &b)?;
                out.push(tpl.record(r, "quadrature_residual", (quad - cross).abs()));
            }
            Ok(out)
        })?;
        let records = flatten(&mut report, per_rep);
        let worst = |metric: &str| {
            records
                .iter()
                .filter(|r| r.metric == metric)
                .map(|r| r.value)
                .fold(0.0, f64::max)
        };
        report
            .checks
            .push(Check::within("semigroup identity residual", Some(n), worst("semigroup_residual"), 0.0, 1e-10));
        if cfg.identity_samples > 0 {
            report
                .checks
                .push(Check::within("grid quadrature residual", Some(n), worst("quadrature_residual"), 0.0, 1e-8));
        }
        let sums = SummaryStats::summarise(&records);
        let energy = summary(&sums, "n_field_energy", Some(t)).clone();
        let closed = field_energy_closed_form(t)?;
        report
            .checks
            .push(Check::three_se("n * field energy vs q_2t(0)", Some(n), energy.mean, closed, energy.se));
        report.summaries.extend(sums);
        report
            .summaries
            .push(tpl.derived("closed_form", closed, 0.0, 0.0, energy.count));
    }
    for t in [1e-4, 1e-3, 1e-2] {
        let q = field_energy_closed_form(t)?;
        let log_term = (1.0 / t).ln() / (4.0 * PI);
        report
            .checks
            .push(Check::within(format!("q_2t(0) - ln(1/t)/4pi at t={t}"), None, q - log_term, -0.5, 0.5));
    }
    Ok(report)
}

/// `d_n = n·E[W₂²] - ln(n)/(4π)` from certified brackets. Each replicate
/// records the bracket midpoint as its value.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg);
    let mut widened: Vec<(usize, f64, f64)> = Vec::new();
    for &n in &cfg.n_list {
        let k = cfg.grid_k.resolve(n);
        let tpl = Template::new(cfg, n, None, Some(k));
        let seed = cfg.stream_seed(n);
        let total = cfg.replicates_for(n);
        let per_rep = par_replicates(total, |r| {
            let sample = sample_uniform(n, seed, r)?;
            Ok(solve(cfg, &sample, k)?.map(|res| {
                let mid = 0.5 * (res.lower_bound + res.upper_bound);
                let mut rec = tpl.record(r, "w2", mid);
                rec.lower = Some(res.lower_bound);
                rec.upper = Some(res.upper_bound);
                vec![rec]
            }))
        })?;
        let failed = per_rep.iter().filter(|r| r.is_none()).count();
        note_failures(&mut report, n, failed, total);
        let records = flatten(&mut report, per_rep.into_iter().flatten().collect());
        if records.len() < 2 {
            report.solver_aborted = true;
            continue;
        }
        let nf = n as f64;
        let log_term = nf.ln() / (4.0 * PI);
        let (mean, sd, se) = super::mean_sd_se(&records.iter().map(|r| r.value).collect::<Vec<_>>());
        let lowers: Vec<f64> = records.iter().map(|r| r.lower.expect("bounded")).collect();
        let uppers: Vec<f64> = records.iter().map(|r| r.upper.expect("bounded")).collect();
        let (lo_mean, lo_sd, lo_se) = super::mean_sd_se(&lowers);
        let (up_mean, up_sd, up_se) = super::mean_sd_se(&uppers);
        let count = records.len();
        report.summaries.push(tpl.derived("w2", mean, sd, se, count));
        report.summaries.push(tpl.derived("w2_lower", lo_mean, lo_sd, lo_se, count));
        report.summaries.push(tpl.derived("w2_upper", up_mean, up_sd, up_se, count));
        report
            .summaries
            .push(tpl.derived("d_n", nf * mean - log_term, nf * sd, nf * se, count));
        let d_lo = nf * (lo_mean - 3.0 * lo_se) - log_term;
        let d_hi = nf * (up_mean + 3.0 * up_se) - log_term;
        report.summaries.push(tpl.derived("d_n_lower", d_lo, 0.0, 0.0, count));
        report.summaries.push(tpl.derived("d_n_upper", d_hi, 0.0, 0.0, count));
        report.checks.push(Check::within("d_n widened lower end", Some(n), d_lo, -2.0, f64::INFINITY));
        report.checks.push(Check::within("d_n widened upper end", Some(n), d_hi, f64::NEG_INFINITY, 2.0));
        widened.push((n, d_lo, d_hi));
    }
    widened.sort_by_key(|w| w.0);
    if let [.., (_, a_lo, a_hi), (n_b, b_lo, b_hi)] = widened[..] {
        let worst = (b_hi - a_lo).max(a_hi - b_lo);
        report
            .checks
            .push(Check::within("worst |d_n difference| of the two largest n", Some(n_b), worst, 0.0, 1.0));
    }
    Ok(report)
}

/// Trajectory functionals at `t = 1/n`, scaled by `n`.
pub fn run_trajectory_suite(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg);
    let quad = QuadratureRule::gauss_legendre(cfg.quadrature_nodes)?;
    let mut means: Vec<(usize, f64, f64)> = Vec::new();
    for &n in &cfg.n_list {
        let k = cfg.grid_k.resolve(n);
        let t = cfg.t_rule.time(n);
        let tpl = Template::new(cfg, n, Some(t), Some(k));
        let seed = cfg.stream_seed(n);
        let total = cfg.replicates_for(n);
        let field_k = field_grid_k(t, cfg.cutoff_tolerance)?;
        let per_rep = par_replicates(total, |r| {
            let sample = sample_uniform(n, seed, r)?;
            let Some(result) = solve(cfg, &sample, k)? else {
                return Ok(None);
            };
            let field = GridField::build(&sample, t, field_k, cfg.cutoff_tolerance)?;
            let pairs = coupling_pairs(&result, &sample, k)?;
            let v = trajectory_values(&field, &pairs, &quad);
            let nf = n as f64;
            Ok(Some(vec![
                tpl.record(r, "n_defect_endpoint", nf * v.defect_endpoint),
                tpl.record(r, "n_defect_along", nf * v.defect_along),
                tpl.record(r, "n_energy_along", nf * v.energy_along),
                tpl.record(r, "n_gradient_variation", nf * v.gradient_variation),
            ]))
        })?;
        let failed = per_rep.iter().filter(|r| r.is_none()).count();
        note_failures(&mut report, n, failed, total);
        let records = flatten(&mut report, per_rep.into_iter().flatten().collect());
        if records.is_empty() {
            report.solver_aborted = true;
            continue;
        }
        let sums = SummaryStats::summarise(&records);
        let along = summary(&sums, "n_defect_along", Some(t)).mean;
        let variation = summary(&sums, "n_gradient_variation", Some(t)).mean;
        let energy = summary(&sums, "n_energy_along", Some(t)).clone();
        let closed = field_energy_closed_form(t)?;
        let offset = tpl.derived("energy_offset", energy.mean - closed, energy.sd, energy.se, energy.count);
        report
            .checks
            .push(Check::within("n * defect_along", Some(n), along, 0.0, 5.0));
        report
            .checks
            .push(Check::within("n * gradient variation", Some(n), variation, 0.0, 5.0));
        report.summaries.extend(sums);
        report.summaries.push(offset);
        means.push((n, along, variation));
    }
    means.sort_by_key(|m| m.0);
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        if last.0 != first.0 {
            report
                .checks
                .push(Check::within("defect_along ratio largest/smallest n", Some(last.0), last.1 / first.1, 0.5, 2.0));
            report.checks.push(Check::within(
                "gradient variation ratio largest/smallest n",
                Some(last.0),
                last.2 / first.2,
                0.5,
                2.0,
            ));
        }
    }
    Ok(report)
}

/// `n·defect_endpoint` at `t = m/n` for each multiplier `m`.
pub fn run_ansatz_defect(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg);
    for &n in &cfg.n_list {
        let k = cfg.grid_k.resolve(n);
        let tpl = Template::new(cfg, n, None, Some(k));
        let seed = cfg.stream_seed(n);
        let total = cfg.replicates_for(n);
        let times: Vec<f64> = cfg.t_multipliers.iter().map(|m| m / n as f64).collect();
        let grids: Vec<usize> = times
            .iter()
            .map(|&t| field_grid_k(t, cfg.cutoff_tolerance))
            .collect::<Result<_>>()?;
        let endpoint = QuadratureRule::endpoint();
        let per_rep = par_replicates(total, |r| {
            let sample = sample_uniform(n, seed, r)?;
            let Some(result) = solve(cfg, &sample, k)? else {
                return Ok(None);
            };
            let pairs = coupling_pairs(&result, &sample, k)?;
            times
                .iter()
                .zip(&grids)
                .map(|(&t, &fk)| {
                    let field = GridField::build(&sample, t, fk, cfg.cutoff_tolerance)?;
                    let v = trajectory_values(&field, &pairs, &endpoint);
                    Ok(tpl.at_time(t).record(r, "n_defect_endpoint", n as f64 * v.defect_endpoint))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })?;
        let failed = per_rep.iter().filter(|r| r.is_none()).count();
        note_failures(&mut report, n, failed, total);
        let mut records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().flatten().collect();
        // group rows by time, replicates in order within each group
        records.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("finite times"));
        report.records.extend(records.iter().cloned());
        if records.is_empty() {
            report.solver_aborted = true;
            continue;
        }
        let sums = SummaryStats::summarise(&records);
        let mut previous: Option<&SummaryStats> = None;
        for (m, &t) in cfg.t_multipliers.iter().zip(&times) {
            let s = summary(&sums, "n_defect_endpoint", Some(t));
            let finite = if s.mean.is_finite() { s.mean } else { f64::INFINITY };
            report
                .checks
                .push(Check::within(format!("n * defect_endpoint at m={m}"), Some(n), finite, 0.0, 10.0));
            if let Some(p) = previous {
                let slack = p.se.max(s.se);
                report.checks.push(Check::within(
                    format!("defect_endpoint nondecreasing into m={m}"),
                    Some(n),
                    s.mean - p.mean,
                    -slack,
                    f64::INFINITY,
                ));
            }
            previous = Some(s);
        }
        report.summaries.extend(sums);
    }
    Ok(report)
}
