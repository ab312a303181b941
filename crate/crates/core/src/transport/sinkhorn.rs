//! Log-domain Sinkhorn with ε-annealing on a truncated support, followed by
//! rounding to exact marginals and a dense c-transform dual certificate.
//!
//! Truncation only affects the quality of the approximation. The returned
//! plan has exact marginals, so its cost bounds the discrete optimum from
//! above. The dual pair is made feasible by c-transforms over the full
//! product, so its value bounds it from below.

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;

/// Parameters of the annealed solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOptions {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Geometric ratio between successive ε stages, in `(0, 1)`.
    pub eps_ratio: f64,
    /// Pairs whose reduced cost exceeds the per-target minimum by more than
    /// `truncation · ε` are dropped for the stage.
    pub truncation: f64,
    /// L1 marginal error that ends an intermediate stage.
    pub stage_tolerance: f64,
    pub max_stage_iterations: usize,
    pub max_final_iterations: usize,
    /// Iterations between certificate evaluations in the final stage.
    pub certificate_interval: usize,
    /// Iterations after which an unconverged stage rebuilds its support from
    /// the current potentials. The final stage backs off geometrically.
    pub support_refresh: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            eps_start: 1e-2,
            eps_end: 1e-5,
            eps_ratio: 0.5,
            truncation: 18.0,
            stage_tolerance: 1e-3,
            max_stage_iterations: 500,
            max_final_iterations: 20_000,
            certificate_interval: 20,
            support_refresh: 100,
        }
    }
}

/// Rounded plan and certified dual pair.
#[derive(Debug, Clone)]
pub(crate) struct CertifiedPlan {
    pub entries: Vec<(usize, usize, f64)>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub iterations: usize,
}

impl CertifiedPlan {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }
}

/// Truncated support stored target-major.
struct Support {
    offsets: Vec<usize>,
    source: Vec<u32>,
    cost: Vec<f64>,
}

impl Support {
    fn build(n: usize, m: usize, cost: &impl Fn(usize, usize) -> f64, phi: &[f64], psi: &[f64], cutoff: f64) -> Self {
        let mut offsets = Vec::with_capacity(m + 1);
        let mut source = Vec::new();
        let mut kept_cost = Vec::new();
        let mut row_best = vec![(f64::INFINITY, usize::MAX); n];
        let mut row_seen = vec![false; n];
        let mut reduced = vec![0.0; n];
        offsets.push(0);
        for j in 0..m {
            let mut best = f64::INFINITY;
            for i in 0..n {
                let r = cost(i, j) - phi[i] - psi[j];
                reduced[i] = r;
                best = best.min(r);
                if r < row_best[i].0 {
                    row_best[i] = (r, j);
                }
            }
            let limit = best + cutoff;
            for (i, &r) in reduced.iter().enumerate() {
                if r <= limit {
                    source.push(i as u32);
                    kept_cost.push(r + phi[i] + psi[j]);
                    row_seen[i] = true;
                }
            }
            offsets.push(source.len());
        }
        let mut support = Support {
            offsets,
            source,
            cost: kept_cost,
        };
        // every source keeps at least its best target
        let missing: Vec<(usize, usize)> = (0..n).filter(|&i| !row_seen[i]).map(|i| (i, row_best[i].1)).collect();
        if !missing.is_empty() {
            support.insert(&missing, cost);
        }
        support
    }

    fn insert(&mut self, extra: &[(usize, usize)], cost: &impl Fn(usize, usize) -> f64) {
        let m = self.offsets.len() - 1;
        let mut per_target: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(i, j) in extra {
            per_target[j].push(i);
        }
        let mut offsets = Vec::with_capacity(m + 1);
        let mut source = Vec::with_capacity(self.source.len() + extra.len());
        let mut kept = Vec::with_capacity(self.source.len() + extra.len());
        offsets.push(0);
        for j in 0..m {
            for e in self.offsets[j]..self.offsets[j + 1] {
                source.push(self.source[e]);
                kept.push(self.cost[e]);
            }
            for &i in &per_target[j] {
                source.push(i as u32);
                kept.push(cost(i, j));
            }
            offsets.push(source.len());
        }
        *self = Support {
            offsets,
            source,
            cost: kept,
        };
    }

    fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }
}

struct State<'a, C: Fn(usize, usize) -> f64> {
    n: usize,
    m: usize,
    cost: &'a C,
    log_a: f64,
    log_b: f64,
    phi: Vec<f64>,
    psi: Vec<f64>,
    row_sum: Vec<f64>,
}

impl<C: Fn(usize, usize) -> f64> State<'_, C> {
    /// Source update; returns the L1 source-marginal error before the update.
    fn update_sources(&mut self, s: &Support, eps: f64) -> f64 {
        self.row_sum.iter_mut().for_each(|r| *r = 0.0);
        for j in 0..self.m {
            let pj = self.psi[j];
            for e in s.range(j) {
                let i = s.source[e] as usize;
                self.row_sum[i] += ((self.phi[i] + pj - s.cost[e]) / eps).exp();
            }
        }
        let a = self.log_a.exp();
        let mut err = 0.0;
        let mut degenerate = Vec::new();
        for i in 0..self.n {
            let r = self.row_sum[i];
            err += (r - a).abs();
            if r > 0.0 && r.is_finite() {
                self.phi[i] += eps * (self.log_a - r.ln());
            } else {
                degenerate.push(i);
            }
        }
        if !degenerate.is_empty() {
            self.stable_source_update(s, eps, &degenerate);
        }
        err
    }

    fn stable_source_update(&mut self, s: &Support, eps: f64, rows: &[usize]) {
        let mut is_row = vec![false; self.n];
        rows.iter().for_each(|&i| is_row[i] = true);
        let mut mx = vec![f64::NEG_INFINITY; self.n];
        for j in 0..self.m {
            for e in s.range(j) {
                let i = s.source[e] as usize;
                if is_row[i] {
                    mx[i] = mx[i].max(self.psi[j] - s.cost[e]);
                }
            }
        }
        let mut acc = vec![0.0; self.n];
        for j in 0..self.m {
            for e in s.range(j) {
                let i = s.source[e] as usize;
                if is_row[i] {
                    acc[i] += ((self.psi[j] - s.cost[e] - mx[i]) / eps).exp();
                }
            }
        }
        for &i in rows {
            self.phi[i] = eps * self.log_a - (mx[i] + eps * acc[i].ln());
        }
    }

    fn update_targets(&mut self, s: &Support, eps: f64) {
        for j in 0..self.m {
            let range = s.range(j);
            let mut c = 0.0;
            for e in range.clone() {
                let i = s.source[e] as usize;
                c += ((self.phi[i] + self.psi[j] - s.cost[e]) / eps).exp();
            }
            if c > 0.0 && c.is_finite() {
                self.psi[j] += eps * (self.log_b - c.ln());
            } else {
                let mx = range
                    .clone()
                    .map(|e| self.phi[s.source[e] as usize] - s.cost[e])
                    .fold(f64::NEG_INFINITY, f64::max);
                let acc: f64 = range
                    .map(|e| ((self.phi[s.source[e] as usize] - s.cost[e] - mx) / eps).exp())
                    .sum();
                self.psi[j] = eps * self.log_b - (mx + eps * acc.ln());
            }
        }
    }

    /// Rounds the current kernel plan to exact marginals and certifies it.
    /// With `dense == false` the c-transforms only range over the support,
    /// which gives a cheap gap that never exceeds the certified one.
    fn certify(&self, s: &Support, eps: f64, dense: bool) -> CertifiedPlan {
        let (n, m) = (self.n, self.m);
        let a = 1.0 / n as f64;
        let b = 1.0 / m as f64;
        let floor = 1e-15 * b;
        let mut mass: Vec<f64> = Vec::with_capacity(s.source.len());
        let mut rows = vec![0.0; n];
        for j in 0..m {
            for e in s.range(j) {
                let i = s.source[e] as usize;
                let p = ((self.phi[i] + self.psi[j] - s.cost[e]) / eps).exp();
                let p = if p >= floor { p } else { 0.0 };
                mass.push(p);
                rows[i] += p;
            }
        }
        // shrink rows, then columns, so that no marginal is exceeded
        let row_scale: Vec<f64> = rows.iter().map(|&r| if r > a { a / r } else { 1.0 }).collect();
        let mut row_deficit = vec![0.0; n];
        let mut col_deficit = vec![0.0; m];
        rows.iter_mut().for_each(|r| *r = 0.0);
        for j in 0..m {
            let range = s.range(j);
            let mut col = 0.0;
            for e in range.clone() {
                mass[e] *= row_scale[s.source[e] as usize];
                col += mass[e];
            }
            if col > b {
                let f = b / col;
                col = 0.0;
                for e in range.clone() {
                    mass[e] *= f;
                    col += mass[e];
                }
            }
            col_deficit[j] = (b - col).max(0.0);
            for e in range {
                rows[s.source[e] as usize] += mass[e];
            }
        }
        for i in 0..n {
            row_deficit[i] = (a - rows[i]).max(0.0);
        }

        // Greedy local repair: each target's deficit goes to its cheapest
        // supported sources that still lack mass.
        let mut extra: Vec<(usize, usize, f64)> = Vec::new();
        let mut order: Vec<usize> = Vec::new();
        for j in 0..m {
            if col_deficit[j] <= 0.0 {
                continue;
            }
            order.clear();
            order.extend(s.range(j));
            order.sort_by(|&x, &y| s.cost[x].partial_cmp(&s.cost[y]).unwrap());
            for &e in &order {
                let i = s.source[e] as usize;
                if row_deficit[i] <= 0.0 {
                    continue;
                }
                let x = col_deficit[j].min(row_deficit[i]);
                mass[e] += x;
                col_deficit[j] -= x;
                row_deficit[i] -= x;
                if col_deficit[j] <= 0.0 {
                    break;
                }
            }
        }
        // Whatever is left is paired in index order.
        let mut i = 0;
        for j in 0..m {
            while col_deficit[j] > 0.0 && i < n {
                if row_deficit[i] <= 0.0 {
                    i += 1;
                    continue;
                }
                let x = col_deficit[j].min(row_deficit[i]);
                extra.push((i, j, x));
                col_deficit[j] -= x;
                row_deficit[i] -= x;
            }
        }

        let mut entries = Vec::with_capacity(mass.len() + extra.len());
        let mut primal = NeumaierSum::default();
        for j in 0..m {
            for e in s.range(j) {
                if mass[e] > 0.0 {
                    let i = s.source[e] as usize;
                    entries.push((i, j, mass[e]));
                    primal.add(mass[e] * s.cost[e]);
                }
            }
        }
        for &(i, j, x) in &extra {
            if x > 0.0 {
                entries.push((i, j, x));
                primal.add(x * (self.cost)(i, j));
            }
        }

        let (phi, psi, dual) = if dense {
            c_transform_pair(n, m, self.cost, &self.phi)
        } else {
            sparse_c_transform_pair(s, n, &self.phi)
        };
        CertifiedPlan {
            entries,
            phi,
            psi,
            primal: primal.value(),
            dual,
            iterations: 0,
        }
    }
}

/// Feasible dual pair from source potentials: `ψ = φ^c`, then `φ = ψ^c`.
/// Returns the pair and its dual value under uniform marginals.
pub(crate) fn c_transform_pair(n: usize, m: usize, cost: &impl Fn(usize, usize) -> f64, phi0: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut psi = vec![f64::INFINITY; m];
    for (j, p) in psi.iter_mut().enumerate() {
        for (i, &f) in phi0.iter().enumerate() {
            let v = cost(i, j) - f;
            if v < *p {
                *p = v;
            }
        }
    }
    let mut phi = vec![f64::INFINITY; n];
    for j in 0..m {
        let pj = psi[j];
        for (i, f) in phi.iter_mut().enumerate() {
            let v = cost(i, j) - pj;
            if v < *f {
                *f = v;
            }
        }
    }
    let mut dual = NeumaierSum::default();
    phi.iter().for_each(|&f| dual.add(f / n as f64));
    psi.iter().for_each(|&p| dual.add(p / m as f64));
    (phi, psi, dual.value())
}

fn sparse_c_transform_pair(s: &Support, n: usize, phi0: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let m = s.offsets.len() - 1;
    let psi: Vec<f64> = (0..m)
        .map(|j| {
            s.range(j)
                .map(|e| s.cost[e] - phi0[s.source[e] as usize])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut phi = vec![f64::INFINITY; n];
    for (j, &pj) in psi.iter().enumerate() {
        for e in s.range(j) {
            let i = s.source[e] as usize;
            phi[i] = phi[i].min(s.cost[e] - pj);
        }
    }
    let mut dual = NeumaierSum::default();
    phi.iter().for_each(|&f| dual.add(f / n as f64));
    psi.iter().for_each(|&p| dual.add(p / m as f64));
    (phi, psi, dual.value())
}

/// Runs the annealed solver between `n` sources of mass `1/n` and `m` targets
/// of mass `1/m`; stops once the certified gap is at most `gap_target`.
pub(crate) fn solve_certified(
    n: usize,
    m: usize,
    cost: &impl Fn(usize, usize) -> f64,
    gap_target: f64,
    opts: &SinkhornOptions,
) -> Result<CertifiedPlan> {
    let mut st = State {
        n,
        m,
        cost,
        log_a: -(n as f64).ln(),
        log_b: -(m as f64).ln(),
        phi: vec![0.0; n],
        psi: vec![0.0; m],
        row_sum: vec![0.0; n],
    };
    let mut eps = opts.eps_start.max(opts.eps_end);
    let mut iterations = 0usize;
    loop {
        let final_stage = eps <= opts.eps_end * (1.0 + 1e-12);
        let cutoff = opts.truncation * eps;
        let mut support = Support::build(n, m, cost, &st.phi, &st.psi, cutoff);
        st.update_targets(&support, eps);
        if !final_stage {
            for k in 1..=opts.max_stage_iterations {
                let err = st.update_sources(&support, eps);
                st.update_targets(&support, eps);
                iterations += 1;
                if err <= opts.stage_tolerance {
                    break;
                }
                if k % opts.support_refresh == 0 {
                    support = Support::build(n, m, cost, &st.phi, &st.psi, cutoff);
                }
            }
            eps = (eps * opts.eps_ratio).max(opts.eps_end);
            continue;
        }
        let mut best: Option<CertifiedPlan> = None;
        for k in 1..=opts.max_final_iterations {
            let err = st.update_sources(&support, eps);
            st.update_targets(&support, eps);
            iterations += 1;
            if k % opts.support_refresh == 0 && err > opts.stage_tolerance {
                support = Support::build(n, m, cost, &st.phi, &st.psi, cutoff);
            }
            let last = k == opts.max_final_iterations;
            if k % opts.certificate_interval != 0 && !last {
                continue;
            }
            let checkpoint = k % opts.support_refresh == 0 && (k / opts.support_refresh).is_power_of_two();
            if !last && !checkpoint && st.certify(&support, eps, false).gap() > gap_target {
                continue;
            }
            let mut plan = st.certify(&support, eps, true);
            plan.iterations = iterations;
            if plan.gap() <= gap_target {
                return Ok(plan);
            }
            if best.as_ref().is_none_or(|b| plan.gap() < b.gap()) {
                best = Some(plan);
            }
            support = Support::build(n, m, cost, &st.phi, &st.psi, cutoff);
        }
        let achieved = best.map_or(f64::INFINITY, |b| b.gap());
        return Err(Error::Convergence {
            achieved,
            target: gap_target,
        });
    }
}
