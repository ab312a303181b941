//! Exact transportation between integer supplies and demands by successive
//! shortest paths with node potentials.
//!
//! Targets are inserted one at a time and routed to sources with spare
//! capacity through the residual graph (forward arcs target -> source on
//! every pair, reverse arcs source -> target where flow is positive). With
//! reduced costs kept nonnegative each search is a Dijkstra run, and the
//! final potentials are an optimal Kantorovich pair.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Row-major `n_sources x n_targets` cost matrix.
#[derive(Debug, Clone)]
pub struct DenseCost {
    n_sources: usize,
    n_targets: usize,
    data: Vec<f64>,
}

impl DenseCost {
    pub fn from_fn(n_sources: usize, n_targets: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_sources * n_targets);
        for i in 0..n_sources {
            for j in 0..n_targets {
                data.push(f(i, j));
            }
        }
        Self {
            n_sources,
            n_targets,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_targets + j]
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }
}

/// Optimal integer flow with its potentials.
#[derive(Debug, Clone)]
pub(crate) struct IntegerPlan {
    /// `(source, target, units)` with `units > 0`.
    pub flows: Vec<(usize, usize, u64)>,
    pub source_potential: Vec<f64>,
    pub target_potential: Vec<f64>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NONE: usize = usize::MAX;

/// Solves `min Σ c_ij x_ij` with row sums `supply` and column sums `demand`.
/// Totals must agree.
pub(crate) fn solve_transportation(cost: &DenseCost, supply: &[u64], demand: &[u64]) -> IntegerPlan {
    let n = cost.n_sources();
    let m = cost.n_targets();
    debug_assert_eq!(supply.len(), n);
    debug_assert_eq!(demand.len(), m);
    debug_assert_eq!(supply.iter().sum::<u64>(), demand.iter().sum::<u64>());

    // Node ids: sources 0..n, targets n..n+m.
    let mut z = vec![0.0f64; n];
    let mut y = vec![0.0f64; m];
    let mut capacity = supply.to_vec();
    let mut by_source: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];

    let mut dist = vec![f64::INFINITY; n + m];
    let mut parent = vec![NONE; n + m];
    let mut done = vec![false; n + m];
    let mut touched: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();

    for j0 in 0..m {
        let mut remaining = demand[j0];
        while remaining > 0 {
            for &v in &touched {
                dist[v] = f64::INFINITY;
                parent[v] = NONE;
                done[v] = false;
            }
            touched.clear();
            heap.clear();

            let start = n + j0;
            dist[start] = 0.0;
            touched.push(start);
            heap.push(HeapItem { dist: 0.0, node: start });
            let mut sink = NONE;
            let mut sink_dist = 0.0;

            while let Some(HeapItem { dist: d, node }) = heap.pop() {
                if done[node] || d > dist[node] {
                    continue;
                }
                done[node] = true;
                if node >= n {
                    let j = node - n;
                    for i in 0..n {
                        if done[i] {
                            continue;
                        }
                        let rc = (cost.get(i, j) - y[j] - z[i]).max(0.0);
                        let nd = d + rc;
                        if nd < dist[i] {
                            if dist[i].is_infinite() {
                                touched.push(i);
                            }
                            dist[i] = nd;
                            parent[i] = node;
                            heap.push(HeapItem { dist: nd, node: i });
                        }
                    }
                } else {
                    let i = node;
                    if capacity[i] > 0 {
                        sink = i;
                        sink_dist = d;
                        break;
                    }
                    for &(j, _) in &by_source[i] {
                        let t = n + j;
                        if done[t] {
                            continue;
                        }
                        let rc = (y[j] + z[i] - cost.get(i, j)).max(0.0);
                        let nd = d + rc;
                        if nd < dist[t] {
                            if dist[t].is_infinite() {
                                touched.push(t);
                            }
                            dist[t] = nd;
                            parent[t] = node;
                            heap.push(HeapItem { dist: nd, node: t });
                        }
                    }
                }
            }
            assert!(sink != NONE, "transportation instance has no augmenting path");

            // Potentials: π(v) += min(d(v), D); unreached nodes shift by D.
            for i in 0..n {
                z[i] += dist[i].min(sink_dist);
            }
            for j in 0..m {
                y[j] -= dist[n + j].min(sink_dist);
            }

            // Bottleneck along the path sink <- ... <- start.
            let mut push = remaining.min(capacity[sink]);
            let mut v = sink;
            while v != start {
                let p = parent[v];
                if v >= n {
                    // reverse arc p(source) -> v(target)
                    let units = flow_of(&by_source[p], v - n);
                    push = push.min(units);
                }
                v = p;
            }
            let mut v = sink;
            while v != start {
                let p = parent[v];
                if v < n {
                    add_flow(&mut by_source[v], p - n, push as i64);
                } else {
                    add_flow(&mut by_source[p], v - n, -(push as i64));
                }
                v = p;
            }
            capacity[sink] -= push;
            remaining -= push;
        }
    }

    let flows = by_source
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |&(j, u)| (i, j, u)))
        .collect();
    IntegerPlan {
        flows,
        source_potential: z,
        target_potential: y,
    }
}

fn flow_of(list: &[(usize, u64)], j: usize) -> u64 {
    list.iter().find(|e| e.0 == j).map_or(0, |e| e.1)
}

fn add_flow(list: &mut Vec<(usize, u64)>, j: usize, delta: i64) {
    if let Some(pos) = list.iter().position(|e| e.0 == j) {
        let updated = list[pos].1 as i64 + delta;
        debug_assert!(updated >= 0);
        if updated == 0 {
            list.swap_remove(pos);
        } else {
            list[pos].1 = updated as u64;
        }
    } else {
        debug_assert!(delta > 0);
        list.push((j, delta as u64));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::assignment::solve_assignment;
    use rand::Rng;

    fn plan_cost(cost: &DenseCost, plan: &IntegerPlan) -> f64 {
        plan.flows.iter().map(|&(i, j, u)| u as f64 * cost.get(i, j)).sum()
    }

    #[test]
    fn agrees_with_assignment_after_replication() {
        let mut rng = crate::torus::replicate_rng(31, 0);
        for _ in 0..30 {
            let n = rng.gen_range(1..=4);
            let reps = rng.gen_range(1..=3);
            let m = n * reps;
            let cost = DenseCost::from_fn(n, m, |_, _| 0.0);
            let raw: Vec<f64> = (0..n * m).map(|_| rng.gen::<f64>()).collect();
            let cost = DenseCost::from_fn(cost.n_sources(), m, |i, j| raw[i * m + j]);
            let plan = solve_transportation(&cost, &vec![reps as u64; n], &vec![1; m]);
            let square: Vec<Vec<f64>> = (0..m).map(|r| (0..m).map(|j| cost.get(r / reps, j)).collect()).collect();
            let a = solve_assignment(&square).unwrap();
            assert!((plan_cost(&cost, &plan) - a.value).abs() < 1e-12);
            // certificate
            for i in 0..n {
                for j in 0..m {
                    assert!(plan.source_potential[i] + plan.target_potential[j] <= cost.get(i, j) + 1e-12);
                }
            }
            for &(i, j, _) in &plan.flows {
                assert!((plan.source_potential[i] + plan.target_potential[j] - cost.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn handles_split_targets() {
        // 2 sources of 3 units, 3 targets of 2 units: the middle target splits
        let cost = DenseCost::from_fn(2, 3, |i, j| ((i as f64) * 2.0 - j as f64).powi(2));
        let plan = solve_transportation(&cost, &[3, 3], &[2, 2, 2]);
        let total: u64 = plan.flows.iter().map(|f| f.2).sum();
        assert_eq!(total, 6);
        assert!((plan_cost(&cost, &plan) - 2.0).abs() < 1e-12);
    }
}
