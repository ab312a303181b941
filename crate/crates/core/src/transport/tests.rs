use super::*;
use crate::torus::{sample_uniform, Displacement};
use rand::seq::SliceRandom;
use rand::Rng;

fn p(u: f64, v: f64) -> TorusPoint {
    TorusPoint::wrap(u, v).unwrap()
}

fn permutations_min(costs: &[Vec<f64>]) -> f64 {
    fn rec(costs: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == costs.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..costs.len() {
            if !used[j] {
                used[j] = true;
                rec(costs, row + 1, used, acc + costs[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(costs, 0, &mut vec![false; costs.len()], 0.0, &mut best);
    best
}

/// Midpoint rule for `∫_T dist2(x, y) dy`, independent of the closed forms.
fn torus_second_moment(x: TorusPoint, res: usize) -> f64 {
    let h = 1.0 / res as f64;
    let mut acc = 0.0;
    for i in 0..res {
        for j in 0..res {
            acc += dist2(x, p((i as f64 + 0.5) * h, (j as f64 + 0.5) * h));
        }
    }
    acc * h * h
}

#[test]
fn single_atom_upper_bound_is_the_second_moment() {
    let k = 32;
    let s = 1.0 / k as f64;
    for x in [p(0.5, 0.5), p(0.123, 0.987), p(0.0, 0.0)] {
        let sample = SampleSet::from_points(vec![x]).unwrap();
        for mode in [SolveMethod::Exact, SolveMethod::CertifiedApproximate] {
            let r = semidiscrete_w2(&sample, k, mode).unwrap();
            assert!((r.upper_bound - 1.0 / 6.0).abs() <= s * s / 6.0, "{mode}: {}", r.upper_bound);
            assert!(r.lower_bound <= r.upper_bound);
        }
    }
}

#[test]
fn refined_cost_of_single_atom() {
    let one = SampleSet::from_points(vec![p(0.5, 0.5)]).unwrap();
    let plan = Coupling {
        entries: vec![CouplingEntry { source: 0, target: 0, mass: 1.0 }],
        n_sources: 1,
        n_targets: 1,
    };
    assert!((cell_refined_cost(&plan, &one, 1).unwrap() - 1.0 / 6.0).abs() < 1e-15);

    // whole-torus plan for an atom at a cell centre, against a midpoint-rule integral
    let k = 8;
    let x = p(2.5 / 8.0, 5.5 / 8.0);
    let sample = SampleSet::from_points(vec![x]).unwrap();
    let plan = Coupling {
        entries: (0..k * k)
            .map(|j| CouplingEntry { source: 0, target: j, mass: 1.0 / (k * k) as f64 })
            .collect(),
        n_sources: 1,
        n_targets: k * k,
    };
    let refined = cell_refined_cost(&plan, &sample, k).unwrap();
    let oracle = torus_second_moment(x, 2000);
    assert!((oracle - 1.0 / 6.0).abs() < 1e-6);
    assert!((refined - oracle).abs() < 1e-6, "{refined} vs {oracle}");
    // the non-periodic cell formula |δ|² + s²/6 overshoots on the cut-locus cells
    let centers = grid_centers(k).unwrap();
    let naive: f64 = centers.iter().map(|&c| dist2(x, c) + 1.0 / (6.0 * 64.0)).sum::<f64>() / 64.0;
    assert!(naive > refined);
    assert!(cell_refined_cost(&plan, &sample, 4).is_err());
}

#[test]
fn cell_mean_matches_closed_form_away_from_cut_locus() {
    let s = 0.1;
    let atom = p(0.3, 0.4);
    let center = p(0.45, 0.25);
    let d = displacement(atom, center);
    let want = d.norm2() + s * s / 6.0;
    assert!((cell_mean_square_distance(center, atom, s) - want).abs() < 1e-15);
}

#[test]
fn four_atoms_on_an_aligned_grid() {
    let sample = SampleSet::from_points(vec![p(0.25, 0.25), p(0.25, 0.75), p(0.75, 0.25), p(0.75, 0.75)]).unwrap();
    let r = semidiscrete_w2(&sample, 16, SolveMethod::Exact).unwrap();
    assert!((r.upper_bound - 1.0 / 24.0).abs() < 1e-6, "{}", r.upper_bound);
    // independent: quarter-square second moment by the midpoint rule
    let res = 400;
    let h = 0.5 / res as f64;
    let mut q = 0.0;
    for i in 0..res {
        for j in 0..res {
            let (u, v) = (-0.25 + (i as f64 + 0.5) * h, -0.25 + (j as f64 + 0.5) * h);
            q += (u * u + v * v) * h * h;
        }
    }
    assert!((4.0 * q - 1.0 / 24.0).abs() < 1e-6);
    assert!(verify_optimality(&r, &GridCost::new(&sample, 16).unwrap()).passed);
}

#[test]
fn exact_and_approximate_agree_within_the_certified_gap() {
    let sample = sample_uniform(64, 17, 0).unwrap();
    let exact = semidiscrete_w2(&sample, 32, SolveMethod::Exact).unwrap();
    let approx = semidiscrete_w2(&sample, 32, SolveMethod::CertifiedApproximate).unwrap();
    let gap = approx.certified_gap();
    assert!(gap <= gap_target(64));
    assert!((approx.primal_value - exact.primal_value).abs() <= gap + 1e-12);
    assert!(approx.dual_value <= exact.primal_value + 1e-12);
    let costs = GridCost::new(&sample, 32).unwrap();
    let rep = verify_optimality(&approx, &costs);
    assert!(rep.passed, "{:?}", rep.failures);
    let rep = verify_optimality(&exact, &costs);
    assert!(rep.passed, "{:?}", rep.failures);
    for r in [&exact, &approx] {
        assert!(r.lower_bound <= r.upper_bound);
    }
}

#[test]
fn exact_guard_and_bad_input() {
    let big = sample_uniform(129, 1, 0).unwrap();
    assert!(matches!(
        semidiscrete_w2(&big, 8, SolveMethod::Exact),
        Err(crate::error::Error::InvalidConfiguration(_))
    ));
    let small = sample_uniform(4, 1, 0).unwrap();
    assert!(semidiscrete_w2(&small, 33, SolveMethod::Exact).is_err());
    assert!(semidiscrete_w2(&small, 0, SolveMethod::Exact).is_err());
}

#[test]
fn exact_mode_handles_indivisible_masses() {
    // 3 atoms and 16 cells: cells must split
    let sample = sample_uniform(3, 4, 0).unwrap();
    let r = semidiscrete_w2(&sample, 4, SolveMethod::Exact).unwrap();
    let rep = verify_optimality(&r, &GridCost::new(&sample, 4).unwrap());
    assert!(rep.passed, "{:?}", rep.failures);
}

#[test]
fn bipartite_examples() {
    let x = sample_uniform(10, 2, 0).unwrap();
    assert!(bipartite_w2(&x, &x).unwrap().primal_value.abs() < 1e-15);
    let a = sample_uniform(1, 2, 1).unwrap();
    let b = sample_uniform(1, 2, 2).unwrap();
    assert_eq!(bipartite_w2(&a, &b).unwrap().primal_value, dist2(a.points()[0], b.points()[0]));
    assert!(bipartite_w2(&x, &a).is_err());
    for rep in 0..3 {
        let x = sample_uniform(8, 3, rep).unwrap();
        let y = sample_uniform(8, 4, rep).unwrap();
        let costs: Vec<Vec<f64>> = x
            .points()
            .iter()
            .map(|&u| y.points().iter().map(|&v| dist2(u, v)).collect())
            .collect();
        let r = bipartite_w2(&x, &y).unwrap();
        assert!((r.primal_value - permutations_min(&costs) / 8.0).abs() < 1e-14);
        assert!(verify_optimality(&r, costs.as_slice()).passed);
    }
}

#[test]
fn one_dim_examples() {
    assert!((one_dim_w2(&[0.5]).unwrap() - 1.0 / 12.0).abs() < 1e-15);
    assert!(one_dim_w2(&[0.6, 0.2]).is_err());
    assert!(one_dim_w2(&[]).is_err());
    assert!(one_dim_w2(&[0.2, 1.0]).is_err());

    let mut rng = crate::torus::replicate_rng(99, 0);
    let reps = 20_000;
    let mut semi = Vec::with_capacity(reps);
    let mut bip = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut xs = [rng.gen::<f64>(), rng.gen::<f64>()];
        let mut ys = [rng.gen::<f64>(), rng.gen::<f64>()];
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        semi.push(one_dim_w2(&xs).unwrap());
        bip.push(one_dim_bipartite_w2(&xs, &ys).unwrap());
    }
    // order-statistic variances give 1/(6n) for the semi-discrete cost and
    // 1/(3(n+1)) for the bipartite one
    for (values, want) in [(semi, 1.0 / 12.0), (bip, 1.0 / 9.0)] {
        let mean = values.iter().sum::<f64>() / reps as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - want).abs() <= 3.0 * se, "{mean} ± {se} vs {want}");
    }
    assert!(one_dim_bipartite_w2(&[0.1], &[0.2, 0.3]).is_err());
    assert!((one_dim_bipartite_w2(&[0.1, 0.5], &[0.2, 0.9]).unwrap() - 0.085).abs() < 1e-15);
}

#[test]
fn one_dim_matches_discretised_transport() {
    let mut rng = crate::torus::replicate_rng(123, 0);
    let mut xs: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
    xs.sort_by(f64::total_cmp);
    let m = 2000;
    let grid: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect();
    let dense = DenseCost::from_fn(3, m, |i, j| (xs[i] - grid[j]).powi(2));
    let plan = network::solve_transportation(&dense, &[m as u64; 3], &vec![3; m]);
    let discrete: f64 = plan
        .flows
        .iter()
        .map(|&(i, j, u)| u as f64 * dense.get(i, j))
        .sum::<f64>()
        / (3.0 * m as f64);
    let exact = one_dim_w2(&xs).unwrap();
    assert!((exact - discrete).abs() < 2e-6, "{exact} vs {discrete}");
}

#[test]
fn verification_detects_perturbed_duals() {
    let sample = sample_uniform(6, 8, 0).unwrap();
    let costs = GridCost::new(&sample, 6).unwrap();
    let mut r = semidiscrete_w2(&sample, 6, SolveMethod::Exact).unwrap();
    assert!(verify_optimality(&r, &costs).passed);
    r.duals.phi[2] += 1e-3;
    let rep = verify_optimality(&r, &costs);
    assert!(!rep.passed);
    assert!((rep.worst_dual_violation - 1e-3).abs() < 1e-9, "{}", rep.worst_dual_violation);
}

#[test]
fn verification_passes_exactly_on_optimal_plans() {
    let mut rng = crate::torus::replicate_rng(55, 0);
    for case in 0..50 {
        let n = rng.gen_range(2..=6);
        let costs: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect();
        let best = permutations_min(&costs);
        let a = solve_assignment(&costs).unwrap();
        let mut r = assignment_result(a.clone(), n);
        if case % 2 == 1 {
            // swap two targets: the plan stays feasible and the duals certify
            // it only if the swap happens to be another optimum
            let (i, j) = (0, 1);
            let (ti, tj) = (r.coupling.entries[i].target, r.coupling.entries[j].target);
            r.coupling.entries[i].target = tj;
            r.coupling.entries[j].target = ti;
            r.primal_value = r.coupling.cost(costs.as_slice());
        }
        let total = r.coupling.cost(costs.as_slice()) * n as f64;
        let optimal = (total - best).abs() < 1e-12;
        assert_eq!(verify_optimality(&r, costs.as_slice()).passed, optimal, "case {case}");
    }
}

#[test]
fn translation_and_permutation_invariance() {
    let k = 16;
    let s = 1.0 / k as f64;
    for rep in 0..3 {
        let sample = sample_uniform(8, 21, rep).unwrap();
        let base = semidiscrete_w2(&sample, k, SolveMethod::Exact).unwrap();
        let moved = sample.translated(Displacement::new(3.0 * s, -5.0 * s));
        let shifted = semidiscrete_w2(&moved, k, SolveMethod::Exact).unwrap();
        assert!((base.primal_value - shifted.primal_value).abs() < 1e-9);
        let mut pts = sample.points().to_vec();
        pts.shuffle(&mut crate::torus::replicate_rng(1, rep));
        let shuffled = semidiscrete_w2(&SampleSet::from_points(pts).unwrap(), k, SolveMethod::Exact).unwrap();
        assert!((base.primal_value - shuffled.primal_value).abs() <= 1e-14 * base.primal_value);
    }
}

#[test]
fn bracket_tightens_as_the_grid_refines() {
    for rep in 0..10 {
        let sample = sample_uniform(8, 33, rep).unwrap();
        let brackets: Vec<(f64, f64)> = [8, 16, 32]
            .iter()
            .map(|&k| {
                let r = semidiscrete_w2(&sample, k, SolveMethod::Exact).unwrap();
                (r.lower_bound, r.upper_bound)
            })
            .collect();
        for w in brackets.windows(2) {
            assert!(w[1].0 >= w[0].0 - 1e-12, "lower {brackets:?}");
            assert!(w[1].1 <= w[0].1 + 1e-12, "upper {brackets:?}");
        }
    }
}

#[test]
fn approximate_brackets_at_moderate_scale() {
    for n in [64usize, 256] {
        let k = default_grid_k(n);
        let mut lowers = Vec::new();
        let mut uppers = Vec::new();
        for rep in 0..4 {
            let sample = sample_uniform(n, 44, rep).unwrap();
            let r = semidiscrete_w2(&sample, k, SolveMethod::CertifiedApproximate).unwrap();
            assert!(r.certified_gap() <= gap_target(n));
            assert!(r.lower_bound <= r.upper_bound);
            assert!(r.lower_bound <= r.primal_value + r.certified_gap());
            lowers.push(r.lower_bound);
            uppers.push(r.upper_bound);
        }
        let mean_lo = lowers.iter().sum::<f64>() / 4.0;
        let mean_hi = uppers.iter().sum::<f64>() / 4.0;
        assert!(mean_lo <= mean_hi);
        // bracket width in n-units stays well below the d_n acceptance band
        assert!(n as f64 * (mean_hi - mean_lo) < 0.5, "n={n}: {}", n as f64 * (mean_hi - mean_lo));
    }
}

#[test]
fn default_grid_and_gap_target() {
    assert_eq!(default_grid_k(64), 32);
    assert_eq!(default_grid_k(256), 64);
    assert_eq!(default_grid_k(1024), 128);
    assert_eq!(default_grid_k(2), 8);
    assert_eq!(default_grid_k(10), 16);
    let g = gap_target(1024);
    assert!((g - 0.02 * 1024f64.ln() / (4.0 * std::f64::consts::PI * 1024.0)).abs() < 1e-18);
    assert_eq!(gap_target(1), 1e-10);
}
