//! Straight-line trajectories between the Lebesgue side and the atoms of a
//! transport plan, and the functionals integrated along them.
//!
//! A plan entry pairs an atom `x` with a grid cell represented by its centre
//! `y`. The trajectory is `X_s = y + s·d` with `d = displacement(y, x)`, so
//! `X_0 = y` and `X_1 = x`, and its velocity is the constant `d`.

use serde::{Deserialize, Serialize};

use crate::ansatz::{GradientField, PotentialField};
use crate::error::{invalid_input, Result};
use crate::numeric::{gauss_legendre, NeumaierSum};
use crate::torus::{displacement, grid_centers, Displacement, SampleSet, TorusPoint};
use crate::transport::TransportResult;

/// Default number of Gauss–Legendre nodes on `[0, 1]`.
pub const DEFAULT_QUAD_NODES: usize = 32;

/// Positive weights on increasing nodes in `[0, 1]`, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(invalid_input("quadrature needs matching, non-empty nodes and weights"));
        }
        if nodes.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(invalid_input("quadrature nodes must lie in [0, 1]"));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_input("quadrature nodes must be strictly increasing"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid_input("quadrature weights must be positive"));
        }
        let total: NeumaierSum = weights.iter().copied().collect();
        if (total.value() - 1.0).abs() > 1e-12 {
            return Err(invalid_input(format!("quadrature weights sum to {}", total.value())));
        }
        Ok(Self { nodes, weights })
    }

    /// Gauss–Legendre rule with `order` nodes, mapped to `[0, 1]`.
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid_input("quadrature order must be positive"));
        }
        let (x, w) = gauss_legendre(order);
        let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(w).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, mut weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        // absorb the last ulps of rounding so the weights sum to one
        let total: NeumaierSum = weights.iter().copied().collect();
        weights.iter_mut().for_each(|w| *w /= total.value());
        Self::new(nodes, weights)
    }

    /// The single node `s = 1` with unit weight.
    pub fn endpoint() -> Self {
        Self {
            nodes: vec![1.0],
            weights: vec![1.0],
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(DEFAULT_QUAD_NODES).expect("default order is valid")
    }
}

/// `X_s = wrap(y + s·displacement(y, x))`; `X_0 = y` and `X_1 = x` exactly.
pub fn trajectory_point(x: TorusPoint, y: TorusPoint, s: f64) -> Result<TorusPoint> {
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid_input(format!("trajectory parameter {s} is outside [0, 1]")));
    }
    Ok(point_along(x, y, displacement(y, x), s))
}

fn point_along(x: TorusPoint, y: TorusPoint, d: Displacement, s: f64) -> TorusPoint {
    if s == 0.0 {
        y
    } else if s == 1.0 {
        x
    } else {
        y.shifted(d.scaled(s))
    }
}

/// One piece of a plan: `mass` moving between a Lebesgue-side point and an atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportPair {
    pub atom: TorusPoint,
    pub point: TorusPoint,
    pub mass: f64,
}

impl TransportPair {
    /// Constant velocity `displacement(point, atom)`.
    pub fn velocity(&self) -> Displacement {
        displacement(self.point, self.atom)
    }
}

/// Resolves a grid plan into atom / cell-centre pairs.
pub fn coupling_pairs(result: &TransportResult, sample: &SampleSet, k: usize) -> Result<Vec<TransportPair>> {
    let plan = &result.coupling;
    if plan.n_sources != sample.n() {
        return Err(invalid_input(format!(
            "plan has {} sources but the sample has {} points",
            plan.n_sources,
            sample.n()
        )));
    }
    let centers = grid_centers(k)?;
    if plan.n_targets != centers.len() {
        return Err(invalid_input(format!(
            "plan has {} targets, expected {} cells",
            plan.n_targets,
            centers.len()
        )));
    }
    Ok(plan
        .entries
        .iter()
        .map(|e| TransportPair {
            atom: sample.points()[e.source],
            point: centers[e.target],
            mass: e.mass,
        })
        .collect())
}

fn norm2(a: [f64; 2]) -> f64 {
    a[0] * a[0] + a[1] * a[1]
}

fn diff(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// All trajectory functionals of one plan, from a single pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryValues {
    /// `Σ mass |d - ∇f(x)|²`.
    pub defect_endpoint: f64,
    /// `Σ mass ∫ |d - ∇f(X_s)|² ds`.
    pub defect_along: f64,
    /// `Σ mass ∫ |∇f(X_s)|² ds`.
    pub energy_along: f64,
    /// `Σ mass ∫ |∇f(X_1) - ∇f(X_s)|² ds`.
    pub gradient_variation: f64,
    /// `Σ mass |d|²`.
    pub kinetic: f64,
}

pub fn trajectory_values(field: &impl GradientField, pairs: &[TransportPair], quad: &QuadratureRule) -> TrajectoryValues {
    let mut endpoint = NeumaierSum::default();
    let mut along = NeumaierSum::default();
    let mut energy = NeumaierSum::default();
    let mut variation = NeumaierSum::default();
    let mut kinetic = NeumaierSum::default();
    for pair in pairs {
        let d = pair.velocity();
        let v = d.as_array();
        let g1 = field.grad(pair.atom);
        endpoint.add(pair.mass * norm2(diff(v, g1)));
        kinetic.add(pair.mass * d.norm2());
        let (mut a, mut e, mut w) = (0.0, 0.0, 0.0);
        for (&s, &weight) in quad.nodes().iter().zip(quad.weights()) {
            let g = field.grad(point_along(pair.atom, pair.point, d, s));
            a += weight * norm2(diff(v, g));
            e += weight * norm2(g);
            w += weight * norm2(diff(g1, g));
        }
        along.add(pair.mass * a);
        energy.add(pair.mass * e);
        variation.add(pair.mass * w);
    }
    TrajectoryValues {
        defect_endpoint: endpoint.value(),
        defect_along: along.value(),
        energy_along: energy.value(),
        gradient_variation: variation.value(),
        kinetic: kinetic.value(),
    }
}

/// `Σ mass |displacement(y_cell, x) - ∇f(x)|²` over a grid plan.
pub fn defect_endpoint(field: &impl GradientField, result: &TransportResult, sample: &SampleSet, k: usize) -> Result<f64> {
    let pairs = coupling_pairs(result, sample, k)?;
    Ok(trajectory_values(field, &pairs, &QuadratureRule::endpoint()).defect_endpoint)
}

/// `Σ mass Σ_quad w |d - ∇f(X_s)|²` over a grid plan.
pub fn defect_along(
    field: &impl GradientField,
    result: &TransportResult,
    sample: &SampleSet,
    k: usize,
    quad: &QuadratureRule,
) -> Result<f64> {
    let pairs = coupling_pairs(result, sample, k)?;
    Ok(trajectory_values(field, &pairs, quad).defect_along)
}

/// `Σ mass Σ_quad w |∇f(X_s)|²` over a grid plan.
pub fn energy_along(
    field: &impl GradientField,
    result: &TransportResult,
    sample: &SampleSet,
    k: usize,
    quad: &QuadratureRule,
) -> Result<f64> {
    let pairs = coupling_pairs(result, sample, k)?;
    Ok(trajectory_values(field, &pairs, quad).energy_along)
}

/// `Σ mass Σ_quad w |∇f(X_1) - ∇f(X_s)|²` over a grid plan.
pub fn gradient_variation(
    field: &impl GradientField,
    result: &TransportResult,
    sample: &SampleSet,
    k: usize,
    quad: &QuadratureRule,
) -> Result<f64> {
    let pairs = coupling_pairs(result, sample, k)?;
    Ok(trajectory_values(field, &pairs, quad).gradient_variation)
}

/// `|Σ_quad w d·∇f(X_s) - (f(x) - f(y))|`: the line integral of the gradient
/// against the change in potential.
pub fn gradient_flow_identity_check(field: &impl PotentialField, x: TorusPoint, y: TorusPoint, quad: &QuadratureRule) -> f64 {
    let d = displacement(y, x);
    let line: NeumaierSum = quad
        .nodes()
        .iter()
        .zip(quad.weights())
        .map(|(&s, &w)| {
            let g = field.grad(point_along(x, y, d, s));
            w * (d.du * g[0] + d.dv * g[1])
        })
        .collect();
    (line.value() - (field.value(x) - field.value(y))).abs()
}
