//! Geometry of the flat torus `(R/Z)^2`: points, minimal displacements,
//! uniform sampling and cell-centre grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

/// A point of the unit torus with both coordinates in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    u: f64,
    v: f64,
}

/// Minimal periodic representative of a difference of two torus points,
/// each component in `[-1/2, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub du: f64,
    pub dv: f64,
}

fn reduce_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid rounds tiny negative inputs up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

fn reduce_half(x: f64) -> f64 {
    let mut r = x - (x + 0.5).floor();
    if r >= 0.5 {
        r -= 1.0;
    } else if r < -0.5 {
        r += 1.0;
    }
    r
}

impl TorusPoint {
    /// Reduces an arbitrary finite pair modulo 1.
    pub fn wrap(u: f64, v: f64) -> Result<Self> {
        if !u.is_finite() || !v.is_finite() {
            return Err(invalid_input(format!("non-finite coordinates ({u}, {v})")));
        }
        Ok(Self::wrap_finite(u, v))
    }

    #[inline]
    pub(crate) fn wrap_finite(u: f64, v: f64) -> Self {
        Self {
            u: reduce_unit(u),
            v: reduce_unit(v),
        }
    }

    pub const ORIGIN: TorusPoint = TorusPoint { u: 0.0, v: 0.0 };

    #[inline]
    pub fn u(&self) -> f64 {
        self.u
    }

    #[inline]
    pub fn v(&self) -> f64 {
        self.v
    }

    #[inline]
    pub fn coords(&self) -> [f64; 2] {
        [self.u, self.v]
    }

    /// `self + d`, wrapped back onto the torus.
    #[inline]
    pub fn shifted(&self, d: Displacement) -> TorusPoint {
        Self::wrap_finite(self.u + d.du, self.v + d.dv)
    }

    /// The point `-self`.
    #[inline]
    pub fn negated(&self) -> TorusPoint {
        Self::wrap_finite(-self.u, -self.v)
    }
}

impl Displacement {
    #[inline]
    pub fn new(du: f64, dv: f64) -> Self {
        Self {
            du: reduce_half(du),
            dv: reduce_half(dv),
        }
    }

    #[inline]
    pub fn norm2(&self) -> f64 {
        self.du * self.du + self.dv * self.dv
    }

    #[inline]
    pub fn as_array(&self) -> [f64; 2] {
        [self.du, self.dv]
    }

    /// Componentwise scaling without re-canonicalisation.
    #[inline]
    pub fn scaled(&self, s: f64) -> Displacement {
        Displacement {
            du: self.du * s,
            dv: self.dv * s,
        }
    }
}

impl std::ops::Neg for Displacement {
    type Output = Displacement;
    fn neg(self) -> Displacement {
        Displacement::new(-self.du, -self.dv)
    }
}

/// Canonical representative of `b - a`.
#[inline]
pub fn displacement(a: TorusPoint, b: TorusPoint) -> Displacement {
    Displacement::new(b.u - a.u, b.v - a.v)
}

/// Squared geodesic distance on the torus.
#[inline]
pub fn dist2(a: TorusPoint, b: TorusPoint) -> f64 {
    displacement(a, b).norm2()
}

/// IID uniform points, reproducible from `(seed, replicate_index, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    points: Vec<TorusPoint>,
    seed: u64,
    replicate_index: u64,
}

impl SampleSet {
    /// Wraps explicit points. Provenance fields are zero.
    pub fn from_points(points: Vec<TorusPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid_input("a sample needs at least one point"));
        }
        Ok(Self {
            points,
            seed: 0,
            replicate_index: 0,
        })
    }

    pub fn points(&self) -> &[TorusPoint] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_index(&self) -> u64 {
        self.replicate_index
    }

    /// Same sample translated by `shift`; provenance is kept.
    pub fn translated(&self, shift: Displacement) -> SampleSet {
        SampleSet {
            points: self.points.iter().map(|p| p.shifted(shift)).collect(),
            ..self.clone()
        }
    }
}

/// Draws `n` IID uniform points.
///
/// The stream is ChaCha8 keyed by `seed` with stream id `replicate_index`, so
/// each replicate is a pure function of the pair and replicates can be
/// generated in any order.
pub fn sample_uniform(n: usize, seed: u64, replicate_index: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(invalid_input("sample size must be positive"));
    }
    let mut rng = replicate_rng(seed, replicate_index);
    let points = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            TorusPoint { u, v }
        })
        .collect();
    Ok(SampleSet {
        points,
        seed,
        replicate_index,
    })
}

/// Generator behind [`sample_uniform`], exposed for harness code that needs
/// extra per-replicate randomness (for example 1-D samples).
pub fn replicate_rng(seed: u64, replicate_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate_index);
    rng
}

/// Centres of the `K x K` uniform grid, row-major in the first coordinate.
pub fn grid_centers(k: usize) -> Result<Vec<TorusPoint>> {
    if k == 0 {
        return Err(invalid_input("grid resolution must be positive"));
    }
    let h = 1.0 / k as f64;
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push(TorusPoint {
                u: (i as f64 + 0.5) * h,
                v: (j as f64 + 0.5) * h,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(u: f64, v: f64) -> TorusPoint {
        TorusPoint::wrap(u, v).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(p(1.25, -0.5).coords(), [0.25, 0.5]);
        assert_eq!(p(0.0, 0.0).coords(), [0.0, 0.0]);
        let q = p(-0.1, 2.0);
        assert!((q.u() - 0.9).abs() < 1e-15);
        assert_eq!(q.v(), 0.0);
        assert!(TorusPoint::wrap(f64::NAN, 0.0).is_err());
        assert!(TorusPoint::wrap(0.0, f64::INFINITY).is_err());
        // would round to 1.0 without the guard
        let tiny = p(-1e-18, 0.0);
        assert!(tiny.u() < 1.0);
    }

    #[test]
    fn displacement_examples() {
        let d = displacement(p(0.9, 0.5), p(0.1, 0.5));
        assert!((d.du - 0.2).abs() < 1e-15 && d.dv == 0.0);
        assert_eq!(displacement(p(0.3, 0.7), p(0.3, 0.7)), Displacement::default());
        let tie = displacement(p(0.25, 0.0), p(0.75, 0.0));
        assert_eq!(tie.du, -0.5);
        assert_eq!(tie.dv, 0.0);
    }

    #[test]
    fn dist2_examples() {
        assert_eq!(dist2(p(0.1, 0.1), p(0.1, 0.1)), 0.0);
        assert!((dist2(p(0.9, 0.0), p(0.1, 0.0)) - 0.04).abs() < 1e-15);
        assert_eq!(dist2(p(0.25, 0.75), p(0.75, 0.25)), 0.5);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_uniform(100, 7, 3).unwrap();
        let b = sample_uniform(100, 7, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_uniform(100, 7, 4).unwrap();
        assert_ne!(a.points(), c.points());
        assert!(sample_uniform(0, 7, 3).is_err());
    }

    #[test]
    fn sample_mean_is_one_half() {
        let s = sample_uniform(100_000, 11, 0).unwrap();
        let mean = s.points().iter().map(|p| p.u()).sum::<f64>() / 1e5;
        // sd of Uniform(0,1) is 1/sqrt(12)
        let se = (1.0f64 / 12.0).sqrt() / (1e5f64).sqrt();
        assert!((se - 0.000913).abs() < 1e-6);
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn occupancy_chi_square() {
        let s = sample_uniform(100_000, 2024, 1).unwrap();
        let mut counts = [0usize; 16];
        for q in s.points() {
            let i = (q.u() * 4.0) as usize;
            let j = (q.v() * 4.0) as usize;
            counts[i * 4 + j] += 1;
        }
        let expected = 100_000.0 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // upper 1e-6 quantile of chi-square with 15 degrees of freedom
        assert!(chi2 < 56.49, "chi2 = {chi2}");
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid_centers(1).unwrap(), vec![p(0.5, 0.5)]);
        let g2 = grid_centers(2).unwrap();
        assert_eq!(g2.len(), 4);
        assert!(g2
            .iter()
            .all(|q| [0.25, 0.75].contains(&q.u()) && [0.25, 0.75].contains(&q.v())));
        assert_eq!(g2[1].coords(), [0.25, 0.75]);
        for k in [1, 3, 8, 17] {
            let g = grid_centers(k).unwrap();
            let mu = g.iter().map(|q| q.u()).sum::<f64>() / g.len() as f64;
            let mv = g.iter().map(|q| q.v()).sum::<f64>() / g.len() as f64;
            assert!((mu - 0.5).abs() < 1e-12 && (mv - 0.5).abs() < 1e-12);
        }
        assert!(grid_centers(0).is_err());
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let s = sample_uniform(3000, 5, 0).unwrap();
        for t in s.points().chunks(3) {
            let (a, b, c) = (t[0], t[1], t[2]);
            let ab = dist2(a, b).sqrt();
            let bc = dist2(b, c).sqrt();
            let ac = dist2(a, c).sqrt();
            assert!(ac <= ab + bc + 1e-15);
        }
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(u in -1e3f64..1e3, v in -1e3f64..1e3) {
            let a = p(u, v);
            let b = p(a.u(), a.v());
            prop_assert_eq!(a, b);
            prop_assert!((0.0..1.0).contains(&a.u()) && (0.0..1.0).contains(&a.v()));
        }

        #[test]
        fn displacement_is_canonical_and_antisymmetric(
            au in 0f64..1.0, av in 0f64..1.0, bu in 0f64..1.0, bv in 0f64..1.0
        ) {
            let (a, b) = (p(au, av), p(bu, bv));
            let d = displacement(a, b);
            prop_assert!((-0.5..0.5).contains(&d.du) && (-0.5..0.5).contains(&d.dv));
            prop_assert!(d.norm2() <= 0.5);
            let e = displacement(b, a);
            if d.du != -0.5 && d.dv != -0.5 {
                prop_assert_eq!(d.du, -e.du);
                prop_assert_eq!(d.dv, -e.dv);
            }
            prop_assert_eq!(dist2(a, b), dist2(b, a));
            // b is recovered from a by the displacement
            let back = displacement(a.shifted(d), b);
            prop_assert!(back.norm2() < 1e-28);
        }
    }
}
