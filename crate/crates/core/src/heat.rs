//! Heat kernel `p_t` of the torus and the regularised Green's function
//! `q_t = ∫_t^∞ (p_s - 1) ds` together with its gradient.
//!
//! `q_t` has the Fourier series `Σ_{k≠0} w_k(t) e^{2πi k·y}` with
//! `w_k(t) = exp(-4π²|k|²t) / (4π²|k|²)`, obtained by integrating each heat
//! mode over `[t, ∞)`. Only the half plane of frequencies is stored; the
//! partner `-k` has the same weight.

use std::f64::consts::PI;

use crate::error::{invalid_input, Result};
use crate::torus::{displacement, TorusPoint};

pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;

const FOUR_PI2: f64 = 4.0 * PI * PI;

/// Time above which `p_t` is summed in Fourier space.
pub const DUAL_SUM_CROSSOVER: f64 = 1.0 / (2.0 * PI);

/// Truncation radius of the mode sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCutoff {
    pub tail_tolerance: f64,
    pub kmax: usize,
}

impl SpectralCutoff {
    /// `kmax = ceil(sqrt(ln(w_peak / tol) / (4π² t))) + 2` with `w_peak = 1/(4π²)`.
    pub fn for_time(t: f64, tail_tolerance: f64) -> Result<Self> {
        check_time(t)?;
        if !(tail_tolerance > 0.0 && tail_tolerance < 1.0) {
            return Err(invalid_input(format!(
                "tail tolerance must lie in (0, 1), got {tail_tolerance}"
            )));
        }
        Ok(Self {
            tail_tolerance,
            kmax: cutoff_radius(t, (1.0 / FOUR_PI2) / tail_tolerance),
        })
    }
}

fn cutoff_radius(t: f64, ratio: f64) -> usize {
    let r = (ratio.ln().max(0.0) / (FOUR_PI2 * t)).sqrt().ceil();
    r as usize + 2
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid_input(format!("diffusion time must be positive, got {t}")))
    }
}

/// Weight of the `q_t` series at `|k|² = k2`.
#[inline]
pub fn mode_weight(k2: f64, t: f64) -> f64 {
    (-FOUR_PI2 * k2 * t).exp() / (FOUR_PI2 * k2)
}

/// A half-plane frequency `(kx, ky)` with `kx > 0`, or `kx = 0, ky > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub kx: i32,
    pub ky: i32,
    pub weight: f64,
}

impl Mode {
    #[inline]
    pub fn k2(&self) -> f64 {
        (self.kx * self.kx + self.ky * self.ky) as f64
    }
}

/// Half-plane frequencies `0 < |k| <= kmax`.
pub(crate) fn half_plane_modes(kmax: usize) -> Vec<(i32, i32)> {
    let km = kmax as i32;
    let mut out = Vec::new();
    for kx in 0..=km {
        for ky in -km..=km {
            if (kx == 0 && ky <= 0) || kx * kx + ky * ky > km * km {
                continue;
            }
            out.push((kx, ky));
        }
    }
    out
}

/// Phase factors `e^{2πi k x}` for `k = 0..=kmax`.
pub(crate) struct PhaseTable {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl PhaseTable {
    pub(crate) fn new(x: f64, kmax: usize) -> Self {
        let mut re = Vec::with_capacity(kmax + 1);
        let mut im = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let (s, c) = (2.0 * PI * (k as f64 * x).fract()).sin_cos();
            re.push(c);
            im.push(s);
        }
        Self { re, im }
    }

    /// `(cos, sin)` of `2π (kx·u + ky·v)` from the tables of `u` and `v`.
    #[inline]
    pub(crate) fn combine(tu: &PhaseTable, tv: &PhaseTable, kx: i32, ky: i32) -> (f64, f64) {
        let (ar, ai) = (tu.re[kx as usize], tu.im[kx as usize]);
        let (br, bi) = if ky >= 0 {
            (tv.re[ky as usize], tv.im[ky as usize])
        } else {
            (tv.re[(-ky) as usize], -tv.im[(-ky) as usize])
        };
        (ar * br - ai * bi, ar * bi + ai * br)
    }
}

/// Truncated spectral representation of `q_t` at a fixed time.
#[derive(Debug, Clone)]
pub struct HeatEvaluator {
    t: f64,
    cutoff: SpectralCutoff,
    modes: Vec<Mode>,
}

impl HeatEvaluator {
    pub fn new(t: f64) -> Result<Self> {
        Self::with_tolerance(t, DEFAULT_TAIL_TOLERANCE)
    }

    pub fn with_tolerance(t: f64, tail_tolerance: f64) -> Result<Self> {
        let cutoff = SpectralCutoff::for_time(t, tail_tolerance)?;
        let modes = half_plane_modes(cutoff.kmax)
            .into_iter()
            .map(|(kx, ky)| Mode {
                kx,
                ky,
                weight: mode_weight((kx * kx + ky * ky) as f64, t),
            })
            .collect();
        Ok(Self { t, cutoff, modes })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn cutoff(&self) -> SpectralCutoff {
        self.cutoff
    }

    pub fn kmax(&self) -> usize {
        self.cutoff.kmax
    }

    /// Stored half-plane modes.
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// `w_k` for any integer frequency, zero for `k = 0` or outside the cutoff.
    pub fn weight(&self, kx: i32, ky: i32) -> f64 {
        let k2 = kx * kx + ky * ky;
        let km = self.cutoff.kmax as i32;
        if k2 == 0 || k2 > km * km {
            0.0
        } else {
            mode_weight(k2 as f64, self.t)
        }
    }

    fn tables(&self, y: TorusPoint) -> (PhaseTable, PhaseTable) {
        (
            PhaseTable::new(y.u(), self.cutoff.kmax),
            PhaseTable::new(y.v(), self.cutoff.kmax),
        )
    }

    /// `q_t(y)`.
    pub fn q_value(&self, y: TorusPoint) -> f64 {
        let (tu, tv) = self.tables(y);
        let mut acc = 0.0;
        for m in &self.modes {
            let (c, _) = PhaseTable::combine(&tu, &tv, m.kx, m.ky);
            acc += m.weight * c;
        }
        2.0 * acc
    }

    /// `∇q_t(y) = -Σ w_k 2πk sin(2π k·y)`.
    pub fn q_grad(&self, y: TorusPoint) -> [f64; 2] {
        let (tu, tv) = self.tables(y);
        let (mut gx, mut gy) = (0.0, 0.0);
        for m in &self.modes {
            let (_, s) = PhaseTable::combine(&tu, &tv, m.kx, m.ky);
            let a = m.weight * s;
            gx += a * m.kx as f64;
            gy += a * m.ky as f64;
        }
        [-4.0 * PI * gx, -4.0 * PI * gy]
    }

    /// `q_t(0) - q_t(y)` summed termwise, hence never negative.
    pub fn q_increment(&self, y: TorusPoint) -> f64 {
        let (tu, tv) = self.tables(y);
        let mut acc = 0.0;
        for m in &self.modes {
            let (c, _) = PhaseTable::combine(&tu, &tv, m.kx, m.ky);
            acc += m.weight * (1.0 - c);
        }
        2.0 * acc
    }

    /// `q_t(0)`.
    pub fn q_at_origin(&self) -> f64 {
        2.0 * self.modes.iter().map(|m| m.weight).sum::<f64>()
    }
}

/// Heat kernel by dual summation: Fourier series above
/// [`DUAL_SUM_CROSSOVER`], Gaussian images below.
pub fn heat_kernel(t: f64, x: TorusPoint) -> Result<f64> {
    check_time(t)?;
    if t >= DUAL_SUM_CROSSOVER {
        heat_kernel_fourier(t, x, DEFAULT_TAIL_TOLERANCE)
    } else {
        heat_kernel_images(t, x)
    }
}

/// `p_t(x) = 1 + Σ_{k≠0} exp(-4π²|k|²t) cos(2π k·x)`.
pub fn heat_kernel_fourier(t: f64, x: TorusPoint, tail_tolerance: f64) -> Result<f64> {
    check_time(t)?;
    let kmax = cutoff_radius(t, 1.0 / tail_tolerance);
    let tu = PhaseTable::new(x.u(), kmax);
    let tv = PhaseTable::new(x.v(), kmax);
    let mut acc = 0.0;
    for (kx, ky) in half_plane_modes(kmax) {
        let (c, _) = PhaseTable::combine(&tu, &tv, kx, ky);
        acc += (-FOUR_PI2 * (kx * kx + ky * ky) as f64 * t).exp() * c;
    }
    Ok(1.0 + 2.0 * acc)
}

/// `p_t(x) = Σ_m (4πt)^{-1} exp(-|x + m|² / 4t)` over images `|m_i| <= M`.
///
/// `M` is at least 3 and grows with `t` so that the first omitted image
/// shell stays below `e^{-40}` of the peak.
pub fn heat_kernel_images(t: f64, x: TorusPoint) -> Result<f64> {
    check_time(t)?;
    let d = displacement(TorusPoint::ORIGIN, x);
    let reach = ((4.0 * t * 40.0).sqrt() - 0.5).ceil().max(3.0) as i32;
    let mut acc = 0.0;
    for mx in -reach..=reach {
        let a = d.du + mx as f64;
        for my in -reach..=reach {
            let b = d.dv + my as f64;
            acc += (-(a * a + b * b) / (4.0 * t)).exp();
        }
    }
    Ok(acc / (4.0 * PI * t))
}

/// `q_t(y)` with a fresh evaluator.
pub fn q_value(t: f64, y: TorusPoint) -> Result<f64> {
    Ok(HeatEvaluator::new(t)?.q_value(y))
}

/// `∇q_t(y)` with a fresh evaluator.
pub fn q_grad(t: f64, y: TorusPoint) -> Result<[f64; 2]> {
    Ok(HeatEvaluator::new(t)?.q_grad(y))
}

/// Exact `n·E|∇f_{n,t}(0) - ∇f_{n,t}(y)|² = 2 (q_{2t}(0) - q_{2t}(y))`.
pub fn covariance_closed_form(t: f64, y: TorusPoint) -> Result<f64> {
    let ev = HeatEvaluator::new(2.0 * t)?;
    Ok(2.0 * ev.q_increment(y))
}

/// Exact `n·E ∫_T |∇f_{n,t}|² = q_{2t}(0)`.
pub fn field_energy_closed_form(t: f64) -> Result<f64> {
    Ok(HeatEvaluator::new(2.0 * t)?.q_at_origin())
}

/// Number of radii and of angles used by [`sup_grad_q`].
pub const SUP_SAMPLING: usize = 64;

/// `max |∇q_{2t}|` over a polar sampling of the ball of radius `r` at the origin.
pub fn sup_grad_q(t: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 0.5) {
        return Err(invalid_input(format!("radius must lie in (0, 1/2], got {r}")));
    }
    let ev = HeatEvaluator::new(2.0 * t)?;
    let mut best = 0.0f64;
    for i in 1..=SUP_SAMPLING {
        let rho = r * i as f64 / SUP_SAMPLING as f64;
        for j in 0..SUP_SAMPLING {
            let theta = 2.0 * PI * j as f64 / SUP_SAMPLING as f64;
            let y = TorusPoint::wrap_finite(rho * theta.cos(), rho * theta.sin());
            let g = ev.q_grad(y);
            best = best.max(g[0].hypot(g[1]));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{grid_centers, sample_uniform};

    fn p(u: f64, v: f64) -> TorusPoint {
        TorusPoint::wrap(u, v).unwrap()
    }

    /// Adaptive Simpson on `[a, b]`.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    /// Image sum with a generous fixed reach, independent of the library routine.
    fn p_images_oracle(s: f64, d: [f64; 2]) -> f64 {
        let reach = ((4.0 * s * 60.0).sqrt().ceil() as i32).max(4);
        let mut acc = 0.0;
        for mx in -reach..=reach {
            for my in -reach..=reach {
                let a = d[0] + mx as f64;
                let b = d[1] + my as f64;
                acc += (-(a * a + b * b) / (4.0 * s)).exp();
            }
        }
        acc / (4.0 * PI * s)
    }

    #[test]
    fn heat_kernel_examples() {
        for q in [p(0.0, 0.0), p(0.3, 0.8), p(0.5, 0.5)] {
            assert!((heat_kernel(10.0, q).unwrap() - 1.0).abs() < 1e-12);
        }
        let grid = grid_centers(64).unwrap();
        let mean = grid.iter().map(|&x| heat_kernel(0.05, x).unwrap()).sum::<f64>() / grid.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9, "mass {mean}");
        let t = 0.001;
        let peak = heat_kernel(t, TorusPoint::ORIGIN).unwrap();
        let target = 1.0 / (4.0 * PI * t);
        assert!((target - 79.577).abs() < 1e-3);
        assert!(((peak - target) / target).abs() < 1e-6);
        assert!(heat_kernel(0.0, TorusPoint::ORIGIN).is_err());
        assert!(heat_kernel(-1.0, TorusPoint::ORIGIN).is_err());
    }

    #[test]
    fn dual_summation_agrees_at_crossover() {
        let s = sample_uniform(100, 3, 0).unwrap();
        for &x in s.points() {
            let a = heat_kernel_fourier(DUAL_SUM_CROSSOVER, x, DEFAULT_TAIL_TOLERANCE).unwrap();
            let b = heat_kernel_images(DUAL_SUM_CROSSOVER, x).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn q_is_mean_zero_and_even() {
        let ev = HeatEvaluator::new(0.02).unwrap();
        let grid = grid_centers(128).unwrap();
        let mean = grid.iter().map(|&x| ev.q_value(x)).sum::<f64>() / grid.len() as f64;
        assert!(mean.abs() < 1e-9);
        let s = sample_uniform(100, 4, 0).unwrap();
        for &y in s.points() {
            let a = ev.q_value(y);
            let b = ev.q_value(y.negated());
            assert!((a - b).abs() < 1e-12);
            let ga = ev.q_grad(y);
            let gb = ev.q_grad(y.negated());
            assert!((ga[0] + gb[0]).abs() < 1e-10 && (ga[1] + gb[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn q_at_origin_matches_time_integral_of_heat_kernel() {
        let t = 0.02;
        let integrand = |s: f64| p_images_oracle(s, [0.0, 0.0]) - 1.0;
        // p_s - 1 < 5 exp(-4π² s): negligible past s = 1.
        let mut oracle = 0.0;
        let cuts = [t, 0.05, 0.1, 0.2, 0.4, 1.0];
        for w in cuts.windows(2) {
            oracle += simpson(&integrand, w[0], w[1], 1e-13);
        }
        let value = q_value(t, TorusPoint::ORIGIN).unwrap();
        assert!((value - oracle).abs() < 1e-8, "{value} vs {oracle}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ev = HeatEvaluator::new(0.01).unwrap();
        let y = p(0.13, 0.27);
        let h = 1e-5;
        let fd = [
            (ev.q_value(p(0.13 + h, 0.27)) - ev.q_value(p(0.13 - h, 0.27))) / (2.0 * h),
            (ev.q_value(p(0.13, 0.27 + h)) - ev.q_value(p(0.13, 0.27 - h))) / (2.0 * h),
        ];
        let g = ev.q_grad(y);
        assert!((g[0] - fd[0]).abs() < 1e-6 && (g[1] - fd[1]).abs() < 1e-6, "{g:?} {fd:?}");
        assert_eq!(ev.q_grad(TorusPoint::ORIGIN), [0.0, 0.0]);
    }

    #[test]
    fn weights_satisfy_laplacian_and_semigroup_identities() {
        let ev = HeatEvaluator::new(0.013).unwrap();
        for m in ev.modes() {
            let lhs = FOUR_PI2 * m.k2() * m.weight;
            let rhs = (-FOUR_PI2 * m.k2() * ev.t()).exp();
            assert!(((lhs - rhs) / rhs).abs() < 1e-14);
            assert_eq!(ev.weight(m.kx, m.ky), ev.weight(-m.kx, -m.ky));
            assert!(m.weight > 0.0);
        }
        let mut rng = crate::torus::replicate_rng(9, 0);
        use rand::Rng;
        for _ in 0..100 {
            let k2 = rng.gen_range(1..100) as f64;
            let s: f64 = rng.gen_range(1e-4..0.02);
            let t: f64 = rng.gen_range(1e-4..0.02);
            let lhs = mode_weight(k2, t) * FOUR_PI2 * k2 * (-FOUR_PI2 * k2 * s).exp();
            let rhs = mode_weight(k2, t + s) * FOUR_PI2 * k2;
            assert!(((lhs - rhs) / rhs).abs() < 1e-13, "{lhs} {rhs}");
            assert!(rhs > 0.0);
        }
    }

    #[test]
    fn cutoff_covers_the_disk() {
        let ev = HeatEvaluator::new(1.0 / 4096.0).unwrap();
        assert!(ev.kmax() <= 60);
        let km = ev.kmax() as i32;
        // half-plane count of the lattice disk: (count of full disk - 1)/2
        let mut full = 0;
        for kx in -km..=km {
            for ky in -km..=km {
                if kx * kx + ky * ky <= km * km {
                    full += 1;
                }
            }
        }
        assert_eq!(ev.modes().len(), (full - 1) / 2);
        // tail bound: first omitted shell is below tolerance
        let first_out = mode_weight(((km + 1) * (km + 1)) as f64, ev.t());
        assert!(first_out < DEFAULT_TAIL_TOLERANCE);
    }

    #[test]
    fn covariance_closed_form_examples() {
        assert_eq!(covariance_closed_form(0.01, TorusPoint::ORIGIN).unwrap(), 0.0);
        let s = sample_uniform(50, 8, 0).unwrap();
        for &y in s.points() {
            assert!(covariance_closed_form(5.0, y).unwrap() <= 1e-8);
            let c = covariance_closed_form(0.01, y).unwrap();
            assert!(c >= 0.0);
            let ev = HeatEvaluator::new(0.02).unwrap();
            let direct = 2.0 * (ev.q_at_origin() - ev.q_value(y));
            assert!((c - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn field_energy_examples() {
        let ts = [0.001, 0.01, 0.1, 1.0];
        let vals: Vec<f64> = ts.iter().map(|&t| field_energy_closed_form(t).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]), "{vals:?}");
        assert!(field_energy_closed_form(20.0).unwrap() < 1e-12);
        for i in 0..=20 {
            let t = 10f64.powf(-4.0 + 2.0 * i as f64 / 20.0);
            let diff = field_energy_closed_form(t).unwrap() - (1.0 / t).ln() / (4.0 * PI);
            assert!(diff.abs() <= 0.5, "t={t} diff={diff}");
        }
    }

    #[test]
    fn sup_gradient_examples() {
        let t = 0.01;
        let radii = [0.01, 0.05, 0.1, 0.25, 0.5];
        let sups: Vec<f64> = radii.iter().map(|&r| sup_grad_q(t, r).unwrap()).collect();
        assert!(sups.windows(2).all(|w| w[0] <= w[1]), "{sups:?}");
        assert!(sup_grad_q(t, 1e-9).unwrap() <= 1e-6);
        assert!(sup_grad_q(t, 0.0).is_err());
        assert!(sup_grad_q(t, 0.6).is_err());
    }

    #[test]
    fn sup_gradient_scales_like_inverse_root_time() {
        let scaled = |t: f64| t.sqrt() * sup_grad_q(t, 0.5).unwrap();
        let small: Vec<f64> = [1e-4, 1e-3, 1e-2].iter().map(|&t| scaled(t)).collect();
        let hi = small.iter().cloned().fold(f64::MIN, f64::max);
        let lo = small.iter().cloned().fold(f64::MAX, f64::min);
        assert!(hi / lo <= 10.0, "{small:?}");
        // at t = 0.1 the field is already exponentially flat: the bound is one-sided
        assert!(scaled(0.1) <= hi);
    }
}
