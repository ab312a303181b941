//! The linearisation field `f_{n,t}` solving `-Δf = p_t * (μ_n - 1)`.
//!
//! Two evaluation routes are provided. [`AnsatzField`] sums `∇q_t(X_i - y)`
//! over the sample directly and is exact to spectral tolerance.
//! [`GridField`] stores the Fourier coefficients
//! `f̂(k) = μ̂_n(k) exp(-4π²|k|²t) / (4π²|k|²)`, synthesises the field and its
//! derivatives on a `K x K` node grid and interpolates off the grid with
//! bicubic Hermite patches. The grid route is what the trajectory functionals
//! use in their inner loops.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid_config, invalid_input, Result};
use crate::heat::{half_plane_modes, mode_weight, HeatEvaluator, PhaseTable, SpectralCutoff, DEFAULT_TAIL_TOLERANCE};
use crate::torus::{displacement, SampleSet, TorusPoint};

const FOUR_PI2: f64 = 4.0 * PI * PI;

/// Default grid resolution; enough for `t >= 1/4096`.
pub const DEFAULT_GRID_K: usize = 256;

/// A vector field on the torus that can be sampled pointwise.
pub trait GradientField {
    fn grad(&self, y: TorusPoint) -> [f64; 2];
}

/// A scalar potential together with its gradient.
pub trait PotentialField: GradientField {
    fn value(&self, y: TorusPoint) -> f64;
}

/// Empirical Fourier coefficients `μ̂(k) = (1/n) Σ_i exp(-2πi k·X_i)` on the
/// given half-plane frequencies, as `(re, im)`.
pub fn empirical_coefficients(sample: &SampleSet, modes: &[(i32, i32)], kmax: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); modes.len()];
    for x in sample.points() {
        let tu = PhaseTable::new(x.u(), kmax);
        let tv = PhaseTable::new(x.v(), kmax);
        for (a, &(kx, ky)) in acc.iter_mut().zip(modes) {
            let (c, s) = PhaseTable::combine(&tu, &tv, kx, ky);
            a.re += c;
            a.im -= s;
        }
    }
    let inv_n = 1.0 / sample.n() as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    acc
}

/// Direct-summation form of the field.
#[derive(Debug, Clone)]
pub struct AnsatzField<'a> {
    sample: &'a SampleSet,
    t: f64,
    evaluator: HeatEvaluator,
}

impl<'a> AnsatzField<'a> {
    /// Field at time `t >= 1/n`.
    pub fn new(sample: &'a SampleSet, t: f64) -> Result<Self> {
        let floor = 1.0 / sample.n() as f64;
        if t < floor {
            return Err(invalid_input(format!(
                "regularisation time {t} is below the matching scale 1/n = {floor}"
            )));
        }
        Self::new_unrestricted(sample, t)
    }

    /// Field at any positive time, bypassing the `t >= 1/n` regime check.
    pub fn new_unrestricted(sample: &'a SampleSet, t: f64) -> Result<Self> {
        Ok(Self {
            sample,
            t,
            evaluator: HeatEvaluator::new(t)?,
        })
    }

    /// Same field with a different spectral tail tolerance.
    pub fn with_tolerance(self, tail_tolerance: f64) -> Result<Self> {
        Ok(Self {
            evaluator: HeatEvaluator::with_tolerance(self.t, tail_tolerance)?,
            ..self
        })
    }

    pub fn sample(&self) -> &SampleSet {
        self.sample
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn evaluator(&self) -> &HeatEvaluator {
        &self.evaluator
    }

    /// `∇f(y) = (1/n) Σ_i ∇q_t(y - X_i)`.
    ///
    /// `q_t` is even, so this is the gradient of [`Self::f_value`]; it points
    /// towards the atoms. Written with the argument `X_i - y` the sum carries
    /// an overall minus sign.
    pub fn grad_f_direct(&self, y: TorusPoint) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for &x in self.sample.points() {
            let d = displacement(x, y);
            let gi = self.evaluator.q_grad(TorusPoint::wrap_finite(d.du, d.dv));
            g[0] += gi[0];
            g[1] += gi[1];
        }
        let inv_n = 1.0 / self.sample.n() as f64;
        [g[0] * inv_n, g[1] * inv_n]
    }

    /// `f(y) = (1/n) Σ_i q_t(X_i - y)`.
    pub fn f_value(&self, y: TorusPoint) -> f64 {
        let sum: f64 = self
            .sample
            .points()
            .iter()
            .map(|&x| {
                let d = displacement(y, x);
                self.evaluator.q_value(TorusPoint::wrap_finite(d.du, d.dv))
            })
            .sum();
        sum / self.sample.n() as f64
    }
}

impl GradientField for AnsatzField<'_> {
    fn grad(&self, y: TorusPoint) -> [f64; 2] {
        self.grad_f_direct(y)
    }
}

impl PotentialField for AnsatzField<'_> {
    fn value(&self, y: TorusPoint) -> f64 {
        self.f_value(y)
    }
}

/// Grid slots: the field and the derivatives needed for Hermite patches.
#[derive(Debug, Clone, Copy)]
enum Slot {
    F = 0,
    Fu,
    Fv,
    Fuu,
    Fuv,
    Fvv,
    Fuuv,
    Fuvv,
}

const SLOT_ORDERS: [(u32, u32); 8] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1), (1, 2)];

/// Spectral representation of `f_{n,t}` on a `K x K` grid.
#[derive(Debug, Clone)]
pub struct GridField {
    k: usize,
    t: f64,
    kmax: usize,
    coefficients: Vec<Complex64>,
    slots: Vec<Vec<f64>>,
}

fn wrap_index(k: i32, n: usize) -> usize {
    k.rem_euclid(n as i32) as usize
}

/// Builds the field for `sample` at time `t` on a `K x K` grid.
///
/// `K` must be a power of two strictly larger than `2·kmax(t)`.
pub fn build_grid_field(sample: &SampleSet, t: f64, k: usize) -> Result<GridField> {
    GridField::build(sample, t, k, DEFAULT_TAIL_TOLERANCE)
}

impl GridField {
    pub fn build(sample: &SampleSet, t: f64, k: usize, tail_tolerance: f64) -> Result<Self> {
        let cutoff = SpectralCutoff::for_time(t, tail_tolerance)?;
        if !k.is_power_of_two() {
            return Err(invalid_config(format!("grid size {k} is not a power of two")));
        }
        if k <= 2 * cutoff.kmax {
            return Err(invalid_config(format!(
                "grid size {k} does not resolve the spectral cutoff kmax = {} at t = {t}",
                cutoff.kmax
            )));
        }
        let modes = half_plane_modes(cutoff.kmax);
        let mu_hat = empirical_coefficients(sample, &modes, cutoff.kmax);
        let mut coefficients = vec![Complex64::new(0.0, 0.0); k * k];
        for (&(kx, ky), &m) in modes.iter().zip(&mu_hat) {
            let c = m * mode_weight((kx * kx + ky * ky) as f64, t);
            coefficients[wrap_index(kx, k) * k + wrap_index(ky, k)] = c;
            coefficients[wrap_index(-kx, k) * k + wrap_index(-ky, k)] = c.conj();
        }
        let mut field = GridField {
            k,
            t,
            kmax: cutoff.kmax,
            coefficients,
            slots: Vec::new(),
        };
        field.synthesise();
        Ok(field)
    }

    fn synthesise(&mut self) {
        let k = self.k;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_inverse(k);
        let freq = |idx: usize| -> f64 {
            if idx <= k / 2 {
                idx as f64
            } else {
                idx as f64 - k as f64
            }
        };
        self.slots = SLOT_ORDERS
            .iter()
            .map(|&(pu, pv)| {
                let mut buf: Vec<Complex64> = Vec::with_capacity(k * k);
                for i in 0..k {
                    let a = Complex64::new(0.0, 2.0 * PI * freq(i)).powu(pu);
                    for j in 0..k {
                        let b = Complex64::new(0.0, 2.0 * PI * freq(j)).powu(pv);
                        buf.push(self.coefficients[i * k + j] * a * b);
                    }
                }
                inverse_2d(&fft, &mut buf, k);
                buf.into_iter().map(|c| c.re).collect()
            })
            .collect();
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    /// `f̂(k)` for any integer frequency (zero outside the stored band).
    pub fn coefficient(&self, kx: i32, ky: i32) -> Complex64 {
        let km = self.kmax as i32;
        if kx * kx + ky * ky > km * km {
            return Complex64::new(0.0, 0.0);
        }
        self.coefficients[wrap_index(kx, self.k) * self.k + wrap_index(ky, self.k)]
    }

    /// Field values at the nodes `(i/K, j/K)`, row-major in `i`.
    pub fn node_values(&self) -> &[f64] {
        &self.slots[Slot::F as usize]
    }

    /// Gradient components at the nodes.
    pub fn node_gradient(&self) -> (&[f64], &[f64]) {
        (&self.slots[Slot::Fu as usize], &self.slots[Slot::Fv as usize])
    }

    /// Gradient at `y` by Hermite interpolation of the spectrally
    /// differentiated node values.
    pub fn grad_f_grid(&self, y: TorusPoint) -> [f64; 2] {
        [
            self.hermite(y, Slot::Fu, Slot::Fuu, Slot::Fuv, Slot::Fuuv),
            self.hermite(y, Slot::Fv, Slot::Fuv, Slot::Fvv, Slot::Fuvv),
        ]
    }

    /// Field value at `y` by Hermite interpolation.
    pub fn value_at(&self, y: TorusPoint) -> f64 {
        self.hermite(y, Slot::F, Slot::Fu, Slot::Fv, Slot::Fuv)
    }

    fn hermite(&self, y: TorusPoint, g: Slot, gu: Slot, gv: Slot, guv: Slot) -> f64 {
        let k = self.k;
        let h = 1.0 / k as f64;
        let su = y.u() * k as f64;
        let sv = y.v() * k as f64;
        let (i0, j0) = (su.floor() as usize % k, sv.floor() as usize % k);
        let (a, b) = (su - su.floor(), sv - sv.floor());
        let i1 = (i0 + 1) % k;
        let j1 = (j0 + 1) % k;
        let basis = |x: f64| -> ([f64; 2], [f64; 2]) {
            let x2 = x * x;
            let x3 = x2 * x;
            (
                [2.0 * x3 - 3.0 * x2 + 1.0, -2.0 * x3 + 3.0 * x2],
                [x3 - 2.0 * x2 + x, x3 - x2],
            )
        };
        let (va, da) = basis(a);
        let (vb, db) = basis(b);
        let (sg, su_, sv_, suv) = (
            &self.slots[g as usize],
            &self.slots[gu as usize],
            &self.slots[gv as usize],
            &self.slots[guv as usize],
        );
        let mut acc = 0.0;
        for (ci, &ii) in [i0, i1].iter().enumerate() {
            for (cj, &jj) in [j0, j1].iter().enumerate() {
                let idx = ii * k + jj;
                acc += sg[idx] * va[ci] * vb[cj]
                    + h * su_[idx] * da[ci] * vb[cj]
                    + h * sv_[idx] * va[ci] * db[cj]
                    + h * h * suv[idx] * da[ci] * db[cj];
            }
        }
        acc
    }
}

impl GradientField for GridField {
    fn grad(&self, y: TorusPoint) -> [f64; 2] {
        self.grad_f_grid(y)
    }
}

impl PotentialField for GridField {
    fn value(&self, y: TorusPoint) -> f64 {
        self.value_at(y)
    }
}

fn inverse_2d(fft: &Arc<dyn rustfft::Fft<f64>>, buf: &mut [Complex64], k: usize) {
    for row in buf.chunks_exact_mut(k) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); k];
    for j in 0..k {
        for i in 0..k {
            col[i] = buf[i * k + j];
        }
        fft.process(&mut col);
        for i in 0..k {
            buf[i * k + j] = col[i];
        }
    }
}

/// Exact `∫_T ∇f_{n,s} · ∇f_{n,t} dy` for the given sample.
///
/// Summed as `Σ_{k≠0} |μ̂(k)|² 4π²|k|² w_k(s) w_k(t)`; the semigroup law makes
/// this a function of `s + t` only.
pub fn field_dot_integral(sample: &SampleSet, s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && t > 0.0) {
        return Err(invalid_input(format!("times must be positive, got s={s}, t={t}")));
    }
    let cutoff = SpectralCutoff::for_time(s + t, DEFAULT_TAIL_TOLERANCE)?;
    let modes = half_plane_modes(cutoff.kmax);
    let mu_hat = empirical_coefficients(sample, &modes, cutoff.kmax);
    let mut acc = 0.0;
    for (&(kx, ky), m) in modes.iter().zip(&mu_hat) {
        let k2 = (kx * kx + ky * ky) as f64;
        acc += m.norm_sqr() * FOUR_PI2 * k2 * mode_weight(k2, s) * mode_weight(k2, t);
    }
    Ok(2.0 * acc)
}

/// `∫_T ∇f_s · ∇f_t` by the node rule on two grid fields of equal size.
/// Exact for band-limited fields when `K > 2·kmax`.
pub fn field_dot_quadrature(a: &GridField, b: &GridField) -> Result<f64> {
    if a.k() != b.k() {
        return Err(invalid_input("grid fields must share a resolution"));
    }
    let (au, av) = a.node_gradient();
    let (bu, bv) = b.node_gradient();
    let sum: f64 = au
        .iter()
        .zip(av)
        .zip(bu.iter().zip(bv))
        .map(|((x1, y1), (x2, y2))| x1 * x2 + y1 * y2)
        .sum();
    Ok(sum / (a.k() * a.k()) as f64)
}
