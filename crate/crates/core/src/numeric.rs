//! Small numerical helpers shared across modules.

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

/// Compensated sum of a sequence.
pub fn stable_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().collect::<NeumaierSum>().value()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..(order + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if order == 1 { x } else { p1 };
            let pm1 = if order == 1 { 1.0 } else { p0 };
            dp = n * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        assert_eq!(stable_sum([1e16, 1.0, -1e16]), 1.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for order in [1, 2, 5, 16, 32, 64] {
            let (x, w) = gauss_legendre(order);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            let deg = 2 * order - 1;
            let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((integral - exact).abs() < 1e-12, "order {order}");
        }
    }
}
