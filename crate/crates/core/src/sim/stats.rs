//! Output analysis: power-sum moments and batch-means confidence intervals.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Highest raw moment tracked by [`PowerSums`].
pub const TRACKED_MOMENTS: usize = 4;

/// Streaming raw moments `E[X^k]`, `k = 1..=4`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PowerSums {
    pub count: u64,
    sums: [f64; TRACKED_MOMENTS],
}

impl PowerSums {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let mut p = 1.0;
        for s in self.sums.iter_mut() {
            p *= x;
            *s += p;
        }
    }

    pub fn merge(&mut self, other: &PowerSums) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            *a += b;
        }
    }

    /// `E[X^k]` estimate, `1 <= k <= 4`; NaN-free (0 when empty).
    pub fn moment(&self, k: usize) -> f64 {
        assert!((1..=TRACKED_MOMENTS).contains(&k));
        if self.count == 0 {
            return 0.0;
        }
        self.sums[k - 1] / self.count as f64
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn moments(&self) -> Vec<f64> {
        (1..=TRACKED_MOMENTS).map(|k| self.moment(k)).collect()
    }
}

/// Two-sided 95% Student-t half-width of the mean of `values`.
///
/// Returns infinity with fewer than two values.
pub fn mean_half_width(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    t_quantile_975(n - 1) * (var / n as f64).sqrt()
}

pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}
