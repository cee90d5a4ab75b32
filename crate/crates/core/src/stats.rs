//! Small statistics helpers shared by the estimators.
//!
//! Reductions are pairwise over an ordered slice, so a result depends only on
//! the order of its inputs and never on how they were computed in parallel.

use serde::Serialize;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean and standard error of the mean. `-inf` entries make the mean `-inf`
/// and the standard error NaN-free `inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, std_error: f64::NAN, count: 0 };
    }
    if values.contains(&f64::NEG_INFINITY) {
        return MeanEstimate { mean: f64::NEG_INFINITY, std_error: f64::INFINITY, count: n };
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return MeanEstimate { mean, std_error: 0.0, count: 1 };
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    MeanEstimate { mean, std_error: (var / n as f64).sqrt(), count: n }
}

/// Wilson score interval for `successes / trials` at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lower = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lower, upper)
}

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// An empirical frequency with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub hits: usize,
    pub trials: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Frequency {
    pub fn new(hits: usize, trials: usize) -> Self {
        let (lower, upper) = wilson_interval(hits, trials, Z95);
        let value = if trials == 0 { 0.0 } else { hits as f64 / trials as f64 };
        Self { hits, trials, value, lower, upper }
    }

    /// Half-width of the interval.
    pub fn radius(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Ordinary least-squares fit `y ≈ intercept + slope * x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = pairwise_sum(x) / n as f64;
    let my = pairwise_sum(y) / n as f64;
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx) * (a - mx)).collect();
    let sxx = pairwise_sum(&sxx);
    if !(sxx > 0.0) {
        return None;
    }
    let slope = pairwise_sum(&sxy) / sxx;
    let intercept = my - slope * mx;
    let residuals = x.iter().zip(y).map(|(a, b)| b - (intercept + slope * a)).collect();
    Some(LinearFit { slope, intercept, residuals })
}

/// Empirical quantile by the nearest-rank rule on a sorted copy.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Sorted values paired with their empirical CDF levels.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

/// Two-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
