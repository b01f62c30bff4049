//! Sample statistics: Gaussian kernel density estimates, Kolmogorov-Smirnov
//! distance, and the normal CDF.

use serde::{Deserialize, Serialize};

use crate::special::erfc;

/// A function sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    /// Trapezoid integral over the grid.
    pub fn trapezoid(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.x.len() {
            acc += 0.5 * (self.y[i - 1] + self.y[i]) * (self.x[i] - self.x[i - 1]);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Silverman,
    Fixed(f64),
}

const KDE_GRID: usize = 512;

/// Gaussian-kernel density estimate on a 512-point grid spanning
/// `[min - 3h, max + 3h]`.
///
/// The Silverman rule is `0.9 min(sd, IQR/1.34) n^(-1/5)`, falling back to a
/// fixed `1e-3` for degenerate samples. Panics on an empty sample.
pub fn kde_gaussian(samples: &[f64], bandwidth: Bandwidth) -> Curve {
    assert!(!samples.is_empty(), "kde needs at least one sample");
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Silverman => silverman_bandwidth(samples),
    };
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let n = samples.len() as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut x = Vec::with_capacity(KDE_GRID);
    let mut y = Vec::with_capacity(KDE_GRID);
    for i in 0..KDE_GRID {
        let g = lo + (hi - lo) * i as f64 / (KDE_GRID - 1) as f64;
        let mut acc = 0.0;
        for &s in samples {
            let z = (g - s) / h;
            acc += (-0.5 * z * z).exp();
        }
        x.push(g);
        y.push(acc * norm);
    }
    Curve { x, y }
}

fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let (_, var) = mean_variance(samples);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Sup distance between the empirical CDF of `samples` and `cdf`:
/// `max_i max(|i/n - F(x_i)|, |(i-1)/n - F(x_i)|)`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    assert!(!samples.is_empty(), "ks needs at least one sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max(((i + 1) as f64 / n - f).abs());
        sup = sup.max((i as f64 / n - f).abs());
    }
    sup
}

/// Normal CDF with absolute error well under 1e-10.
pub fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    assert!(variance > 0.0, "normal_cdf needs variance > 0");
    let z = (x - mean) / variance.sqrt();
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Compensated (Neumaier) mean and unbiased sample variance.
pub fn mean_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = neumaier_sum(samples.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = neumaier_sum(samples.iter().map(|&v| (v - mean) * (v - mean)));
    (mean, ss / (n - 1) as f64)
}

/// Order-statistic quantile with linear interpolation; input must be sorted.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let idx = pos.floor() as usize;
    let frac = pos - idx as f64;
    if idx + 1 < n {
        sorted[idx] + (sorted[idx + 1] - sorted[idx]) * frac
    } else {
        sorted[n - 1]
    }
}

pub fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

pub(crate) fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}
