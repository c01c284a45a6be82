//! Goodness-of-fit tests and small descriptive statistics helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // alternating series converges too slowly here; use the theta-function form
        let s: f64 = (1..=20)
            .map(|j| {
                let a = (2 * j - 1) as f64;
                (-a * a * std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x)).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * x * x).exp();
        sum += if j as i64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value with the Stephens small-sample correction.
fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sn = n_eff.sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample test of `data` against the continuous law with CDF `cdf`.
pub fn ks_one_sample(data: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if data.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut x: Vec<f64> = data.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        n: x.len(),
    })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: a.len().min(b.len()),
        });
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, ne),
        n: n + m,
    })
}

pub fn normal_cdf(x: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return if x >= 0.0 { 1.0 } else { 0.0 };
    }
    Normal::new(0.0, variance.sqrt())
        .expect("positive standard deviation")
        .cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Unbiased covariance matrix of fixed-width sample vectors.
pub fn covariance<const D: usize>(samples: &[[f64; D]]) -> [[f64; D]; D] {
    let n = samples.len() as f64;
    let mut mu = [0.0; D];
    for s in samples {
        for i in 0..D {
            mu[i] += s[i] / n;
        }
    }
    let mut c = [[0.0; D]; D];
    for s in samples {
        for i in 0..D {
            for j in 0..D {
                c[i][j] += (s[i] - mu[i]) * (s[j] - mu[j]);
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    /// Wilson score interval at 95%.
    pub lower: f64,
    pub upper: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (lower, upper) = wilson_interval(successes, trials, 1.959963984540054);
        Proportion {
            successes,
            trials,
            estimate: if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 },
            lower,
            upper,
        }
    }

    /// Normal-approximation standard error of the estimate.
    pub fn std_error(&self) -> f64 {
        let p = self.estimate;
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
