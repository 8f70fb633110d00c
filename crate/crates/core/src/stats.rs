//! Small statistical helpers shared by the Monte Carlo routines.
//!
//! All reductions here are sequential over slices so that results do not
//! depend on how samples were produced in parallel.

use serde::{Deserialize, Serialize};

/// A sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as u64;
        if n == 0 {
            return Self {
                mean: 0.0,
                se: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Mean and standard error from exact integer sums.
    pub fn from_sums(sum: u128, sum_sq: u128, n: u64) -> Self {
        if n == 0 {
            return Self {
                mean: 0.0,
                se: 0.0,
                n,
            };
        }
        let nf = n as f64;
        let mean = sum as f64 / nf;
        let var = if n > 1 {
            ((sum_sq as f64) - nf * mean * mean).max(0.0) / (nf - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / nf).sqrt(),
            n,
        }
    }

    pub fn bernoulli(successes: u64, n: u64) -> Self {
        Self::from_sums(successes as u128, successes as u128, n)
    }

    /// True when `|mean - target| <= k * se + slack`.
    pub fn agrees_with(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + slack
    }
}

/// Normalized importance weights from log-likelihood ratios.
///
/// Non-finite log weights are excluded and counted.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights {
    pub weights: Vec<f64>,
    pub excluded: usize,
    pub max_log_weight: f64,
}

impl ImportanceWeights {
    /// Exponentiates `log_w - max(log_w)`; weights that underflow to zero
    /// or are non-finite are set to zero and counted as excluded.
    pub fn from_log(log_w: &[f64]) -> Self {
        let max = log_w
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut excluded = 0;
        let weights = log_w
            .iter()
            .map(|&lw| {
                if !lw.is_finite() {
                    excluded += 1;
                    return 0.0;
                }
                let w = (lw - max).exp();
                if w == 0.0 {
                    excluded += 1;
                }
                w
            })
            .collect();
        Self {
            weights,
            excluded,
            max_log_weight: max,
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            excluded: 0,
            max_log_weight: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn ess(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 == 0.0 {
            0.0
        } else {
            s * s / s2
        }
    }

    /// Self-normalized estimate of `E[f]` with a delta-method standard error.
    pub fn estimate(&self, values: &[f64]) -> MeanEstimate {
        assert_eq!(values.len(), self.weights.len());
        let s: f64 = self.weights.iter().sum();
        if s == 0.0 {
            return MeanEstimate {
                mean: 0.0,
                se: 0.0,
                n: 0,
            };
        }
        let mean = self
            .weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            / s;
        let var = self
            .weights
            .iter()
            .zip(values)
            .map(|(w, v)| (w * (v - mean)).powi(2))
            .sum::<f64>()
            / (s * s);
        MeanEstimate {
            mean,
            se: var.sqrt(),
            n: self.weights.len() as u64,
        }
    }

    /// Weighted quantile (`p` in `[0, 1]`) of `values`.
    pub fn quantile(&self, values: &[f64], p: f64) -> Option<f64> {
        let mut pairs: Vec<(f64, f64)> = values
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
            .collect();
        if pairs.is_empty() {
            return None;
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let mut acc = 0.0;
        for (v, w) in &pairs {
            acc += w;
            if acc >= p * total {
                return Some(*v);
            }
        }
        pairs.last().map(|p| p.0)
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return (0.0, 1.0);
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-14 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Ordinary least squares `y = a + b x`, returning `(a, b, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    weighted_linear_fit(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares `y = a + b x` with weights `w`, returning
/// `(a, b, r²)` where `r²` is the weighted coefficient of determination.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((a, b), w) in x.iter().zip(y).zip(w) {
        sxx += w * (a - mx).powi(2);
        sxy += w * (a - mx) * (b - my);
        syy += w * (b - my).powi(2);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if sxx > 0.0 && syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        0.0
    };
    (intercept, slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let m = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m.mean - 2.5).abs() < 1e-12);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
        let s = MeanEstimate::from_sums(10, 30, 4);
        assert!((s.mean - m.mean).abs() < 1e-12);
        assert!((s.se - m.se).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_match_plain_mean() {
        let xs = [1.0, 5.0, 2.0, 8.0];
        let w = ImportanceWeights::uniform(4);
        let e = w.estimate(&xs);
        assert!((e.mean - 4.0).abs() < 1e-12);
        assert!((w.ess() - 4.0).abs() < 1e-12);
        assert_eq!(w.quantile(&xs, 0.5), Some(2.0));
    }

    #[test]
    fn log_weights_flag_underflow() {
        let w = ImportanceWeights::from_log(&[0.0, -2000.0, f64::NAN, -1.0]);
        assert_eq!(w.excluded, 2);
        assert_eq!(w.weights[0], 1.0);
    }

    #[test]
    fn ks_identical_samples() {
        let a: Vec<f64> = (0..200).map(|i| (i % 17) as f64).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p < 1e-6);
    }

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 2.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
