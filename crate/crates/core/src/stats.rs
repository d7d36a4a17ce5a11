//! Batch-means errors, least-squares fits and autocorrelation estimates.

use serde::Serialize;

pub const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// |mean − target| in units of the standard error (∞ when se = 0 and they differ).
    pub fn z(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if self.se > 0.0 {
            d / self.se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean with standard error from `BATCHES` contiguous batch means.
pub fn batch_means(v: &[f64]) -> Estimate {
    batch_means_k(v, BATCHES)
}

pub fn batch_means_k(v: &[f64], k: usize) -> Estimate {
    let n = v.len();
    let m = mean(v);
    if n < 2 * k {
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        return Estimate { mean: m, se: (var / n as f64).sqrt() };
    }
    let size = n / k;
    let bm: Vec<f64> = (0..k).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    let mb = mean(&bm);
    let var = bm.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (k - 1) as f64;
    Estimate { mean: m, se: (var / k as f64).sqrt() }
}

/// Ratio estimator Σa/Σb with a batch-means standard error.
pub fn ratio_batch(a: &[f64], b: &[f64]) -> Estimate {
    let k = BATCHES.min(a.len());
    let size = a.len() / k;
    let total = a.iter().sum::<f64>() / b.iter().sum::<f64>();
    let rs: Vec<f64> = (0..k)
        .map(|i| {
            let sa: f64 = a[i * size..(i + 1) * size].iter().sum();
            let sb: f64 = b[i * size..(i + 1) * size].iter().sum();
            sa / sb
        })
        .collect();
    let mr = mean(&rs);
    let var = rs.iter().map(|x| (x - mr).powi(2)).sum::<f64>() / (k.max(2) - 1) as f64;
    Estimate { mean: total, se: (var / k as f64).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual sum of squares.
    pub rss: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    LinearFit { slope, intercept, rss, r2 }
}

/// Integrated autocorrelation time with Sokal's adaptive window (c = 5).
pub fn integrated_autocorr(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 8 {
        return 1.0;
    }
    let m = mean(v);
    let c0: f64 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag).map(|i| (v[i] - m) * (v[i + lag] - m)).sum::<f64>() / n as f64;
        tau += 2.0 * c / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|a| 2.0 - 0.5 * a).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_series_zero_error() {
        let e = batch_means(&vec![3.0; 400]);
        assert_eq!(e, Estimate { mean: 3.0, se: 0.0 });
    }
}
