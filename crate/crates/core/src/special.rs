//! Scaled modified Bessel functions and a log-substitution trapezoid rule on (0, ∞).

use std::f64::consts::PI;

/// e^{-x} I_0(x) for x ≥ 0.
pub fn i0_scaled(x: f64) -> f64 {
    if x < 20.0 {
        series_scaled(x)
    } else {
        asymptotic_scaled(0, x)
    }
}

fn series_scaled(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum * (-x).exp()
}

fn asymptotic_scaled(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order as f64).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kk = k as f64;
        term *= -(mu - (2.0 * kk - 1.0).powi(2)) / (kk * 8.0 * x);
        if term.abs() > prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

/// e^{-x} I_k(x) for integer k ≥ 0 and x ≥ 0.
pub fn ik_scaled(k: u32, x: f64) -> f64 {
    if k == 0 {
        return i0_scaled(x);
    }
    if x == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    if x > 40.0 && x > 8.0 * kf * kf {
        return asymptotic_scaled(k, x);
    }
    // Miller backward recurrence normalised by I_0.
    let start = k as usize + (10.0 * x.sqrt()) as usize + 40;
    let mut ip1 = 0.0f64;
    let mut i = 1e-300f64;
    let mut want = 0.0;
    for j in (1..=start).rev() {
        let im1 = ip1 + 2.0 * j as f64 / x * i;
        ip1 = i;
        i = im1;
        if j - 1 == k as usize {
            want = i;
        }
        if i > 1e250 {
            ip1 *= 1e-250;
            i *= 1e-250;
            want *= 1e-250;
        }
    }
    want / i * i0_scaled(x)
}

/// Nodes t_j and weights w_j such that Σ w_j f(t_j) ≈ ∫_0^∞ f(t) dt for integrands
/// with algebraic or exponential decay, via t = e^s and the trapezoid rule in s.
#[derive(Debug, Clone)]
pub struct LogTrapezoid {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
}

impl LogTrapezoid {
    pub const S_LO: f64 = -36.0;
    pub const S_HI: f64 = 84.0;

    pub fn new(step: f64) -> Self {
        let count = ((Self::S_HI - Self::S_LO) / step).ceil() as usize + 1;
        let mut t = Vec::with_capacity(count);
        let mut w = Vec::with_capacity(count);
        for j in 0..count {
            let s = Self::S_LO + j as f64 * step;
            let e = s.exp();
            t.push(e);
            w.push(step * e);
        }
        Self { t, w }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.t.iter().zip(&self.w).map(|(&t, &w)| w * f(t)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_branches_meet() {
        for x in [20.0, 24.0, 30.0] {
            let a = series_scaled(x);
            let b = asymptotic_scaled(0, x);
            assert!((a - b).abs() < 1e-12 * a, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn recurrence_identity() {
        for &x in &[0.3, 2.0, 17.0, 55.0, 400.0, 3000.0] {
            for k in 1..12u32 {
                let lhs = ik_scaled(k - 1, x) - ik_scaled(k + 1, x);
                let rhs = 2.0 * k as f64 / x * ik_scaled(k, x);
                assert!((lhs - rhs).abs() < 1e-10 * ik_scaled(k - 1, x), "{k} {x}");
            }
        }
    }

    #[test]
    fn log_trapezoid_known_integrals() {
        let q = LogTrapezoid::new(1.0 / 32.0);
        let a = q.integrate(|t| (-t).exp());
        assert!((a - 1.0).abs() < 1e-12);
        let b = q.integrate(|t| 1.0 / ((1.0 + t) * (1.0 + t)));
        assert!((b - 1.0).abs() < 1e-12);
        let c = q.integrate(|t| t.sqrt() * (-t).exp());
        assert!((c - 0.5 * PI.sqrt()).abs() < 1e-12);
    }
}
