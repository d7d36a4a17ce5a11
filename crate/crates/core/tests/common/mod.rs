//! Oracles shared by the integration tests; none of them call into the library's numerics.
#![allow(dead_code)]

use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nls_lattice::lattice::{Field, TorusShape, C64};

pub const PI: f64 = std::f64::consts::PI;

/// Eigenvalues 4 Σ sin²(π k_i / n) of −Δ on (Z/nZ)^d, lexicographic in k.
pub fn torus_eigenvalues(d: usize, n: usize) -> Vec<f64> {
    let s: Vec<f64> = (0..n).map(|k| 4.0 * (PI * k as f64 / n as f64).sin().powi(2)).collect();
    let mut out = vec![0.0];
    for _ in 0..d {
        out = out.iter().flat_map(|&a| s.iter().map(move |&b| a + b)).collect();
    }
    out
}

/// C_3 as (1/6)·E[visits to 0] of the simple random walk, truncated at `steps` with
/// the local CLT tail (3/2π)^{3/2}·2T^{−1/2} added back. Returns (estimate, standard error).
pub fn random_walk_green(walks: u64, steps: u32, seed: u64) -> (f64, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..walks {
        let mut p = [0i32; 3];
        let mut visits = 1u32;
        let mut t = 0;
        while t < steps {
            let w = r.next_u64();
            for half in [w as u32, (w >> 32) as u32] {
                let dir = ((half as u64 * 6) >> 32) as usize;
                p[dir >> 1] += if dir & 1 == 0 { 1 } else { -1 };
                if p == [0, 0, 0] {
                    visits += 1;
                }
            }
            t += 2;
        }
        sum += visits as f64;
        sum2 += (visits as f64).powi(2);
    }
    let n = walks as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    let tail = (3.0 / (2.0 * PI)).powf(1.5) * 2.0 / (steps as f64).sqrt();
    ((mean + tail) / 6.0, (var / n).sqrt() / 6.0)
}

/// P(Σ_k E_k ≤ x) for independent exponentials with means `mu`, by Gil-Pelaez inversion.
pub fn hypoexp_cdf(mu: &[f64], x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let integrand = |t: f64| -> f64 {
        let mut arg = -t * x;
        let mut logmod = 0.0;
        for &m in mu {
            arg += (t * m).atan();
            logmod -= 0.5 * (1.0 + (t * m).powi(2)).ln();
        }
        logmod.exp() * arg.sin() / t
    };
    // Substitute t = s/(1−s) on (0, 1) and apply Simpson's rule.
    let k = 200_000;
    let h = 1.0 / k as f64;
    let mut acc = 0.0;
    for j in 1..k {
        let s = j as f64 * h;
        let t = s / (1.0 - s);
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(t) / (1.0 - s).powi(2);
    }
    let small = x - mu.iter().sum::<f64>();
    acc += -small; // limit of the integrand at t → 0
    0.5 - acc * h / 3.0 / PI
}

/// log π − W_N(b) where W_N(b) = (1/N) log ∫ exp(−‖∇ψ‖²) 1{‖ψ‖² ≤ bN} dψ on (Z/nZ)^d.
/// The nonzero modes are integrated against a mass-m tilt with m solving the finite mass equation.
pub fn entropy_mc(d: usize, n: usize, b: f64, samples: usize, seed: u64) -> f64 {
    let lam = torus_eigenvalues(d, n);
    let size = lam.len() as f64;
    let nz = &lam[1..];
    let trace = |m: f64| nz.iter().map(|l| 1.0 / (l + m)).sum::<f64>() / size;
    let m = if trace(0.0) <= b {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while trace(hi) > b {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if trace(mid) > b {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let cap = b * size;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut z = 0.0;
        for &l in nz {
            let u: f64 = r.random();
            z += -(1.0 - u).ln() / (l + m);
        }
        if z < cap {
            logs.push(m * z + (PI * (cap - z)).ln());
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = logs.iter().map(|v| (v - top).exp()).sum::<f64>() / samples as f64;
    let log_e = top + mean.ln();
    let gauss: f64 = nz.iter().map(|l| (PI / (l + m)).ln()).sum();
    let wn = (gauss + log_e) / size;
    PI.ln() - wn
}

/// Total-variation distance between histogram counts and bin probabilities.
pub fn tv_distance(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    0.5 * counts.iter().zip(probs).map(|(&c, &p)| (c as f64 / total as f64 - p).abs()).sum::<f64>()
}

/// Test fields of several shapes with total mass scale·N.
pub fn adversarial(shape: TorusShape, kind: u8, seed: u64, scale: f64) -> Field {
    let n = shape.size();
    let mut s = seed;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut v: Vec<C64> = match kind % 4 {
        0 => (0..n).map(|_| C64::new(next() - 0.5, next() - 0.5)).collect(),
        1 => {
            let mut v = vec![C64::new(0.0, 0.0); n];
            for _ in 0..3 {
                v[(next() * n as f64) as usize % n] = C64::new(1.0 + 5.0 * next(), 0.0);
            }
            v
        }
        2 => (0..n).map(|x| C64::new((-(shape.distance(x, 0) as f64) * next()).exp(), 0.0)).collect(),
        _ => (0..n).map(|x| C64::new(if x % 7 == 0 { 1.0 } else { 0.01 * next() }, next())).collect(),
    };
    let mass: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let k = (scale * n as f64 / mass).sqrt();
    v.iter_mut().for_each(|z| *z *= k);
    Field::from_values(shape, v).unwrap()
}
