//! Exact samplers for the spherical law ‖ψ‖² ≤ γN with density exp(−θ‖∇ψ‖²),
//! with and without prescribed values on a hole.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::greens::{self, GreensContext, GreensError, SiteSet};
use crate::lattice::{Field, Fourier, TorusShape, C64};
use crate::rng::{self, tag};
use crate::stats::{self, Estimate};

#[derive(Debug, Error)]
pub enum SphericalError {
    #[error("theta must be positive, got {0}")]
    Theta(f64),
    #[error("gamma must lie in (0, 1], got {0}")]
    Gamma(f64),
    #[error("acceptance rate {rate:.3e} below floor {floor:.3e}")]
    LowAcceptance { rate: f64, floor: f64 },
    #[error("count must be positive")]
    EmptyBatch,
    #[error(transparent)]
    Greens(#[from] GreensError),
}

/// Values prescribed on the hole U; free sites are U^c.
#[derive(Debug, Clone)]
pub struct Boundary {
    pub hole: SiteSet,
    pub values: Vec<C64>,
}

impl Boundary {
    pub fn new(shape: TorusShape, sites: &[usize], values: Vec<C64>) -> Result<Self, GreensError> {
        let mut pairs: Vec<(usize, C64)> = sites.iter().copied().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        let sites: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let hole = SiteSet::new(shape, &sites)?;
        if pairs.len() != sites.len() {
            return Err(GreensError::BoundaryLength { got: pairs.len(), want: sites.len() });
        }
        Ok(Self { hole, values: pairs.into_iter().map(|p| p.1).collect() })
    }
}

#[derive(Debug, Clone)]
pub struct SphericalParams {
    pub shape: TorusShape,
    pub theta: f64,
    pub gamma: f64,
    pub boundary: Option<Boundary>,
    /// Minimum tolerated acceptance rate.
    pub acceptance_floor: f64,
}

impl SphericalParams {
    pub fn new(shape: TorusShape, theta: f64) -> Self {
        Self { shape, theta, gamma: 1.0, boundary: None, acceptance_floor: 1e-4 }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_boundary(mut self, b: Boundary) -> Self {
        self.boundary = Some(b);
        self
    }

    fn validate(&self) -> Result<(), SphericalError> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(SphericalError::Theta(self.theta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(SphericalError::Gamma(self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform zero mode in the disc plus massless nonzero modes.
    Massless,
    /// Massive Gaussian tilted back by exp(θm(‖ψ‖² − γN)).
    Massive { m: f64 },
    /// Dirichlet massive Gaussian plus harmonic extension, tilted likewise.
    Boundary { m: f64 },
}

#[derive(Debug, Clone)]
struct HoleData {
    /// K = G_{·U} G_{UU}^{-1}, stored row-major N × |U|.
    k: Vec<f64>,
    h: Vec<C64>,
}

/// Sampler with cached spectral data; draws are independent given the RNG.
#[derive(Debug, Clone)]
pub struct SphericalSampler {
    params: SphericalParams,
    fourier: Fourier,
    strategy: Strategy,
    sd: Vec<f64>,
    hole: Option<HoleData>,
}

impl SphericalSampler {
    pub fn new(params: SphericalParams) -> Result<Self, SphericalError> {
        params.validate()?;
        let shape = params.shape;
        let fourier = Fourier::new(shape);
        let lam = shape.eigenvalues();
        let th = params.theta;
        match &params.boundary {
            None => {
                let b = th * params.gamma;
                let cd = greens::critical_constant(shape.d().max(3))?;
                let strategy = if b >= cd || shape.d() < 3 {
                    Strategy::Massless
                } else {
                    Strategy::Massive { m: greens::solve_mass(b, shape.d())? }
                };
                let m = match strategy {
                    Strategy::Massive { m } => m,
                    _ => 0.0,
                };
                let sd = lam
                    .iter()
                    .enumerate()
                    .map(|(k, &l)| if k == 0 && m == 0.0 { 0.0 } else { (1.0 / (th * (l + m))).sqrt() })
                    .collect();
                Ok(Self { params, fourier, strategy, sd, hole: None })
            }
            Some(bd) => {
                let m = greens::solve_mass_with_boundary(shape, &bd.hole, &bd.values, th, params.gamma)?;
                let torus = GreensContext::torus_with(&fourier, m)?;
                let ext = greens::harmonic_extension_with(&torus, &bd.hole, &bd.values)?;
                let u = bd.hole.sites();
                let guu = nalgebra::DMatrix::from_fn(u.len(), u.len(), |i, j| torus.value(u[i], u[j]));
                let inv = guu.cholesky().ok_or(GreensError::Factorization)?.inverse();
                let n = shape.size();
                let mut k = vec![0.0; n * u.len()];
                for x in 0..n {
                    for j in 0..u.len() {
                        k[x * u.len() + j] = (0..u.len()).map(|i| torus.value(x, u[i]) * inv[(i, j)]).sum();
                    }
                }
                let sd = lam.iter().map(|&l| (1.0 / (th * (l + m))).sqrt()).collect();
                Ok(Self {
                    params,
                    fourier,
                    strategy: Strategy::Boundary { m },
                    sd,
                    hole: Some(HoleData { k, h: ext.h }),
                })
            }
        }
    }

    pub fn params(&self) -> &SphericalParams {
        &self.params
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn fourier(&self) -> &Fourier {
        &self.fourier
    }

    /// One proposal; returns the field when accepted.
    pub fn propose(&self, rng: &mut ChaCha8Rng) -> Option<Vec<C64>> {
        let shape = self.params.shape;
        let n = shape.size();
        let cap = self.params.gamma * n as f64;
        let th = self.params.theta;
        let mut y: Vec<C64> = self.sd.iter().map(|&s| rng::complex_normal(rng, s * s)).collect();
        match self.strategy {
            Strategy::Massless => {
                y[0] = rng::uniform_disc(rng, cap.sqrt());
                let s: f64 = y.iter().map(|z| z.norm_sqr()).sum();
                if s > cap {
                    return None;
                }
                self.fourier.inverse_in_place(&mut y);
                Some(y)
            }
            Strategy::Massive { m } => {
                let s: f64 = y.iter().map(|z| z.norm_sqr()).sum();
                if s > cap {
                    return None;
                }
                let u: f64 = rng.random();
                if u.ln() >= th * m * (s - cap) {
                    return None;
                }
                self.fourier.inverse_in_place(&mut y);
                Some(y)
            }
            Strategy::Boundary { m } => {
                let bd = self.params.boundary.as_ref().expect("boundary strategy");
                let hd = self.hole.as_ref().expect("hole data");
                self.fourier.inverse_in_place(&mut y);
                let u = bd.hole.sites();
                let phi_u: Vec<C64> = u.iter().map(|&s| y[s]).collect();
                let nu = u.len();
                for x in 0..n {
                    let row = &hd.k[x * nu..(x + 1) * nu];
                    let corr: C64 = row.iter().zip(&phi_u).map(|(a, b)| b * *a).sum();
                    y[x] = y[x] - corr + hd.h[x];
                }
                for (j, &s) in u.iter().enumerate() {
                    y[s] = bd.values[j];
                }
                let free: f64 =
                    y.iter().enumerate().filter(|(x, _)| !bd.hole.contains(*x)).map(|(_, z)| z.norm_sqr()).sum();
                if free > cap {
                    return None;
                }
                let w: f64 = rng.random();
                if w.ln() >= th * m * (free - cap) {
                    return None;
                }
                Some(y)
            }
        }
    }

    /// Draw until acceptance; returns the field and the number of proposals used.
    pub fn draw(&self, rng: &mut ChaCha8Rng, max_attempts: u64) -> Option<(Vec<C64>, u64)> {
        for a in 1..=max_attempts {
            if let Some(v) = self.propose(rng) {
                return Some((v, a));
            }
        }
        None
    }

    fn max_attempts(&self) -> u64 {
        ((20.0 / self.params.acceptance_floor).ceil() as u64).max(100)
    }

    /// Map each of `count` independent samples through `f`, in index order.
    pub fn map<T: Send>(
        &self,
        count: usize,
        seed: u64,
        f: impl Fn(usize, &[C64]) -> T + Sync,
    ) -> Result<(Vec<T>, BatchStats), SphericalError> {
        if count == 0 {
            return Err(SphericalError::EmptyBatch);
        }
        let cap = self.max_attempts();
        let out: Vec<Option<(T, u64)>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, tag::SPHERICAL, i as u64);
                self.draw(&mut r, cap).map(|(v, a)| (f(i, &v), a))
            })
            .collect();
        let mut attempts = 0u64;
        let mut vals = Vec::with_capacity(count);
        for o in out {
            match o {
                Some((t, a)) => {
                    attempts += a;
                    vals.push(t);
                }
                None => {
                    attempts += cap;
                    let rate = vals.len() as f64 / attempts as f64;
                    return Err(SphericalError::LowAcceptance { rate, floor: self.params.acceptance_floor });
                }
            }
        }
        let rate = count as f64 / attempts as f64;
        if rate < self.params.acceptance_floor {
            return Err(SphericalError::LowAcceptance { rate, floor: self.params.acceptance_floor });
        }
        Ok((vals, BatchStats { seed, accepted: count, attempts, acceptance_rate: rate }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchStats {
    pub seed: u64,
    pub accepted: usize,
    pub attempts: u64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub shape: TorusShape,
    pub theta: f64,
    pub gamma: f64,
    pub stats: BatchStats,
    pub strategy: Strategy,
    pub exact: bool,
    pub hole: Option<SiteSet>,
    pub fields: Vec<Field>,
}

/// Exact samples from the spherical law without a hole.
pub fn sample_spherical(params: SphericalParams, count: usize, seed: u64) -> Result<SampleBatch, SphericalError> {
    let params = SphericalParams { boundary: None, ..params };
    collect(SphericalSampler::new(params)?, count, seed)
}

/// Exact samples from the spherical law with values prescribed on a hole.
pub fn sample_spherical_boundary(
    params: SphericalParams,
    count: usize,
    seed: u64,
) -> Result<SampleBatch, SphericalError> {
    collect(SphericalSampler::new(params)?, count, seed)
}

fn collect(s: SphericalSampler, count: usize, seed: u64) -> Result<SampleBatch, SphericalError> {
    let shape = s.params.shape;
    let (fields, stats) =
        s.map(count, seed, |_, v| Field::from_values(shape, v.to_vec()).expect("finite sample"))?;
    Ok(SampleBatch {
        shape,
        theta: s.params.theta,
        gamma: s.params.gamma,
        stats,
        strategy: s.strategy,
        exact: true,
        hole: s.params.boundary.as_ref().map(|b| b.hole.clone()),
        fields,
    })
}

/// Mode-wise Metropolis in Fourier space, for sizes where rejection is too slow.
/// The chain targets the same law but its samples are correlated.
pub fn sample_spherical_mcmc(
    params: SphericalParams,
    count: usize,
    sweeps_between: usize,
    seed: u64,
) -> Result<SampleBatch, SphericalError> {
    params.validate()?;
    let shape = params.shape;
    let n = shape.size();
    let fourier = Fourier::new(shape);
    let lam = shape.eigenvalues();
    let th = params.theta;
    let cap = params.gamma * n as f64;
    let cd = greens::critical_constant(shape.d().max(3))?;
    let b = th * params.gamma;
    let m = if b < cd && shape.d() >= 3 { greens::solve_mass(b, shape.d())? } else { 1.0 / (th * n as f64) };
    let var: Vec<f64> = lam.iter().map(|&l| 1.0 / (th * (l + m))).collect();
    let mut r = rng::stream(seed, tag::SPHERICAL, u64::MAX);
    let mut y = vec![C64::new(0.0, 0.0); n];
    let mut s = 0.0;
    let mut fields = Vec::with_capacity(count);
    let mut acc = 0u64;
    let mut tries = 0u64;
    for _ in 0..count {
        for _ in 0..sweeps_between.max(1) {
            for k in 0..n {
                let z = rng::complex_normal(&mut r, var[k]);
                let s_new = s - y[k].norm_sqr() + z.norm_sqr();
                tries += 1;
                if s_new > cap {
                    continue;
                }
                let log_a = th * m * (s_new - s);
                let u: f64 = r.random();
                if u.ln() < log_a {
                    y[k] = z;
                    s = s_new;
                    acc += 1;
                }
            }
        }
        let mut v = y.clone();
        fourier.inverse_in_place(&mut v);
        fields.push(Field::from_values(shape, v).expect("finite"));
    }
    Ok(SampleBatch {
        shape,
        theta: th,
        gamma: params.gamma,
        stats: BatchStats { seed, accepted: count, attempts: tries, acceptance_rate: acc as f64 / tries as f64 },
        strategy: Strategy::Massive { m },
        exact: false,
        hole: None,
        fields,
    })
}

/// (1/|P|) Σ_{(x, x+o) ∈ P} ψ(x+o) conj ψ(x) over pairs with both sites free.
pub fn translation_covariance(
    shape: TorusShape,
    v: &[C64],
    offsets: &[Vec<i64>],
    center: bool,
    hole: Option<&SiteSet>,
) -> Vec<C64> {
    let n = shape.size();
    let free = |x: usize| hole.is_none_or(|h| !h.contains(x));
    let mean = if center {
        let (s, c) = (0..n).filter(|&x| free(x)).fold((C64::new(0.0, 0.0), 0usize), |(s, c), x| (s + v[x], c + 1));
        s / c as f64
    } else {
        C64::new(0.0, 0.0)
    };
    offsets
        .iter()
        .map(|o| {
            let mut s = C64::new(0.0, 0.0);
            let mut c = 0usize;
            for x in 0..n {
                if !free(x) {
                    continue;
                }
                let y = shape.translate(x, o);
                if !free(y) {
                    continue;
                }
                s += (v[y] - mean) * (v[x] - mean).conj();
                c += 1;
            }
            s / c.max(1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceRow {
    pub offset: Vec<i64>,
    pub re: Estimate,
    pub im: Estimate,
}

/// Translation-averaged covariance with batch-means standard errors.
pub fn empirical_covariance(batch: &SampleBatch, offsets: &[Vec<i64>], center: bool) -> Vec<CovarianceRow> {
    let per: Vec<Vec<C64>> = batch
        .fields
        .iter()
        .map(|f| translation_covariance(f.shape(), f.values(), offsets, center, batch.hole.as_ref()))
        .collect();
    covariance_rows(&per, offsets)
}

pub fn covariance_rows(per_sample: &[Vec<C64>], offsets: &[Vec<i64>]) -> Vec<CovarianceRow> {
    offsets
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let re: Vec<f64> = per_sample.iter().map(|c| c[j].re).collect();
            let im: Vec<f64> = per_sample.iter().map(|c| c[j].im).collect();
            CovarianceRow { offset: o.clone(), re: stats::batch_means(&re), im: stats::batch_means(&im) }
        })
        .collect()
}

/// Offsets (r, 0, …, 0) for r = 0..=rmax.
pub fn axis_offsets(d: usize, rmax: usize) -> Vec<Vec<i64>> {
    (0..=rmax)
        .map(|r| {
            let mut o = vec![0i64; d];
            o[0] = r as i64;
            o
        })
        .collect()
}

/// Exact finite-N second moments of the hole-free spherical law, obtained by
/// Laplace inversion over the nonzero modes with the zero mode integrated in closed form.
#[derive(Debug, Clone, Serialize)]
pub struct ExactMoments {
    /// E|Y_k|² per frequency; index 0 is the zero mode.
    pub mode_second_moment: Vec<f64>,
    /// P(accept) of the massless proposal, E(γN − Z')₊ / γN.
    pub massless_acceptance: f64,
}

impl ExactMoments {
    pub fn compute(shape: TorusShape, theta: f64, gamma: f64) -> Self {
        let lam = shape.eigenvalues();
        let mu: Vec<f64> = lam[1..].iter().map(|&l| 1.0 / (theta * l)).collect();
        let r = gamma * shape.size() as f64;
        let lm = laplace_moments(&mu, r);
        let mut out = vec![lm.a2 / lm.a1];
        out.extend(mu.iter().zip(&lm.b).map(|(m, b)| m * b / lm.a1));
        Self { mode_second_moment: out, massless_acceptance: (lm.log_scale + lm.a1.ln()).exp() / r }
    }

    /// Predicted (1/N) Σ_x E ψ(x+o) conj ψ(x), optionally without the zero mode.
    pub fn covariance(&self, shape: TorusShape, offset: &[i64], center: bool) -> f64 {
        let n = shape.size();
        let side = shape.n() as f64;
        let mut s = 0.0;
        for k in 0..n {
            if center && k == 0 {
                continue;
            }
            let c = shape.coords(k);
            let dot: f64 = c.iter().zip(offset).map(|(&a, &b)| a as f64 * b as f64).sum();
            s += self.mode_second_moment[k] * (std::f64::consts::TAU * dot / side).cos();
        }
        s / n as f64
    }

    /// E|spatial mean|² = E|Y_0|²/N.
    pub fn shift_mean(&self, shape: TorusShape) -> f64 {
        self.mode_second_moment[0] / shape.size() as f64
    }
}

/// Laplace-inversion moments of X = Σ_i Exp(μ_i) against the cutoff R, all scaled
/// by exp(−log_scale): a1 = E(R − X)₊, a2 = E(R − X)₊²/2, b_i = E(R − X − E_i)₊
/// with E_i an independent copy of the i-th summand.
#[derive(Debug, Clone)]
pub struct LaplaceMoments {
    pub log_scale: f64,
    pub a1: f64,
    pub a2: f64,
    pub b: Vec<f64>,
}

/// Inverts along the vertical line through the real saddle point of e^{tR} E e^{−tX} t^{−2}.
pub fn laplace_moments(mu: &[f64], r: f64) -> LaplaceMoments {
    let deriv = |c: f64| r - mu.iter().map(|&m| m / (1.0 + c * m)).sum::<f64>() - 2.0 / c;
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    while deriv(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-14 {
            break;
        }
    }
    let c = (lo * hi).sqrt();
    let log_scale = c * r - mu.iter().map(|&m| (1.0 + c * m).ln()).sum::<f64>() - 2.0 * c.ln();
    let curv: f64 = mu.iter().map(|&m| (m / (1.0 + c * m)).powi(2)).sum::<f64>() + 2.0 / (c * c);
    let h = 0.05 / curv.sqrt();
    let one = C64::new(1.0, 0.0);
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut b = vec![0.0; mu.len()];
    let mut quiet = 0;
    let mut step = 0usize;
    // (1/π) ∫_0^∞ Re f(c + iu) du by the trapezoid rule.
    while step < 20_000_000 {
        let u = step as f64 * h;
        let t = C64::new(c, u);
        let mut lg = C64::new(0.0, u * r);
        for &m in mu {
            lg -= ((one + t * m) / (1.0 + c * m)).ln();
        }
        lg -= 2.0 * (t / c).ln();
        let f = lg.exp();
        let w = if step == 0 { 0.5 } else { 1.0 };
        a1 += w * f.re;
        a2 += w * (f * c / t).re;
        for (bk, &m) in b.iter_mut().zip(mu) {
            *bk += w * (f / (one + t * m)).re;
        }
        if f.norm() < 1e-17 * a1.abs() {
            quiet += 1;
            if quiet > 20 {
                break;
            }
        } else {
            quiet = 0;
        }
        step += 1;
    }
    let s = h / std::f64::consts::PI;
    // a2 carries an extra 1/t, written as (c/t)/c.
    LaplaceMoments { log_scale, a1: a1 * s, a2: a2 * s / c, b: b.into_iter().map(|v| v * s).collect() }
}
