//! Metropolis–Hastings sampler for the focusing NLS measure
//! exp(θ(ν_N‖ψ‖_p^p − ‖∇ψ‖²)) on {‖ψ‖² ≤ γN}, with optional hole values and ℓ∞ cap.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::greens::{self, GreensContext, GreensError};
use crate::landscape::{Landscape, LandscapeError, SolitonOptions};
use crate::lattice::{self, pow_abs, Field, Fourier, TorusShape, C64};
use crate::rng::{self, tag};
use crate::spherical::{Boundary, SampleBatch, SphericalError, SphericalParams, SphericalSampler};
use crate::stats::{self, Estimate};
use crate::tempering;

#[derive(Debug, Error)]
pub enum NlsError {
    #[error("theta must be positive, got {0}")]
    Theta(f64),
    #[error("nu must be nonnegative, got {0}")]
    Nu(f64),
    #[error("exponent p must exceed 2, got {0}")]
    Exponent(f64),
    #[error("gamma must lie in (0, 1], got {0}")]
    Gamma(f64),
    #[error("l-infinity cap must be positive, got {0}")]
    Cap(f64),
    #[error("nonergodic schedule: {0}")]
    NonErgodic(String),
    #[error("{0} moves are not available with a boundary")]
    Unsupported(&'static str),
    #[error("initial state violates the constraints")]
    Initial,
    #[error("batch does not match parameters: {0}")]
    Mismatch(&'static str),
    #[error("effective sample size {ess:.1} below floor {floor:.1}")]
    LowEss { ess: f64, floor: f64 },
    #[error(transparent)]
    Spherical(#[from] SphericalError),
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
}

#[derive(Debug, Clone)]
pub struct NlsParams {
    pub shape: TorusShape,
    pub theta: f64,
    pub nu: f64,
    pub p: f64,
    pub gamma: f64,
    pub boundary: Option<Boundary>,
    pub linf_cap: Option<f64>,
}

impl NlsParams {
    pub fn new(shape: TorusShape, theta: f64, nu: f64, p: f64) -> Self {
        Self { shape, theta, nu, p, gamma: 1.0, boundary: None, linf_cap: None }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_boundary(mut self, b: Boundary) -> Self {
        self.boundary = Some(b);
        self
    }

    pub fn with_linf_cap(mut self, s: f64) -> Self {
        self.linf_cap = Some(s);
        self
    }

    pub fn validate(&self) -> Result<(), NlsError> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(NlsError::Theta(self.theta));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(NlsError::Nu(self.nu));
        }
        if !(self.p > 2.0 && self.p.is_finite()) {
            return Err(NlsError::Exponent(self.p));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(NlsError::Gamma(self.gamma));
        }
        if let Some(s) = self.linf_cap {
            if !(s > 0.0) {
                return Err(NlsError::Cap(s));
            }
        }
        Ok(())
    }

    /// ν_N = (2/p)(ν/N)^{(p−2)/2}.
    pub fn nu_n(&self) -> f64 {
        lattice::nu_n(self.nu, self.p, self.shape.size())
    }

    pub fn spherical(&self) -> SphericalParams {
        let mut s = SphericalParams::new(self.shape, self.theta).with_gamma(self.gamma);
        if let Some(b) = &self.boundary {
            s = s.with_boundary(b.clone());
        }
        s
    }

    pub fn free_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.shape.size()];
        if let Some(b) = &self.boundary {
            for &u in b.hole.sites() {
                m[u] = false;
            }
        }
        m
    }

    fn cap2(&self) -> f64 {
        self.linf_cap.map_or(f64::INFINITY, |s| s * s)
    }
}

/// Free mass, free ℓ^p sum and gradient energy over edges with a free endpoint.
fn totals(nb: &[usize], deg: usize, v: &[C64], free: &[bool], p: f64) -> (f64, f64, f64) {
    let mut mass = 0.0;
    let mut lp = 0.0;
    let mut grad = 0.0;
    for x in 0..v.len() {
        if free[x] {
            let r2 = v[x].norm_sqr();
            mass += r2;
            lp += pow_abs(r2, p);
        }
        // Forward edges only: the even entries of the neighbor row are the +e_a steps.
        for a in 0..deg / 2 {
            let y = nb[x * deg + 2 * a];
            if free[x] || free[y] {
                grad += (v[x] - v[y]).norm_sqr();
            }
        }
    }
    (mass, lp, grad)
}

fn constraints_hold(params: &NlsParams, v: &[C64], free: &[bool]) -> bool {
    if v.len() != params.shape.size() || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return false;
    }
    if let Some(b) = &params.boundary {
        for (j, &u) in b.hole.sites().iter().enumerate() {
            if v[u] != b.values[j] {
                return false;
            }
        }
    }
    let cap2 = params.cap2();
    let mut mass = 0.0;
    for x in 0..v.len() {
        if free[x] {
            let r2 = v[x].norm_sqr();
            if r2 > cap2 {
                return false;
            }
            mass += r2;
        }
    }
    mass <= params.gamma * params.shape.size() as f64
}

/// θ(ν_N‖ψ‖_p^p − ‖∇ψ‖²) on the constraint set, −∞ outside. With a hole the
/// ℓ^p sum runs over free sites and the gradient over edges touching them.
pub fn log_density(params: &NlsParams, f: &Field) -> f64 {
    let free = params.free_mask();
    if !constraints_hold(params, f.values(), &free) {
        return f64::NEG_INFINITY;
    }
    let shape = params.shape;
    let nb = shape.neighbor_table();
    let (_, lp, grad) = totals(&nb, shape.degree(), f.values(), &free, params.p);
    params.theta * (params.nu_n() * lp - grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Local,
    Radial,
    ZeroMode,
    Spike,
    Pcn,
    WellJump,
}

impl MoveKind {
    pub const ALL: [MoveKind; 6] =
        [MoveKind::Local, MoveKind::Radial, MoveKind::ZeroMode, MoveKind::Spike, MoveKind::Pcn, MoveKind::WellJump];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Local => "local",
            MoveKind::Radial => "radial",
            MoveKind::ZeroMode => "zero_mode",
            MoveKind::Spike => "spike",
            MoveKind::Pcn => "pcn",
            MoveKind::WellJump => "well_jump",
        }
    }
}

/// Local and radial weights split the per-site proposals of a sweep; the other
/// entries are expected numbers of proposals per sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoveMixture {
    pub local: f64,
    pub radial: f64,
    pub zero_mode: f64,
    pub spike: f64,
    pub pcn: f64,
    pub well_jump: f64,
}

impl Default for MoveMixture {
    fn default() -> Self {
        Self { local: 0.8, radial: 0.2, zero_mode: 1.0, spike: 1.0, pcn: 0.0, well_jump: 0.0 }
    }
}

impl MoveMixture {
    fn weight(&self, k: MoveKind) -> f64 {
        match k {
            MoveKind::Local => self.local,
            MoveKind::Radial => self.radial,
            MoveKind::ZeroMode => self.zero_mode,
            MoveKind::Spike => self.spike,
            MoveKind::Pcn => self.pcn,
            MoveKind::WellJump => self.well_jump,
        }
    }
}

/// Step sizes: local σ, radial σ_η, zero-mode σ, spike δ (fraction of N), pCN β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProposalScales {
    pub local: f64,
    pub radial: f64,
    pub zero_mode: f64,
    pub spike: f64,
    pub pcn: f64,
}

impl ProposalScales {
    pub fn auto(theta: f64, d: usize) -> Self {
        Self {
            local: 2.0 / (theta * 2.0 * d as f64).sqrt(),
            radial: 0.5,
            zero_mode: 1.0 / theta.sqrt(),
            spike: 0.02,
            pcn: 0.5,
        }
    }

    fn get(&self, k: MoveKind) -> f64 {
        match k {
            MoveKind::Local => self.local,
            MoveKind::Radial => self.radial,
            MoveKind::ZeroMode => self.zero_mode,
            MoveKind::Spike => self.spike,
            MoveKind::Pcn => self.pcn,
            MoveKind::WellJump => 0.0,
        }
    }

    fn set(&mut self, k: MoveKind, v: f64) {
        match k {
            MoveKind::Local => self.local = v.clamp(1e-4, 1e4),
            MoveKind::Radial => self.radial = v.clamp(1e-4, 3.0),
            MoveKind::ZeroMode => self.zero_mode = v.clamp(1e-4, 1e4),
            MoveKind::Spike => self.spike = v.clamp(1e-5, 1.0),
            MoveKind::Pcn => self.pcn = v.clamp(1e-4, 1.0),
            MoveKind::WellJump => {}
        }
    }
}

/// Soliton component of the well-jump proposal: peak mass fraction and bulk mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolitonTarget {
    pub a_star: f64,
    /// Bulk Gaussian mass M(a*).
    pub mass: f64,
    /// Share of the soliton mass on its peak site.
    pub peak_fraction: f64,
}

impl SolitonTarget {
    /// Target read off the landscape; None when the minimizer sits at 0.
    pub fn from_landscape(land: &Landscape, theta: f64, nu: f64) -> Result<Option<Self>, NlsError> {
        let set = land.minimizer_set(theta, nu, 1e-4)?;
        let a = set.argmin;
        if set.contains_zero || a <= 0.0 {
            return Ok(None);
        }
        let mass = land.supercritical_mass(a, theta)?;
        let sol = crate::landscape::soliton_energy(nu * a, land.p, land.d, &SolitonOptions::default())?;
        let peak = sol.profile.iter().map(|x| x * x).fold(0.0, f64::max) / (nu * a);
        Ok(Some(Self { a_star: a, mass, peak_fraction: peak }))
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    Zero,
    Spherical,
    /// Spherical draw scaled to 1 − fraction plus a spike of mass fraction·γN.
    Spike { fraction: f64 },
    Field(Vec<C64>),
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub sweeps: usize,
    pub burnin: usize,
    pub mixture: MoveMixture,
    pub scales: Option<ProposalScales>,
    pub adapt: bool,
    pub target_acceptance: f64,
    pub thin: Option<usize>,
    pub snapshots: usize,
    pub init: Init,
    /// ε for the separating-set trace; defaults to 1/log N.
    pub eps: Option<f64>,
    pub soliton: Option<SolitonTarget>,
}

impl Schedule {
    pub fn new(sweeps: usize, burnin: usize) -> Self {
        Self {
            sweeps,
            burnin,
            mixture: MoveMixture::default(),
            scales: None,
            adapt: true,
            target_acceptance: 0.34,
            thin: None,
            snapshots: 8,
            init: Init::Spherical,
            eps: None,
            soliton: None,
        }
    }

    pub fn validate(&self, params: &NlsParams) -> Result<(), NlsError> {
        let m = &self.mixture;
        for k in MoveKind::ALL {
            let w = m.weight(k);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(NlsError::NonErgodic(format!("weight of {} is {w}", k.name())));
            }
        }
        if params.boundary.is_some() {
            if m.pcn > 0.0 {
                return Err(NlsError::Unsupported("pcn"));
            }
            if m.well_jump > 0.0 {
                return Err(NlsError::Unsupported("well_jump"));
            }
        }
        if !(m.local > 0.0 || m.pcn > 0.0 || m.well_jump > 0.0) {
            return Err(NlsError::NonErgodic(
                "no irreducible move: local, pcn and well_jump all have zero weight".into(),
            ));
        }
        if self.sweeps == 0 {
            return Err(NlsError::NonErgodic("zero sweeps".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aux {
    Local { x: usize },
    Radial { x: usize, eta: f64 },
    ZeroMode { c: C64 },
    Spike { x: usize, delta: f64 },
    Pcn { beta: f64 },
    WellJump,
}

#[derive(Debug, Clone)]
pub enum Change {
    Site { x: usize, z: C64 },
    Global(Vec<C64>),
    None,
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    pub aux: Aux,
    pub change: Change,
    /// Log Metropolis–Hastings ratio; −∞ marks a constraint violation.
    pub log_ratio: f64,
    mass: f64,
    lp: f64,
    grad: f64,
}

#[derive(Debug, Clone)]
enum Dispersive {
    Massive { m: f64, log_norm: f64 },
    Massless { log_norm: f64 },
}

#[derive(Debug, Clone)]
struct SolData {
    sd: Vec<f64>,
    kernel: Vec<f64>,
    k00: f64,
    log_norm: f64,
    m: f64,
    s_lo: f64,
    s_hi: f64,
}

#[derive(Debug, Clone)]
struct JumpData {
    disp: Dispersive,
    disp_sd: Vec<f64>,
    sol: Option<SolData>,
}

#[derive(Debug, Clone)]
struct PcnData {
    m_ref: f64,
    sd: Vec<f64>,
}

/// Single Metropolis–Hastings chain; all proposals are exposed for inspection.
#[derive(Debug, Clone)]
pub struct NlsChain {
    params: NlsParams,
    nb: Vec<usize>,
    deg: usize,
    free: Vec<bool>,
    free_list: Vec<usize>,
    v: Vec<C64>,
    mass: f64,
    lp: f64,
    grad: f64,
    cap_mass: f64,
    cap2: f64,
    nun: f64,
    lam: Vec<f64>,
    fourier: Fourier,
    pub scales: ProposalScales,
    pcn: Option<PcnData>,
    jump: Option<JumpData>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl NlsChain {
    pub fn new(params: NlsParams, schedule: &Schedule, init: Vec<C64>) -> Result<Self, NlsError> {
        params.validate()?;
        schedule.validate(&params)?;
        let shape = params.shape;
        let n = shape.size();
        let free = params.free_mask();
        if !constraints_hold(&params, &init, &free) {
            return Err(NlsError::Initial);
        }
        let free_list: Vec<usize> = (0..n).filter(|&x| free[x]).collect();
        let nb = shape.neighbor_table();
        let deg = shape.degree();
        let (mass, lp, grad) = totals(&nb, deg, &init, &free, params.p);
        let fourier = Fourier::new(shape);
        let lam = shape.eigenvalues();
        let th = params.theta;
        let d = shape.d();
        let b = th * params.gamma;
        let disp_m = if schedule.mixture.pcn > 0.0 || schedule.mixture.well_jump > 0.0 {
            let cd = if d >= 3 { greens::critical_constant(d)? } else { f64::INFINITY };
            if b < cd { Some(greens::solve_mass(b, d)?) } else { None }
        } else {
            None
        };
        let pcn = if schedule.mixture.pcn > 0.0 {
            let m_ref = disp_m.unwrap_or(1.0 / (b * n as f64));
            Some(PcnData { m_ref, sd: lam.iter().map(|&l| (1.0 / (th * (l + m_ref))).sqrt()).collect() })
        } else {
            None
        };
        let jump = if schedule.mixture.well_jump > 0.0 {
            let (disp, disp_sd) = match disp_m {
                Some(m) => {
                    let log_norm = lam.iter().map(|&l| (th * (l + m) / std::f64::consts::PI).ln()).sum();
                    (Dispersive::Massive { m, log_norm }, lam.iter().map(|&l| (1.0 / (th * (l + m))).sqrt()).collect())
                }
                None => {
                    let log_norm = lam[1..].iter().map(|&l| (th * l / std::f64::consts::PI).ln()).sum::<f64>()
                        - (std::f64::consts::PI * params.gamma * n as f64).ln();
                    let sd = lam.iter().enumerate().map(|(k, &l)| if k == 0 { 0.0 } else { (1.0 / (th * l)).sqrt() });
                    (Dispersive::Massless { log_norm }, sd.collect())
                }
            };
            let sol = match schedule.soliton {
                Some(t) => {
                    let m = t.mass;
                    let ctx = GreensContext::torus_with(&fourier, m)?;
                    let kernel: Vec<f64> = ctx.kernel().iter().map(|g| g / th).collect();
                    let k00 = kernel[0];
                    let mu: Vec<f64> = lam.iter().map(|&l| 1.0 / (th * (l + m))).collect();
                    let sigma = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let center = t.a_star * t.peak_fraction * params.gamma * n as f64;
                    let half = (4.0 * sigma).max(0.05 * center);
                    Some(SolData {
                        sd: mu.iter().map(|x| x.sqrt()).collect(),
                        kernel,
                        k00,
                        log_norm: mu.iter().map(|x| -(std::f64::consts::PI * x).ln()).sum(),
                        m,
                        s_lo: (center - half).max(0.0),
                        s_hi: center + half,
                    })
                }
                None => None,
            };
            Some(JumpData { disp, disp_sd, sol })
        } else {
            None
        };
        Ok(Self {
            scales: schedule.scales.unwrap_or_else(|| ProposalScales::auto(th, d)),
            cap_mass: params.gamma * n as f64,
            cap2: params.cap2(),
            nun: params.nu_n(),
            params,
            nb,
            deg,
            free,
            free_list,
            v: init,
            mass,
            lp,
            grad,
            lam,
            fourier,
            pcn,
            jump,
        })
    }

    pub fn params(&self) -> &NlsParams {
        &self.params
    }

    pub fn state(&self) -> &[C64] {
        &self.v
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    /// Free-site mass.
    pub fn free_mass(&self) -> f64 {
        self.mass
    }

    /// ‖ψ‖_p^p over free sites.
    pub fn lp_sum(&self) -> f64 {
        self.lp
    }

    pub fn log_target(&self) -> f64 {
        self.params.theta * (self.nun * self.lp - self.grad)
    }

    /// Range of |ψ(x₀)|² drawn by the soliton half of the well-jump proposal.
    pub fn jump_window(&self) -> Option<(f64, f64)> {
        self.jump.as_ref()?.sol.as_ref().map(|s| (s.s_lo, s.s_hi))
    }

    /// Reference mass of the pCN Gaussian, if that move is configured.
    pub fn pcn_reference_mass(&self) -> Option<f64> {
        self.pcn.as_ref().map(|p| p.m_ref)
    }

    fn reject(kind: MoveKind, aux: Aux) -> Proposal {
        Proposal { kind, aux, change: Change::None, log_ratio: f64::NEG_INFINITY, mass: 0.0, lp: 0.0, grad: 0.0 }
    }

    fn site_proposal(&self, kind: MoveKind, aux: Aux, x: usize, z: C64, extra: f64) -> Proposal {
        let old = self.v[x];
        let r2 = z.norm_sqr();
        let o2 = old.norm_sqr();
        let mass = self.mass + r2 - o2;
        if r2 > self.cap2 || mass > self.cap_mass {
            return Self::reject(kind, aux);
        }
        let mut dg = 0.0;
        for &y in &self.nb[x * self.deg..(x + 1) * self.deg] {
            dg += (z - self.v[y]).norm_sqr() - (old - self.v[y]).norm_sqr();
        }
        let dl = pow_abs(r2, self.params.p) - pow_abs(o2, self.params.p);
        let th = self.params.theta;
        Proposal {
            kind,
            aux,
            change: Change::Site { x, z },
            log_ratio: th * (self.nun * dl - dg) + extra,
            mass,
            lp: self.lp + dl,
            grad: self.grad + dg,
        }
    }

    fn global_proposal(&self, kind: MoveKind, aux: Aux, w: Vec<C64>, extra: impl Fn(&Self, f64, f64, f64) -> f64) -> Proposal {
        if !self.within(&w) {
            return Self::reject(kind, aux);
        }
        let (mass, lp, grad) = totals(&self.nb, self.deg, &w, &self.free, self.params.p);
        if mass > self.cap_mass {
            return Self::reject(kind, aux);
        }
        let log_ratio = extra(self, mass, lp, grad);
        Proposal { kind, aux, change: Change::Global(w), log_ratio, mass, lp, grad }
    }

    fn within(&self, w: &[C64]) -> bool {
        self.free_list.iter().all(|&x| w[x].norm_sqr() <= self.cap2)
    }

    fn tilt_delta(&self, lp: f64, grad: f64) -> f64 {
        self.params.theta * (self.nun * (lp - self.lp) - (grad - self.grad))
    }

    pub fn propose(&self, kind: MoveKind, r: &mut ChaCha8Rng) -> Proposal {
        let n = self.params.shape.size();
        match kind {
            MoveKind::Local => {
                let x = self.free_list[r.random_range(0..self.free_list.len())];
                let s = self.scales.local;
                let z = self.v[x] + rng::complex_normal(r, s * s);
                self.site_proposal(kind, Aux::Local { x }, x, z, 0.0)
            }
            MoveKind::Radial => {
                let x = self.free_list[r.random_range(0..self.free_list.len())];
                let eta = self.scales.radial * r.sample::<f64, _>(StandardNormal);
                let z = self.v[x] * eta.exp();
                self.site_proposal(kind, Aux::Radial { x, eta }, x, z, 2.0 * eta)
            }
            MoveKind::ZeroMode => {
                let s = self.scales.zero_mode;
                let c = rng::complex_normal(r, s * s);
                let shift = c / (n as f64).sqrt();
                let mut w = self.v.clone();
                for &x in &self.free_list {
                    w[x] += shift;
                }
                self.global_proposal(kind, Aux::ZeroMode { c }, w, |c, _, lp, grad| c.tilt_delta(lp, grad))
            }
            MoveKind::Spike => {
                let k = self.free_list.len();
                let delta = self.scales.spike * n as f64 * (2.0 * r.random::<f64>() - 1.0);
                let x = self.free_list[r.random_range(0..k)];
                let aux = Aux::Spike { x, delta };
                if k < 2 {
                    return Self::reject(kind, aux);
                }
                let s = self.v[x].norm_sqr();
                let rest = self.mass - s;
                let s_new = s + delta;
                let rest_new = rest - delta;
                if s <= 0.0 || rest <= 0.0 || s_new < 0.0 || rest_new <= 0.0 {
                    return Self::reject(kind, aux);
                }
                let fx = (s_new / s).sqrt();
                let fr = (rest_new / rest).sqrt();
                let mut w = self.v.clone();
                for &y in &self.free_list {
                    w[y] *= if y == x { fx } else { fr };
                }
                let jac = (k as f64 - 2.0) * (rest_new / rest).ln();
                self.global_proposal(kind, aux, w, move |c, _, lp, grad| c.tilt_delta(lp, grad) + jac)
            }
            MoveKind::Pcn => {
                let Some(pd) = &self.pcn else { return Self::reject(kind, Aux::Pcn { beta: 0.0 }) };
                let beta = self.scales.pcn;
                let rho = (1.0 - beta * beta).sqrt();
                let mut xi: Vec<C64> = pd.sd.iter().map(|&s| rng::complex_normal(r, s * s)).collect();
                self.fourier.inverse_in_place(&mut xi);
                let w: Vec<C64> = self.v.iter().zip(&xi).map(|(a, b)| a * rho + b * beta).collect();
                let m_ref = pd.m_ref;
                self.global_proposal(kind, Aux::Pcn { beta }, w, move |c, mass, lp, _| {
                    let th = c.params.theta;
                    th * c.nun * (lp - c.lp) + th * m_ref * (mass - c.mass)
                })
            }
            MoveKind::WellJump => {
                let Some(_) = &self.jump else { return Self::reject(kind, Aux::WellJump) };
                let w = self.sample_jump(r);
                let q_new = self.jump_log_density(&w);
                let q_old = self.jump_log_density(&self.v);
                self.global_proposal(kind, Aux::WellJump, w, move |c, _, lp, grad| {
                    c.tilt_delta(lp, grad) + q_old - q_new
                })
            }
        }
    }

    fn sample_jump(&self, r: &mut ChaCha8Rng) -> Vec<C64> {
        let jd = self.jump.as_ref().expect("well-jump data");
        let shape = self.params.shape;
        let n = shape.size();
        let use_sol = jd.sol.is_some() && r.random::<f64>() < 0.5;
        if !use_sol {
            let mut y: Vec<C64> = jd.disp_sd.iter().map(|&s| rng::complex_normal(r, s * s)).collect();
            if let Dispersive::Massless { .. } = jd.disp {
                y[0] = rng::uniform_disc(r, (self.params.gamma * n as f64).sqrt());
            }
            self.fourier.inverse_in_place(&mut y);
            return y;
        }
        let sd = jd.sol.as_ref().expect("soliton data");
        let mut phi: Vec<C64> = sd.sd.iter().map(|&s| rng::complex_normal(r, s * s)).collect();
        self.fourier.inverse_in_place(&mut phi);
        let x0 = r.random_range(0..n);
        let s = sd.s_lo + (sd.s_hi - sd.s_lo) * r.random::<f64>();
        let ang = std::f64::consts::TAU * r.random::<f64>();
        let z = C64::from_polar(s.sqrt(), ang);
        let c = (z - phi[x0]) / sd.k00;
        (0..n).map(|x| phi[x] + c * sd.kernel[greens::site_difference(shape, x, x0)]).collect()
    }

    /// Log density of the well-jump proposal, ½ q_disp + ½ q_sol.
    pub fn jump_log_density(&self, v: &[C64]) -> f64 {
        let Some(jd) = &self.jump else { return f64::NEG_INFINITY };
        let th = self.params.theta;
        let n = self.params.shape.size();
        let mut vh = v.to_vec();
        self.fourier.forward_in_place(&mut vh);
        let disp = match jd.disp {
            Dispersive::Massive { m, log_norm } => {
                log_norm - th * vh.iter().zip(&self.lam).map(|(z, l)| (l + m) * z.norm_sqr()).sum::<f64>()
            }
            Dispersive::Massless { log_norm } => {
                if vh[0].norm_sqr() > self.params.gamma * n as f64 {
                    f64::NEG_INFINITY
                } else {
                    log_norm - th * vh.iter().zip(&self.lam).skip(1).map(|(z, l)| l * z.norm_sqr()).sum::<f64>()
                }
            }
        };
        let Some(sd) = &jd.sol else { return disp };
        let gauss = sd.log_norm - th * vh.iter().zip(&self.lam).map(|(z, l)| (l + sd.m) * z.norm_sqr()).sum::<f64>();
        let pi = std::f64::consts::PI;
        let log_pz = -(sd.s_hi - sd.s_lo).ln() - pi.ln();
        let log_marg_norm = -(pi * sd.k00).ln();
        let terms: Vec<f64> = v
            .iter()
            .map(|z| {
                let s = z.norm_sqr();
                if s >= sd.s_lo && s <= sd.s_hi {
                    log_pz - (log_marg_norm - s / sd.k00)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let sol = -(n as f64).ln() + log_sum_exp(&terms) + gauss;
        let half = 0.5f64.ln();
        log_sum_exp(&[half + disp, half + sol])
    }

    /// Field the proposal would move to.
    pub fn candidate(&self, p: &Proposal) -> Option<Vec<C64>> {
        match &p.change {
            Change::Site { x, z } => {
                let mut w = self.v.clone();
                w[*x] = *z;
                Some(w)
            }
            Change::Global(w) => Some(w.clone()),
            Change::None => None,
        }
    }

    pub fn apply(&mut self, p: Proposal) {
        match p.change {
            Change::Site { x, z } => self.v[x] = z,
            Change::Global(w) => self.v = w,
            Change::None => return,
        }
        self.mass = p.mass;
        self.lp = p.lp;
        self.grad = p.grad;
    }

    /// One Metropolis–Hastings step; returns acceptance.
    pub fn step(&mut self, kind: MoveKind, r: &mut ChaCha8Rng) -> bool {
        let p = self.propose(kind, r);
        if p.log_ratio == f64::NEG_INFINITY {
            return false;
        }
        let u: f64 = r.random();
        if u.ln() < p.log_ratio {
            self.apply(p);
            true
        } else {
            false
        }
    }

    fn refresh(&mut self) {
        let (m, l, g) = totals(&self.nb, self.deg, &self.v, &self.free, self.params.p);
        self.mass = m;
        self.lp = l;
        self.grad = g;
    }

    fn sweep(&mut self, mix: &MoveMixture, r: &mut ChaCha8Rng, counts: &mut BTreeMap<MoveKind, (u64, u64)>) {
        let wl = mix.local + mix.radial;
        if wl > 0.0 {
            for _ in 0..self.free_list.len() {
                let kind = if r.random::<f64>() * wl < mix.local { MoveKind::Local } else { MoveKind::Radial };
                let a = self.step(kind, r);
                let e = counts.entry(kind).or_default();
                e.0 += 1;
                e.1 += a as u64;
            }
        }
        for kind in [MoveKind::ZeroMode, MoveKind::Spike, MoveKind::Pcn, MoveKind::WellJump] {
            let w = mix.weight(kind);
            if w <= 0.0 {
                continue;
            }
            let reps = w.floor() as usize + usize::from(r.random::<f64>() < w.fract());
            for _ in 0..reps {
                let a = self.step(kind, r);
                let e = counts.entry(kind).or_default();
                e.0 += 1;
                e.1 += a as u64;
            }
        }
        self.refresh();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
    pub rate: f64,
    pub scale: f64,
}

/// Per-sweep observables after burn-in.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Traces {
    /// ‖ψ‖₂²/N
    pub mass: Vec<f64>,
    /// ‖ψ‖_∞/√N
    pub linf: Vec<f64>,
    /// ν_N‖ψ‖_p^p
    pub tilt: Vec<f64>,
    /// ‖ψ|_U‖₂²/N for the separating set U(ψ, ε)
    pub separating_fraction: Vec<f64>,
    /// Separating-set fraction every 10 burn-in sweeps, starting from the initial state.
    pub burnin_fraction: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainRecord {
    pub seed: u64,
    pub chain: u64,
    pub sweeps: usize,
    pub burnin: usize,
    pub thinning: usize,
    pub eps: f64,
    pub moves: BTreeMap<MoveKind, MoveStats>,
    #[serde(skip)]
    pub traces: Traces,
    #[serde(skip)]
    pub snapshots: Vec<Field>,
    #[serde(skip)]
    pub final_state: Option<Field>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub mass: Estimate,
    pub linf: Estimate,
    pub tilt: Estimate,
    pub separating_fraction: Estimate,
    pub tilt_autocorr_time: f64,
}

impl ChainRecord {
    pub fn summary(&self) -> ChainSummary {
        let t = &self.traces;
        ChainSummary {
            mass: stats::batch_means(&t.mass),
            linf: stats::batch_means(&t.linf),
            tilt: stats::batch_means(&t.tilt),
            separating_fraction: stats::batch_means(&t.separating_fraction),
            tilt_autocorr_time: stats::integrated_autocorr(&t.tilt),
        }
    }
}

fn initial_state(params: &NlsParams, init: &Init, seed: u64, chain: u64) -> Result<Vec<C64>, NlsError> {
    let shape = params.shape;
    let n = shape.size();
    let free = params.free_mask();
    let mut base = vec![C64::new(0.0, 0.0); n];
    if let Some(b) = &params.boundary {
        for (j, &u) in b.hole.sites().iter().enumerate() {
            base[u] = b.values[j];
        }
    }
    let spherical = |scale: f64| -> Result<Vec<C64>, NlsError> {
        let s = SphericalSampler::new(params.spherical())?;
        let mut r = rng::stream(seed, tag::NLS, 2 * chain + 1);
        let mut out = base.clone();
        if let Some((v, _)) = s.draw(&mut r, 1_000_000) {
            for x in 0..n {
                if free[x] {
                    out[x] = v[x] * scale;
                }
            }
        }
        Ok(out)
    };
    let v = match init {
        Init::Zero => base.clone(),
        Init::Spherical => spherical(1.0)?,
        Init::Spike { fraction } => {
            let mut v = spherical((1.0 - fraction).max(0.0).sqrt())?;
            let x = (0..n).find(|&x| free[x]).ok_or(NlsError::Initial)?;
            v[x] = C64::new((fraction * params.gamma * n as f64).sqrt() * 0.999, 0.0);
            v
        }
        Init::Field(v) => v.clone(),
    };
    if constraints_hold(params, &v, &free) {
        Ok(v)
    } else if matches!(init, Init::Spherical) {
        Ok(base)
    } else {
        Err(NlsError::Initial)
    }
}

/// Runs one chain with stream index 0.
pub fn run_mcmc(params: &NlsParams, schedule: &Schedule, seed: u64) -> Result<ChainRecord, NlsError> {
    run_chain(params, schedule, seed, 0, |_| {})
}

/// Independent chains on separate streams, merged in chain order.
pub fn run_chains(params: &NlsParams, schedule: &Schedule, seed: u64, chains: usize) -> Result<Vec<ChainRecord>, NlsError> {
    (0..chains as u64).into_par_iter().map(|c| run_chain(params, schedule, seed, c, |_| {})).collect()
}

/// Runs a chain and hands every thinned post-burn-in state to `observe`.
pub fn run_chain(
    params: &NlsParams,
    schedule: &Schedule,
    seed: u64,
    chain: u64,
    mut observe: impl FnMut(&NlsChain),
) -> Result<ChainRecord, NlsError> {
    params.validate()?;
    schedule.validate(params)?;
    let init = initial_state(params, &schedule.init, seed, chain)?;
    let mut c = NlsChain::new(params.clone(), schedule, init)?;
    let mut r = rng::stream(seed, tag::NLS, 2 * chain);
    let shape = params.shape;
    let n = shape.size() as f64;
    let eps = schedule.eps.unwrap_or_else(|| tempering::experiment_eps(shape.size()));
    let mix = schedule.mixture;

    const WINDOW: usize = 50;
    let adapt_until = if schedule.adapt { schedule.burnin * 4 / 5 } else { 0 };
    let mut window: BTreeMap<MoveKind, (u64, u64)> = BTreeMap::new();
    let mut tilt_burn = Vec::new();
    let mut burnin_fraction = Vec::new();
    for s in 0..schedule.burnin {
        if s % 10 == 0 {
            let sep = tempering::build(shape, &c.v, eps);
            burnin_fraction.push(sep.sites.iter().map(|&x| c.v[x].norm_sqr()).sum::<f64>() / n);
        }
        c.sweep(&mix, &mut r, &mut window);
        if s >= schedule.burnin / 2 {
            tilt_burn.push(c.nun * c.lp);
        }
        if (s + 1) % WINDOW == 0 {
            if s < adapt_until {
                for (&k, &(p, a)) in &window {
                    if k == MoveKind::WellJump || p < 10 {
                        continue;
                    }
                    let rate = a as f64 / p as f64;
                    let cur = c.scales.get(k);
                    c.scales.set(k, cur * (1.5 * (rate - schedule.target_acceptance)).exp());
                }
            }
            window.clear();
        }
    }
    let thinning = schedule.thin.unwrap_or_else(|| stats::integrated_autocorr(&tilt_burn).ceil() as usize).max(1);

    let mut counts: BTreeMap<MoveKind, (u64, u64)> = BTreeMap::new();
    let mut traces = Traces { burnin_fraction, ..Traces::default() };
    let mut snapshots = Vec::new();
    let snap_every = (schedule.sweeps / schedule.snapshots.max(1)).max(1);
    for s in 0..schedule.sweeps {
        c.sweep(&mix, &mut r, &mut counts);
        let v = &c.v;
        let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let linf = lattice::linf(v);
        traces.mass.push(total / n);
        traces.linf.push(linf / n.sqrt());
        traces.tilt.push(c.nun * c.lp);
        let sep = tempering::build(shape, v, eps);
        traces.separating_fraction.push(sep.sites.iter().map(|&x| v[x].norm_sqr()).sum::<f64>() / n);
        if s % thinning == 0 {
            observe(&c);
        }
        if schedule.snapshots > 0 && s % snap_every == snap_every - 1 && snapshots.len() < schedule.snapshots {
            assert!(constraints_hold(params, v, &c.free), "retained state violates the constraints");
            snapshots.push(Field::from_values(shape, v.clone()).expect("finite state"));
        }
    }
    let moves = counts
        .iter()
        .map(|(&k, &(p, a))| {
            (k, MoveStats { proposed: p, accepted: a, rate: if p > 0 { a as f64 / p as f64 } else { 0.0 }, scale: c.scales.get(k) })
        })
        .collect();
    Ok(ChainRecord {
        seed,
        chain,
        sweeps: schedule.sweeps,
        burnin: schedule.burnin,
        thinning,
        eps,
        moves,
        traces,
        snapshots,
        final_state: Some(Field::from_values(shape, c.v.clone()).expect("finite state")),
    })
}

/// Self-normalized importance weights exp(θν_N‖ψ‖_p^p) on spherical samples.
#[derive(Debug, Clone, Serialize)]
pub struct Reweighted {
    #[serde(skip)]
    pub log_weights: Vec<f64>,
    /// Normalized weights summing to one.
    #[serde(skip)]
    pub weights: Vec<f64>,
    pub ess: f64,
    /// Estimate of Z_N(θ,ν)/Z_sph,N(θ) = E_sph exp(θν_N‖ψ‖_p^p).
    pub partition_ratio: Estimate,
    pub log_partition_ratio: f64,
}

impl Reweighted {
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted mean with a batch-means standard error of the ratio estimator.
    pub fn expect_batch(&self, values: &[f64]) -> Estimate {
        let a: Vec<f64> = self.weights.iter().zip(values).map(|(w, v)| w * v).collect();
        stats::ratio_batch(&a, &self.weights)
    }
}

pub fn importance_reweight_spherical(
    batch: &SampleBatch,
    params: &NlsParams,
    ess_floor: f64,
) -> Result<Reweighted, NlsError> {
    params.validate()?;
    if batch.shape != params.shape {
        return Err(NlsError::Mismatch("shape"));
    }
    if batch.theta != params.theta {
        return Err(NlsError::Mismatch("theta"));
    }
    if batch.gamma != params.gamma {
        return Err(NlsError::Mismatch("gamma"));
    }
    let free = params.free_mask();
    let nun = params.nu_n();
    let log_weights: Vec<f64> = batch
        .fields
        .iter()
        .map(|f| {
            let lp: f64 = f.values().iter().zip(&free).filter(|(_, &fr)| fr).map(|(z, _)| pow_abs(z.norm_sqr(), params.p)).sum();
            params.theta * nun * lp
        })
        .collect();
    let mx = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_weights.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = scaled.iter().sum();
    let weights: Vec<f64> = scaled.iter().map(|w| w / total).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let est = stats::batch_means(&scaled);
    let scale = mx.exp();
    let partition_ratio = Estimate { mean: est.mean * scale, se: est.se * scale };
    let log_partition_ratio = mx + est.mean.ln();
    if ess < ess_floor {
        return Err(NlsError::LowEss { ess, floor: ess_floor });
    }
    Ok(Reweighted { log_weights, weights, ess, partition_ratio, log_partition_ratio })
}
