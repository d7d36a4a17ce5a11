//! Free-energy landscape: soliton energy I, threshold R_p, entropy W, F = W + (θ/ν) I,
//! its minimizers and the phase curve ν_c(θ).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::greens::{self, GreensError, ZdIntegrals};
use crate::lattice::{pow_abs, TorusShape};
use crate::rng::{self, tag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("box too small: boundary tail {tail:.3e} at side {side}")]
    BoxTooSmall { tail: f64, side: usize },
    #[error("mass must be positive, got {0}")]
    Mass(f64),
    #[error("exponent p must exceed 2, got {0}")]
    Exponent(f64),
    #[error("R_p estimates disagree: quotient {quotient:.4}, bisection {bisection:.4}")]
    Disagree { quotient: f64, bisection: f64 },
    #[error("soliton table covers x <= {max}, requested {x}")]
    TableRange { x: f64, max: f64 },
    #[error("no supercritical witness for nu up to {0}")]
    Bracket(f64),
    #[error("theta(1-a) = {0} is not below C_d")]
    NotReduced(f64),
    #[error(transparent)]
    Greens(#[from] GreensError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SolitonOptions {
    pub box_side: usize,
    pub max_box: usize,
    pub plateau_tol: f64,
    pub tail_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolitonOptions {
    fn default() -> Self {
        Self { box_side: 16, max_box: 64, plateau_tol: 1e-6, tail_tol: 1e-10, max_iter: 20_000, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolitonResult {
    /// Reported I_L(a): plateau values are set to 0.
    pub value: f64,
    pub raw_value: f64,
    /// I'(a) from the Lagrange multiplier ⟨∇H, ψ⟩ / 2a.
    pub derivative: f64,
    pub plateau: bool,
    pub box_side: usize,
    pub tail: f64,
    #[serde(skip)]
    pub profile: Vec<f64>,
}

/// Real field on a periodic box with a neighbor table.
struct BoxGeom {
    shape: TorusShape,
    nb: Vec<usize>,
}

impl BoxGeom {
    fn new(d: usize, side: usize) -> Self {
        let shape = TorusShape::new(d, side).expect("valid box");
        Self { nb: shape.neighbor_table(), shape }
    }

    fn len(&self) -> usize {
        self.shape.size()
    }

    fn neg_lap(&self, v: &[f64], out: &mut [f64]) {
        let k = 2 * self.shape.d();
        for x in 0..v.len() {
            let s: f64 = self.nb[x * k..(x + 1) * k].iter().map(|&y| v[y]).sum();
            out[x] = k as f64 * v[x] - s;
        }
    }
}

/// H_κ(ψ) = ‖∇ψ‖² − κ (2/p) ‖ψ‖_p^p and its gradient.
fn energy_grad(g: &BoxGeom, v: &[f64], p: f64, kappa: f64, grad: &mut [f64]) -> f64 {
    g.neg_lap(v, grad);
    let mut kin = 0.0;
    let mut pot = 0.0;
    for x in 0..v.len() {
        kin += v[x] * grad[x];
        let r2 = v[x] * v[x];
        let vp = pow_abs(r2, p);
        pot += vp;
        let dv = if r2 > 0.0 { vp / r2 * v[x] } else { 0.0 };
        grad[x] = 2.0 * grad[x] - 2.0 * kappa * dv;
    }
    kin - kappa * (2.0 / p) * pot
}

fn energy_only(g: &BoxGeom, v: &[f64], p: f64, kappa: f64, scratch: &mut [f64]) -> f64 {
    g.neg_lap(v, scratch);
    let mut kin = 0.0;
    let mut pot = 0.0;
    for x in 0..v.len() {
        kin += v[x] * scratch[x];
        pot += pow_abs(v[x] * v[x], p);
    }
    kin - kappa * (2.0 / p) * pot
}

fn normalize(v: &mut [f64], a: f64) {
    let s: f64 = v.iter().map(|x| x * x).sum();
    let f = (a / s).sqrt();
    for x in v.iter_mut() {
        *x *= f;
    }
}

/// Minimizes a smooth objective on the sphere ‖ψ‖² = a by projected gradient steps
/// with Barzilai–Borwein trial lengths and Armijo backtracking.
fn sphere_descent(
    a: f64,
    mut v: Vec<f64>,
    max_iter: usize,
    mut obj: impl FnMut(&[f64], &mut [f64]) -> f64,
    mut value: impl FnMut(&[f64]) -> f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = v.len();
    normalize(&mut v, a);
    let mut grad = vec![0.0; n];
    let mut e = obj(&v, &mut grad);
    let mut gt = project(&grad, &v, a);
    let mut tau = 1e-2;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut cand = vec![0.0; n];
    let mut small = 0;
    for _ in 0..max_iter {
        let gn2: f64 = gt.iter().map(|x| x * x).sum();
        if gn2.sqrt() < 1e-11 * (1.0 + e.abs()) {
            break;
        }
        if let Some((pv, pg)) = &prev {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..n {
                let s = v[i] - pv[i];
                ss += s * s;
                sy += s * (gt[i] - pg[i]);
            }
            if sy > 0.0 {
                tau = (ss / sy).clamp(1e-8, 1e3);
            } else {
                tau = (tau * 2.0).min(1e3);
            }
        }
        let mut accepted = false;
        let mut e_new = e;
        for _ in 0..60 {
            for i in 0..n {
                cand[i] = v[i] - tau * gt[i];
            }
            normalize(&mut cand, a);
            e_new = value(&cand);
            if e_new <= e - 1e-4 * tau * gn2 {
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            break;
        }
        prev = Some((v.clone(), gt.clone()));
        std::mem::swap(&mut v, &mut cand);
        let de = e - e_new;
        e = obj(&v, &mut grad);
        gt = project(&grad, &v, a);
        if de < 1e-14 * (1.0 + e.abs()) {
            small += 1;
            if small > 5 {
                break;
            }
        } else {
            small = 0;
        }
    }
    (e, v, grad)
}

fn project(g: &[f64], v: &[f64], a: f64) -> Vec<f64> {
    let c: f64 = g.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() / a;
    g.iter().zip(v).map(|(x, y)| x - c * y).collect()
}

fn center(geom: &BoxGeom) -> usize {
    let c = geom.shape.n() / 2;
    geom.shape.index(&vec![c; geom.shape.d()])
}

fn bump(geom: &BoxGeom, width: f64) -> Vec<f64> {
    let shape = geom.shape;
    let c = shape.n() as f64 / 2.0;
    (0..shape.size())
        .map(|x| {
            let r2: f64 = shape.coords(x).iter().map(|&u| (u as f64 - c).powi(2)).sum();
            (-r2 / (2.0 * width * width)).exp()
        })
        .collect()
}

fn initial_profiles(geom: &BoxGeom, seed: u64) -> Vec<Vec<f64>> {
    let mut spike = vec![0.0; geom.len()];
    spike[center(geom)] = 1.0;
    let mut r = rng::stream(seed, tag::LANDSCAPE, geom.len() as u64);
    let random: Vec<f64> = (0..geom.len()).map(|_| r.random::<f64>()).collect();
    vec![spike, bump(geom, 0.5), bump(geom, 1.5), bump(geom, 3.0), random]
}

/// Max |ψ|² on the shell of sites at ℓ∞ distance side/2 from the peak.
fn boundary_tail(geom: &BoxGeom, v: &[f64]) -> f64 {
    let shape = geom.shape;
    let peak = (0..v.len()).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap_or(0);
    let pc = shape.coords(peak);
    let half = shape.n() / 2;
    (0..v.len())
        .filter(|&x| {
            shape.coords(x).iter().zip(&pc).any(|(&u, &w)| {
                let t = u.abs_diff(w);
                t.min(shape.n() - t) >= half
            })
        })
        .map(|x| v[x] * v[x])
        .fold(0.0, f64::max)
}

fn solve_box(
    d: usize,
    side: usize,
    a: f64,
    p: f64,
    kappa: f64,
    opts: &SolitonOptions,
    extra_init: Option<&[f64]>,
) -> SolitonResult {
    let geom = BoxGeom::new(d, side);
    let mut inits = initial_profiles(&geom, opts.seed);
    if let Some(e) = extra_init {
        if e.len() == geom.len() {
            inits.insert(0, e.to_vec());
        }
    }
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for init in inits {
        let mut scratch = vec![0.0; geom.len()];
        let res = sphere_descent(
            a,
            init,
            opts.max_iter,
            |v, g| energy_grad(&geom, v, p, kappa, g),
            |v| energy_only(&geom, v, p, kappa, &mut scratch),
        );
        if best.as_ref().is_none_or(|b| res.0 < b.0) {
            best = Some(res);
        }
    }
    let (e, v, grad) = best.expect("at least one initialization");
    let lagrange = grad.iter().zip(&v).map(|(g, x)| g * x).sum::<f64>() / (2.0 * a);
    let vmax2 = v.iter().map(|x| x * x).fold(0.0, f64::max);
    let delocalized = vmax2 <= 2.0 * a / geom.len() as f64;
    let plateau = e > -opts.plateau_tol || delocalized;
    let tail = if plateau { 0.0 } else { boundary_tail(&geom, &v) };
    SolitonResult {
        value: if plateau { 0.0 } else { e },
        raw_value: e,
        derivative: if plateau { 0.0 } else { lagrange },
        plateau,
        box_side: side,
        tail,
        profile: v,
    }
}

/// I(a) = inf{‖∇ψ‖² − (2/p)‖ψ‖_p^p : ‖ψ‖² = a} on a periodic box, enlarged until the
/// minimizer's boundary tail is below the tolerance.
pub fn soliton_energy(a: f64, p: f64, d: usize, opts: &SolitonOptions) -> Result<SolitonResult, LandscapeError> {
    soliton_energy_scaled(a, p, d, 1.0, opts)
}

/// Same with the ℓ^p term multiplied by κ, i.e. κ = ν^{(p−2)/2} gives the ν-form.
pub fn soliton_energy_scaled(
    a: f64,
    p: f64,
    d: usize,
    kappa: f64,
    opts: &SolitonOptions,
) -> Result<SolitonResult, LandscapeError> {
    if !(a > 0.0) {
        return Err(LandscapeError::Mass(a));
    }
    if !(p > 2.0) {
        return Err(LandscapeError::Exponent(p));
    }
    let mut side = opts.box_side;
    loop {
        let r = solve_box(d, side, a, p, kappa, opts, None);
        if r.plateau || r.tail < opts.tail_tol * a {
            return Ok(r);
        }
        if side * 2 > opts.max_box {
            return Err(LandscapeError::BoxTooSmall { tail: r.tail, side });
        }
        side *= 2;
    }
}

/// ‖ψ‖^{p−2} ‖∇ψ‖² / ‖ψ‖_p^p on a periodic box.
pub fn weinstein_quotient(d: usize, side: usize, v: &[f64], p: f64) -> f64 {
    let geom = BoxGeom::new(d, side);
    let mut lap = vec![0.0; v.len()];
    geom.neg_lap(v, &mut lap);
    let kin: f64 = v.iter().zip(&lap).map(|(a, b)| a * b).sum();
    let m: f64 = v.iter().map(|x| x * x).sum();
    let pp: f64 = v.iter().map(|x| pow_abs(x * x, p)).sum();
    m.powf(0.5 * (p - 2.0)) * kin / pp
}

#[derive(Debug, Clone, Serialize)]
pub struct GnsResult {
    pub r_p: f64,
    pub q_min: f64,
    pub r_p_bisection: f64,
    pub relative_gap: f64,
}

/// R_p from the minimal Weinstein quotient, (2/p) R_p^{(p−2)/2} = Q_min, cross-checked
/// against sup{a : I(a) ≥ −tol} by bisection.
pub fn gns_threshold(p: f64, d: usize, opts: &SolitonOptions) -> Result<GnsResult, LandscapeError> {
    if !(p > 2.0) {
        return Err(LandscapeError::Exponent(p));
    }
    if p <= 2.0 + 4.0 / d as f64 {
        return Ok(GnsResult { r_p: 0.0, q_min: 0.0, r_p_bisection: 0.0, relative_gap: 0.0 });
    }
    let q_min = weinstein_minimum(p, d, opts);
    let r_p = (0.5 * p * q_min).powf(2.0 / (p - 2.0));
    let crosses = |a: f64| -> Result<bool, LandscapeError> {
        Ok(soliton_energy(a, p, d, opts)?.value < -opts.plateau_tol)
    };
    let mut lo = 0.5 * r_p;
    let mut hi = 2.0 * r_p;
    while crosses(lo)? {
        lo *= 0.5;
    }
    while !crosses(hi)? {
        hi *= 2.0;
    }
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if crosses(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r_b = 0.5 * (lo + hi);
    let gap = (r_p - r_b).abs() / r_b;
    if gap > 0.05 {
        return Err(LandscapeError::Disagree { quotient: r_p, bisection: r_b });
    }
    Ok(GnsResult { r_p, q_min, r_p_bisection: r_b, relative_gap: gap })
}

/// Minimal Weinstein quotient over multiple initializations.
pub fn weinstein_minimum(p: f64, d: usize, opts: &SolitonOptions) -> f64 {
    let geom = BoxGeom::new(d, opts.box_side);
    let mut best = f64::INFINITY;
    for init in initial_profiles(&geom, opts.seed) {
        let mut scratch = vec![0.0; geom.len()];
        let obj = |v: &[f64], g: &mut [f64]| -> f64 {
            geom.neg_lap(v, g);
            let kin: f64 = v.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let pp: f64 = v.iter().map(|x| pow_abs(x * x, p)).sum();
            for x in 0..v.len() {
                let r2 = v[x] * v[x];
                let dv = if r2 > 0.0 { pow_abs(r2, p) / r2 * v[x] } else { 0.0 };
                g[x] = 2.0 * g[x] / kin - p * dv / pp;
            }
            kin.ln() - pp.ln()
        };
        let val = |v: &[f64]| -> f64 {
            geom.neg_lap(v, &mut scratch);
            let kin: f64 = v.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum();
            let pp: f64 = v.iter().map(|x| pow_abs(x * x, p)).sum();
            kin.ln() - pp.ln()
        };
        let (e, _, _) = sphere_descent(1.0, init, opts.max_iter, obj, val);
        best = best.min(e.exp());
    }
    best
}

/// W(b) = sup_{m ≥ 0} [∫ log(λ + m) dκ − m b], tabulated along the mass parameter.
#[derive(Debug, Clone)]
pub struct EntropyTable {
    d: usize,
    cd: f64,
    l0: f64,
    /// (b, W, m) sorted by increasing b.
    rows: Vec<(f64, f64, f64)>,
}

impl EntropyTable {
    pub fn new(d: usize) -> Result<Self, LandscapeError> {
        let zd = ZdIntegrals::new(d);
        let cd = zd.greens_diag(0.0)?;
        let l0 = zd.log_integral(0.0)?;
        let count = 2400;
        let (lo, hi) = (1e-12f64.ln(), 1e7f64.ln());
        let mut rows: Vec<(f64, f64, f64)> = (0..count)
            .map(|j| {
                let m = (lo + (hi - lo) * j as f64 / (count - 1) as f64).exp();
                let b = zd.greens_diag(m).expect("positive mass");
                let l = zd.log_integral(m).expect("positive mass");
                (b, l - m * b, m)
            })
            .collect();
        rows.push((cd, l0, 0.0));
        rows.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(Self { d, cd, l0, rows })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn critical(&self) -> f64 {
        self.cd
    }

    pub fn w(&self, b: f64) -> f64 {
        if b >= self.cd {
            return self.l0;
        }
        if b <= 0.0 {
            return f64::INFINITY;
        }
        let r = &self.rows;
        if b < r[0].0 {
            // Deep in the massive regime W ≈ log(1/b) + O(b).
            return r[0].1 + (r[0].0 / b).ln();
        }
        let j = r.partition_point(|row| row.0 <= b).min(r.len() - 1).max(1);
        let (b0, w0, m0) = r[j - 1];
        let (b1, w1, m1) = r[j];
        hermite(b, b0, b1, w0, w1, -m0, -m1)
    }

    /// m*(b) = −W'(b).
    pub fn m_star(&self, b: f64) -> f64 {
        if b >= self.cd {
            return 0.0;
        }
        let r = &self.rows;
        let j = r.partition_point(|row| row.0 <= b).min(r.len() - 1).max(1);
        let (b0, _, m0) = r[j - 1];
        let (b1, _, m1) = r[j];
        let t = ((b - b0) / (b1 - b0)).clamp(0.0, 1.0);
        m0 + t * (m1 - m0)
    }
}

fn hermite(x: f64, x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}

/// W(b) computed directly from the mass equation.
pub fn entropy_w(b: f64, d: usize) -> Result<f64, LandscapeError> {
    let zd = ZdIntegrals::new(d);
    let cd = zd.greens_diag(0.0)?;
    if b >= cd {
        return Ok(zd.log_integral(0.0)?);
    }
    if !(b > 0.0) {
        return Ok(f64::INFINITY);
    }
    let m = greens::solve_mass_with(&zd, b)?;
    Ok(zd.log_integral(m)? - m * b)
}

/// Soliton-branch values I(x) on a grid, followed downward by continuation.
#[derive(Debug, Clone, Serialize)]
pub struct SolitonTable {
    pub p: f64,
    pub d: usize,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    pub r_p: f64,
}

impl SolitonTable {
    pub fn build(p: f64, d: usize, x_max: f64, step: f64, opts: &SolitonOptions) -> Result<Self, LandscapeError> {
        let gns = gns_threshold(p, d, opts)?;
        let r_p = gns.r_p_bisection;
        let start = (r_p - 0.6).max(step);
        let count = ((x_max - start) / step).ceil() as usize + 1;
        let mut xs: Vec<f64> = (0..count).map(|j| x_max - j as f64 * step).collect();
        let mut values = Vec::new();
        let mut derivs = Vec::new();
        let mut prev: Option<Vec<f64>> = None;
        let mut kept = Vec::new();
        for &x in &xs {
            let r = solve_branch(d, opts.box_side, x, p, opts, prev.as_deref());
            if r.plateau {
                break;
            }
            if r.tail >= opts.tail_tol * x {
                return Err(LandscapeError::BoxTooSmall { tail: r.tail, side: r.box_side });
            }
            values.push(r.raw_value);
            derivs.push(r.derivative);
            kept.push(x);
            prev = Some(r.profile);
        }
        xs = kept;
        xs.reverse();
        values.reverse();
        derivs.reverse();
        Ok(Self { p, d, xs, values, derivs, r_p })
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap_or(&0.0)
    }

    /// I(x) = min(0, soliton branch); zero below the tabulated branch.
    pub fn i(&self, x: f64) -> Result<f64, LandscapeError> {
        if x > self.x_max() + 1e-12 {
            return Err(LandscapeError::TableRange { x, max: self.x_max() });
        }
        if self.xs.is_empty() || x <= self.xs[0] {
            return Ok(0.0);
        }
        let j = self.xs.partition_point(|&t| t <= x).min(self.xs.len() - 1).max(1);
        let v = hermite(
            x,
            self.xs[j - 1],
            self.xs[j],
            self.values[j - 1],
            self.values[j],
            self.derivs[j - 1],
            self.derivs[j],
        );
        Ok(v.min(0.0))
    }

    /// Zero crossing of the tabulated branch.
    pub fn crossing(&self) -> f64 {
        for j in 1..self.xs.len() {
            if self.values[j] < 0.0 && self.values[j - 1] >= 0.0 {
                let (mut lo, mut hi) = (self.xs[j - 1], self.xs[j]);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let v = hermite(
                        mid,
                        self.xs[j - 1],
                        self.xs[j],
                        self.values[j - 1],
                        self.values[j],
                        self.derivs[j - 1],
                        self.derivs[j],
                    );
                    if v < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
        }
        self.r_p
    }
}

/// Branch continuation: descent from the previous profile only, keeping
/// the local soliton even where its energy is positive.
fn solve_branch(d: usize, side: usize, a: f64, p: f64, opts: &SolitonOptions, init: Option<&[f64]>) -> SolitonResult {
    let geom = BoxGeom::new(d, side);
    let start = match init {
        Some(v) => v.to_vec(),
        None => {
            let mut s = vec![0.0; geom.len()];
            s[center(&geom)] = 1.0;
            s
        }
    };
    let mut scratch = vec![0.0; geom.len()];
    let (e, v, grad) = sphere_descent(
        a,
        start,
        opts.max_iter,
        |v, g| energy_grad(&geom, v, p, 1.0, g),
        |v| energy_only(&geom, v, p, 1.0, &mut scratch),
    );
    let lagrange = grad.iter().zip(&v).map(|(g, x)| g * x).sum::<f64>() / (2.0 * a);
    let vmax2 = v.iter().map(|x| x * x).fold(0.0, f64::max);
    let delocalized = vmax2 <= 0.5 * a;
    SolitonResult {
        value: e.min(0.0),
        raw_value: e,
        derivative: lagrange,
        plateau: delocalized,
        box_side: side,
        tail: boundary_tail(&geom, &v),
        profile: v,
    }
}

type TableKey = (u64, usize, u64, u64);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<SolitonTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<SolitonTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn entropy_cache() -> &'static Mutex<HashMap<usize, Arc<EntropyTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<EntropyTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MinimizerSet {
    pub intervals: Vec<(f64, f64)>,
    pub contains_zero: bool,
    pub bounded_away_from_zero: bool,
    pub f_min: f64,
    pub argmin: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Dispersive,
    Solitonic,
    CriticalBand,
}

/// Local limit predicted away from the soliton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalLimit {
    MassiveGff { m: f64 },
    MasslessGffPlusDisc { radius: f64 },
    ReducedMassGff { a_star: f64, m: f64 },
    Undetermined,
}

impl LocalLimit {
    /// Exponential decay of correlations.
    pub fn is_massive(&self) -> Option<bool> {
        match self {
            LocalLimit::MassiveGff { .. } | LocalLimit::ReducedMassGff { .. } => Some(true),
            LocalLimit::MasslessGffPlusDisc { .. } => Some(false),
            LocalLimit::Undetermined => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCertificate {
    pub theta: f64,
    pub nu: f64,
    pub nu_c: f64,
    pub phase: Phase,
    pub minimizers: MinimizerSet,
    /// (a, m(θ(1−a))) at the endpoints of ℳ; None marks θ(1−a) ≥ C_d.
    pub masses: Vec<(f64, Option<f64>)>,
    pub limit: LocalLimit,
}

/// Landscape for fixed (p, d): entropy and soliton tables.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub p: f64,
    pub d: usize,
    pub entropy: Arc<EntropyTable>,
    pub soliton: Arc<SolitonTable>,
    pub grid: usize,
}

impl Landscape {
    pub const DEFAULT_X_MAX: f64 = 48.0;
    pub const DEFAULT_STEP: f64 = 0.1;

    pub fn new(p: f64, d: usize) -> Result<Self, LandscapeError> {
        Self::with_table(p, d, Self::DEFAULT_X_MAX, Self::DEFAULT_STEP, &SolitonOptions::default())
    }

    /// Tables are cached per process by their parameters.
    pub fn with_table(p: f64, d: usize, x_max: f64, step: f64, opts: &SolitonOptions) -> Result<Self, LandscapeError> {
        let key = (p.to_bits(), d, x_max.to_bits(), step.to_bits());
        let soliton = {
            let cached = table_cache().lock().expect("cache lock").get(&key).cloned();
            match cached {
                Some(t) => t,
                None => {
                    let t = Arc::new(SolitonTable::build(p, d, x_max, step, opts)?);
                    table_cache().lock().expect("cache lock").insert(key, t.clone());
                    t
                }
            }
        };
        let entropy = {
            let cached = entropy_cache().lock().expect("cache lock").get(&d).cloned();
            match cached {
                Some(t) => t,
                None => {
                    let t = Arc::new(EntropyTable::new(d)?);
                    entropy_cache().lock().expect("cache lock").insert(d, t.clone());
                    t
                }
            }
        };
        Ok(Self { p, d, entropy, soliton, grid: 4000 })
    }

    pub fn r_p(&self) -> f64 {
        self.soliton.r_p
    }

    pub fn c_d(&self) -> f64 {
        self.entropy.critical()
    }

    /// F(a) = W(θ(1−a)) + (θ/ν) I(νa); +∞ at a = 1.
    pub fn free_energy(&self, a: f64, theta: f64, nu: f64) -> Result<f64, LandscapeError> {
        if a >= 1.0 {
            return Ok(f64::INFINITY);
        }
        let w = self.entropy.w(theta * (1.0 - a));
        if nu == 0.0 {
            return Ok(w);
        }
        Ok(w + theta / nu * self.soliton.i(nu * a)?)
    }

    fn grid_points(&self) -> Vec<f64> {
        let top = 1.0 - 1e-4;
        (0..=self.grid).map(|j| top * j as f64 / self.grid as f64).collect()
    }

    pub fn minimizer_set(&self, theta: f64, nu: f64, tol: f64) -> Result<MinimizerSet, LandscapeError> {
        let a = self.grid_points();
        let f: Vec<f64> = a.iter().map(|&x| self.free_energy(x, theta, nu)).collect::<Result<_, _>>()?;
        let (jmin, &fmin_grid) = f.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("grid");
        let (argmin, f_min) = self.refine_min(&a, jmin, theta, nu, fmin_grid)?;
        let mut lip: f64 = 0.0;
        for j in 0..f.len() - 1 {
            if f[j] - f_min <= tol.max(1e-12) || f[j + 1] - f_min <= tol.max(1e-12) {
                lip = lip.max((f[j + 1] - f[j]).abs());
            }
        }
        let tol_eff = tol.max(lip.min(1e-3));
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        let mut open: Option<f64> = None;
        for j in 0..a.len() {
            let inside = f[j] - f_min <= tol_eff;
            match (inside, open) {
                (true, None) => open = Some(a[j]),
                (false, Some(s)) => {
                    intervals.push((s, a[j - 1]));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            intervals.push((s, *a.last().expect("grid")));
        }
        if !intervals.iter().any(|&(s, e)| s <= argmin && argmin <= e) {
            intervals.push((argmin, argmin));
            intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        }
        let contains_zero = intervals.first().is_some_and(|iv| iv.0 == 0.0);
        Ok(MinimizerSet {
            contains_zero,
            bounded_away_from_zero: !contains_zero,
            intervals,
            f_min,
            argmin,
            tol: tol_eff,
        })
    }

    fn refine_min(&self, a: &[f64], j: usize, theta: f64, nu: f64, fj: f64) -> Result<(f64, f64), LandscapeError> {
        if j == 0 {
            return Ok((0.0, fj));
        }
        let mut lo = a[j - 1];
        let mut hi = a[(j + 1).min(a.len() - 1)];
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if self.free_energy(x1, theta, nu)? < self.free_energy(x2, theta, nu)? {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let x = 0.5 * (lo + hi);
        let fx = self.free_energy(x, theta, nu)?;
        Ok(if fx < fj { (x, fx) } else { (a[j], fj) })
    }

    /// min_a F(a) − F(0).
    fn depth(&self, theta: f64, nu: f64) -> Result<f64, LandscapeError> {
        let f0 = self.free_energy(0.0, theta, nu)?;
        let a = self.grid_points();
        let mut best = f64::INFINITY;
        let mut jb = 0;
        for (j, &x) in a.iter().enumerate() {
            let v = self.free_energy(x, theta, nu)?;
            if v < best {
                best = v;
                jb = j;
            }
        }
        let (_, fm) = self.refine_min(&a, jb, theta, nu, best)?;
        Ok(fm - f0)
    }

    /// ν_c(θ) by bisection between a subcritical and a supercritical witness.
    pub fn critical_nu(&self, theta: f64, tol: f64) -> Result<f64, LandscapeError> {
        let witness = 1e-10;
        let mut lo = self.r_p();
        let mut hi = 2.0 * lo;
        loop {
            if hi > self.soliton.x_max() {
                return Err(LandscapeError::Bracket(self.soliton.x_max()));
            }
            if self.depth(theta, hi)? < -witness {
                break;
            }
            lo = hi;
            hi = (hi * 1.5).min(self.soliton.x_max());
            if lo == hi {
                return Err(LandscapeError::Bracket(hi));
            }
        }
        while hi - lo > tol * hi {
            let mid = 0.5 * (lo + hi);
            if self.depth(theta, mid)? < -witness {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// M = m(θ(1−a)).
    pub fn supercritical_mass(&self, a: f64, theta: f64) -> Result<f64, LandscapeError> {
        supercritical_mass(a, theta, self.d)
    }

    pub fn phase_classify(&self, theta: f64, nu: f64, tol: f64) -> Result<PhaseCertificate, LandscapeError> {
        let nu_c = self.critical_nu(theta, 1e-9)?;
        let phase = if nu < nu_c - tol {
            Phase::Dispersive
        } else if nu > nu_c + tol {
            Phase::Solitonic
        } else {
            Phase::CriticalBand
        };
        let minimizers = self.minimizer_set(theta, nu, 1e-4)?;
        let cd = self.c_d();
        let mut masses = Vec::new();
        for &(s, e) in &minimizers.intervals {
            for a in [s, e] {
                let b = theta * (1.0 - a);
                masses.push((a, if b < cd { Some(greens::solve_mass(b, self.d)?) } else { None }));
            }
        }
        let limit = match phase {
            Phase::Dispersive if theta < cd => LocalLimit::MassiveGff { m: greens::solve_mass(theta, self.d)? },
            Phase::Dispersive => LocalLimit::MasslessGffPlusDisc { radius: (1.0 - cd / theta).sqrt() },
            Phase::Solitonic => {
                let a = minimizers.argmin;
                LocalLimit::ReducedMassGff { a_star: a, m: supercritical_mass(a, theta, self.d)? }
            }
            Phase::CriticalBand => LocalLimit::Undetermined,
        };
        Ok(PhaseCertificate { theta, nu, nu_c, phase, minimizers, masses, limit })
    }

    /// Tabulated curves for export.
    pub fn table(&self, theta: f64, nu: f64, a_grid: &[f64]) -> Result<LandscapeTable, LandscapeError> {
        let cert = self.phase_classify(theta, nu, 1e-6)?;
        let mut rows = Vec::with_capacity(a_grid.len());
        for &a in a_grid {
            rows.push(LandscapeRow {
                a,
                i: self.soliton.i(nu * a)?,
                w: self.entropy.w(theta * (1.0 - a)),
                f: self.free_energy(a, theta, nu)?,
            });
        }
        Ok(LandscapeTable { theta, nu, p: self.p, d: self.d, box_side: SolitonOptions::default().box_side, r_p: self.r_p(), rows, certificate: cert })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeRow {
    pub a: f64,
    /// I(νa)
    pub i: f64,
    /// W(θ(1−a))
    pub w: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeTable {
    pub theta: f64,
    pub nu: f64,
    pub p: f64,
    pub d: usize,
    pub box_side: usize,
    pub r_p: f64,
    pub rows: Vec<LandscapeRow>,
    pub certificate: PhaseCertificate,
}

/// M = m(θ(1−a)) for θ(1−a) < C_d.
pub fn supercritical_mass(a: f64, theta: f64, d: usize) -> Result<f64, LandscapeError> {
    let b = theta * (1.0 - a);
    let cd = greens::critical_constant(d)?;
    if b >= cd {
        return Err(LandscapeError::NotReduced(b));
    }
    Ok(greens::solve_mass(b, d)?)
}
