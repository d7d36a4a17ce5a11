//! Lattice Green's functions, the mass equation and massive harmonic extensions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lattice::{Field, Fourier, TorusShape, C64};
use crate::special::{ik_scaled, i0_scaled, LogTrapezoid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreensError {
    #[error("massless Green's function diverges in dimension {0} (need d >= 3)")]
    Divergent(usize),
    #[error("mass must be finite and nonnegative, got {0}")]
    Mass(f64),
    #[error("theta = {theta} exceeds C_d = {cd}; no mass solves the equation")]
    Massless { theta: f64, cd: f64 },
    #[error("theta must be positive, got {0}")]
    Theta(f64),
    #[error("operator is singular: empty hole with zero mass")]
    Singular,
    #[error("harmonic extension needs positive mass")]
    MasslessExtension,
    #[error("no mass in (0, inf) solves the boundary mass equation (residual at m -> 0 is {0})")]
    NoRoot(f64),
    #[error("site {0} out of range")]
    Site(usize),
    #[error("boundary data has {got} values for {want} hole sites")]
    BoundaryLength { got: usize, want: usize },
    #[error("hole covariance not positive definite")]
    Factorization,
    #[error("conjugate gradient did not converge (residual {0})")]
    NoConvergence(f64),
}

/// Trapezoid step in s = log t for the Bessel-form integrals.
pub const QUAD_STEP: f64 = 1.0 / 32.0;

/// Integrals over [0,1]^d of functions of λ(κ) = 4 Σ sin²(π κ_i),
/// reduced to one-dimensional Laplace integrals of (e^{-2t} I_0(2t))^d.
#[derive(Debug, Clone)]
pub struct ZdIntegrals {
    d: usize,
    quad: LogTrapezoid,
    gd: Vec<f64>,
}

impl ZdIntegrals {
    pub fn new(d: usize) -> Self {
        Self::with_step(d, QUAD_STEP)
    }

    pub fn with_step(d: usize, step: f64) -> Self {
        let quad = LogTrapezoid::new(step);
        let gd = quad.t.iter().map(|&t| i0_scaled(2.0 * t).powi(d as i32)).collect();
        Self { d, quad, gd }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// ∫ dκ / (λ(κ) + m).
    pub fn greens_diag(&self, m: f64) -> Result<f64, GreensError> {
        check_mass(self.d, m)?;
        Ok(self.sum(|t, g| (-m * t).exp() * g))
    }

    /// ∫ dκ / (λ(κ) + m)².
    pub fn greens_diag_sq(&self, m: f64) -> Result<f64, GreensError> {
        if self.d < 5 && m == 0.0 {
            return Err(GreensError::Divergent(self.d));
        }
        check_mass(self.d, m)?;
        Ok(self.sum(|t, g| t * (-m * t).exp() * g))
    }

    /// ∫ log(λ(κ) + m) dκ, by Frullani's representation.
    pub fn log_integral(&self, m: f64) -> Result<f64, GreensError> {
        check_mass(self.d, m)?;
        Ok(self.sum(|t, g| {
            if t < 1e-6 {
                // Cancellation-free expansion of e^{-t} − e^{-mt} g.
                let lin = (m + 2.0 * self.d as f64 - 1.0) * t;
                lin / t
            } else {
                ((-t).exp() - (-m * t).exp() * g) / t
            }
        }))
    }

    fn sum(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.quad
            .t
            .iter()
            .zip(&self.quad.w)
            .zip(&self.gd)
            .map(|((&t, &w), &g)| w * f(t, g))
            .sum()
    }
}

fn check_mass(d: usize, m: f64) -> Result<(), GreensError> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(GreensError::Mass(m));
    }
    if m == 0.0 && d < 3 {
        return Err(GreensError::Divergent(d));
    }
    Ok(())
}

/// ∫_{[0,1]^d} dκ / (4Σ sin²(πκ_i) + m).
pub fn zd_greens_diag(d: usize, m: f64) -> Result<f64, GreensError> {
    check_mass(d, m)?;
    ZdIntegrals::new(d).greens_diag(m)
}

/// Value together with the difference against a rule of twice the step.
pub fn zd_greens_diag_with_error(d: usize, m: f64) -> Result<(f64, f64), GreensError> {
    let fine = ZdIntegrals::new(d).greens_diag(m)?;
    let coarse = ZdIntegrals::with_step(d, 2.0 * QUAD_STEP).greens_diag(m)?;
    Ok((fine, (fine - coarse).abs()))
}

/// C_d = G^{Z^d}(0,0).
pub fn critical_constant(d: usize) -> Result<f64, GreensError> {
    zd_greens_diag(d, 0.0)
}

/// G^{Z^d, m}(0, x) = ∫_0^∞ e^{-mt} Π_i e^{-2t} I_{x_i}(2t) dt.
pub fn zd_greens(d: usize, m: f64, x: &[i64]) -> Result<f64, GreensError> {
    check_mass(d, m)?;
    assert_eq!(x.len(), d);
    let quad = LogTrapezoid::new(QUAD_STEP);
    Ok(quad.integrate(|t| {
        let decay = (-m * t).exp();
        if decay == 0.0 {
            return 0.0;
        }
        x.iter().map(|&k| ik_scaled(k.unsigned_abs() as u32, 2.0 * t)).product::<f64>() * decay
    }))
}

/// Unique m ≥ 0 with zd_greens_diag(d, m) = θ, for 0 < θ ≤ C_d.
pub fn solve_mass(theta: f64, d: usize) -> Result<f64, GreensError> {
    solve_mass_with(&ZdIntegrals::new(d), theta)
}

pub fn solve_mass_with(zd: &ZdIntegrals, theta: f64) -> Result<f64, GreensError> {
    if !(theta > 0.0) {
        return Err(GreensError::Theta(theta));
    }
    let cd = zd.greens_diag(0.0)?;
    if theta > cd {
        return Err(GreensError::Massless { theta, cd });
    }
    if theta == cd {
        return Ok(0.0);
    }
    let g = |m: f64| zd.greens_diag(m).expect("mass is nonnegative");
    let mut hi = 1.0;
    while g(hi) > theta {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Difference x − y on the torus as a flat index.
pub fn site_difference(shape: TorusShape, x: usize, y: usize) -> usize {
    let n = shape.n();
    let mut out = 0;
    let (mut a, mut b) = (x, y);
    let mut mult = 1;
    for _ in 0..shape.d() {
        let ca = a % n;
        let cb = b % n;
        out += ((ca + n - cb) % n) * mult;
        mult *= n;
        a /= n;
        b /= n;
    }
    out
}

/// Translation-invariant kernel g(z) = (1/N) Σ_k e^{i2πk·z/n} w(λ_k).
pub fn spectral_kernel(fourier: &Fourier, weight: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let shape = fourier.shape();
    let lam = shape.eigenvalues();
    let s = 1.0 / (shape.size() as f64).sqrt();
    let mut v: Vec<C64> =
        lam.iter().enumerate().map(|(k, &l)| C64::new(weight(k, l) * s, 0.0)).collect();
    fourier.inverse_in_place(&mut v);
    v.iter().map(|z| z.re).collect()
}

/// Massive Green's function of the full torus.
#[derive(Debug, Clone)]
pub struct GreensContext {
    shape: TorusShape,
    m: f64,
    kernel: Vec<f64>,
    kernel_sq: Vec<f64>,
}

impl GreensContext {
    pub fn torus(shape: TorusShape, m: f64) -> Result<Self, GreensError> {
        Self::torus_with(&Fourier::new(shape), m)
    }

    pub fn torus_with(fourier: &Fourier, m: f64) -> Result<Self, GreensError> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(GreensError::Mass(m));
        }
        let kernel = spectral_kernel(fourier, |_, l| 1.0 / (l + m));
        let kernel_sq = spectral_kernel(fourier, |_, l| 1.0 / ((l + m) * (l + m)));
        Ok(Self { shape: fourier.shape(), m, kernel, kernel_sq })
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.kernel[site_difference(self.shape, x, y)]
    }

    /// (G²)(x, y) = Σ_z G(x,z) G(z,y).
    pub fn value_sq(&self, x: usize, y: usize) -> f64 {
        self.kernel_sq[site_difference(self.shape, x, y)]
    }

    pub fn diag(&self) -> f64 {
        self.kernel[0]
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn column(&self, y: usize) -> Vec<f64> {
        (0..self.shape.size()).map(|x| self.value(x, y)).collect()
    }
}

/// G^m(x, y) on the torus.
pub fn torus_greens(ctx: &GreensContext, x: usize, y: usize) -> f64 {
    ctx.value(x, y)
}

/// Zero-average Green's function: the k = 0 mode removed.
pub fn zero_avg_kernel(fourier: &Fourier) -> Vec<f64> {
    spectral_kernel(fourier, |k, l| if k == 0 { 0.0 } else { 1.0 / l })
}

pub fn zero_avg_greens(shape: TorusShape, x: usize, y: usize) -> f64 {
    zero_avg_kernel(&Fourier::new(shape))[site_difference(shape, x, y)]
}

/// Site set with membership mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSet {
    sites: Vec<usize>,
    mask: Vec<bool>,
}

impl SiteSet {
    pub fn new(shape: TorusShape, sites: &[usize]) -> Result<Self, GreensError> {
        let mut mask = vec![false; shape.size()];
        let mut out = Vec::new();
        for &s in sites {
            if s >= shape.size() {
                return Err(GreensError::Site(s));
            }
            if !mask[s] {
                mask[s] = true;
                out.push(s);
            }
        }
        out.sort_unstable();
        Ok(Self { sites: out, mask })
    }

    pub fn empty(shape: TorusShape) -> Self {
        Self { sites: Vec::new(), mask: vec![false; shape.size()] }
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn contains(&self, x: usize) -> bool {
        self.mask[x]
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Conditioning data G_{UU}^{-1} for a hole U inside a massive torus.
#[derive(Debug, Clone)]
struct HoleCondition {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// Green's function of −Δ_{U^c} + m, zero on U.
#[derive(Debug, Clone)]
pub struct DirichletGreens {
    shape: TorusShape,
    hole: SiteSet,
    m: f64,
    torus: Option<GreensContext>,
    cond: Option<HoleCondition>,
}

impl DirichletGreens {
    pub fn new(shape: TorusShape, hole: SiteSet, m: f64) -> Result<Self, GreensError> {
        Self::with_fourier(&Fourier::new(shape), hole, m)
    }

    pub fn with_fourier(fourier: &Fourier, hole: SiteSet, m: f64) -> Result<Self, GreensError> {
        let shape = fourier.shape();
        if !(m >= 0.0) || !m.is_finite() {
            return Err(GreensError::Mass(m));
        }
        if m == 0.0 && hole.is_empty() {
            return Err(GreensError::Singular);
        }
        if m == 0.0 {
            return Ok(Self { shape, hole, m, torus: None, cond: None });
        }
        let torus = GreensContext::torus_with(fourier, m)?;
        let cond = if hole.is_empty() {
            None
        } else {
            Some(HoleCondition { chol: hole_cholesky(&torus, &hole)? })
        };
        Ok(Self { shape, hole, m, torus: Some(torus), cond })
    }

    pub fn hole(&self) -> &SiteSet {
        &self.hole
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    /// G^{U^c}(·, y); zero when y ∈ U.
    pub fn column(&self, y: usize) -> Result<Vec<f64>, GreensError> {
        let n = self.shape.size();
        if y >= n {
            return Err(GreensError::Site(y));
        }
        if self.hole.contains(y) {
            return Ok(vec![0.0; n]);
        }
        match (&self.torus, &self.cond) {
            (Some(t), None) => Ok(t.column(y)),
            (Some(t), Some(c)) => {
                let u = self.hole.sites();
                let rhs = DVector::from_iterator(u.len(), u.iter().map(|&s| t.value(s, y)));
                let coef = c.chol.solve(&rhs);
                let mut col = t.column(y);
                for (x, v) in col.iter_mut().enumerate() {
                    if self.hole.contains(x) {
                        *v = 0.0;
                    } else {
                        let corr: f64 = u.iter().zip(coef.iter()).map(|(&s, c)| t.value(x, s) * c).sum();
                        *v -= corr;
                    }
                }
                Ok(col)
            }
            (None, _) => {
                let mut rhs = vec![0.0; n];
                rhs[y] = 1.0;
                dirichlet_solve(self.shape, &self.hole, self.m, &rhs, 1e-10)
            }
        }
    }

    pub fn value(&self, x: usize, y: usize) -> Result<f64, GreensError> {
        if x >= self.shape.size() {
            return Err(GreensError::Site(x));
        }
        if self.hole.contains(x) || self.hole.contains(y) {
            return Ok(0.0);
        }
        match (&self.torus, &self.cond) {
            (Some(t), Some(c)) => {
                let u = self.hole.sites();
                let gy = DVector::from_iterator(u.len(), u.iter().map(|&s| t.value(s, y)));
                let gx = DVector::from_iterator(u.len(), u.iter().map(|&s| t.value(x, s)));
                Ok(t.value(x, y) - gx.dot(&c.chol.solve(&gy)))
            }
            (Some(t), None) => Ok(t.value(x, y)),
            (None, _) => Ok(self.column(y)?[x]),
        }
    }

    /// Σ_{x ∉ U} G^{U^c}(x, x), the sum of inverse Dirichlet eigenvalues.
    pub fn trace(&self) -> Result<f64, GreensError> {
        match (&self.torus, &self.cond) {
            (Some(t), None) => Ok(t.diag() * self.shape.size() as f64),
            (Some(t), Some(c)) => {
                let s = outside_second_moment(t, &self.hole);
                let b = c.chol.inverse();
                let free = (self.shape.size() - self.hole.len()) as f64;
                Ok(free * t.diag() - (b * s).trace())
            }
            (None, _) => {
                let mut tr = 0.0;
                for x in 0..self.shape.size() {
                    if !self.hole.contains(x) {
                        tr += self.column(x)?[x];
                    }
                }
                Ok(tr)
            }
        }
    }
}

fn hole_cholesky(
    torus: &GreensContext,
    hole: &SiteSet,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, GreensError> {
    let u = hole.sites();
    let guu = DMatrix::from_fn(u.len(), u.len(), |i, j| torus.value(u[i], u[j]));
    guu.cholesky().ok_or(GreensError::Factorization)
}

/// S_{uv} = Σ_{x ∉ U} G(u,x) G(x,v).
fn outside_second_moment(t: &GreensContext, hole: &SiteSet) -> DMatrix<f64> {
    let u = hole.sites();
    DMatrix::from_fn(u.len(), u.len(), |i, j| {
        let inside: f64 = u.iter().map(|&w| t.value(u[i], w) * t.value(w, u[j])).sum();
        t.value_sq(u[i], u[j]) - inside
    })
}

/// Apply (−Δ_{U^c} + m) to v (entries on U are ignored and returned as zero).
pub fn dirichlet_apply(shape: TorusShape, hole: &SiteSet, m: f64, v: &[f64]) -> Vec<f64> {
    let deg = shape.degree() as f64;
    (0..shape.size())
        .map(|x| {
            if hole.contains(x) {
                return 0.0;
            }
            let mut s = (deg + m) * v[x];
            for a in 0..shape.d() {
                for up in [true, false] {
                    let y = shape.step(x, a, up);
                    if !hole.contains(y) {
                        s -= v[y];
                    }
                }
            }
            s
        })
        .collect()
}

/// Conjugate gradients for (−Δ_{U^c} + m) u = rhs on U^c.
pub fn dirichlet_solve(
    shape: TorusShape,
    hole: &SiteSet,
    m: f64,
    rhs: &[f64],
    tol: f64,
) -> Result<Vec<f64>, GreensError> {
    let n = shape.size();
    let b: Vec<f64> = (0..n).map(|x| if hole.contains(x) { 0.0 } else { rhs[x] }).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..(20 * n + 100) {
        let ap = dirichlet_apply(shape, hole, m, &p);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = r.iter().map(|v| v * v).sum::<f64>();
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(GreensError::NoConvergence(rr.sqrt() / bnorm))
}

/// Massive harmonic extension of boundary data prescribed on the hole U.
#[derive(Debug, Clone)]
pub struct HarmonicExtension {
    pub hole: SiteSet,
    pub boundary: Vec<C64>,
    pub m: f64,
    /// Extension on every site; equals the boundary data on U.
    pub h: Vec<C64>,
}

impl HarmonicExtension {
    /// max|f| (2d/(2d+m))^{d(x,U)}, the killed-walk survival bound.
    pub fn decay_bound(&self, shape: TorusShape, x: usize) -> f64 {
        let dist = self.hole.sites().iter().map(|&u| shape.distance(x, u)).min().unwrap_or(0);
        let fmax = self.boundary.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let deg = shape.degree() as f64;
        fmax * (deg / (deg + self.m)).powi(dist as i32)
    }

    /// Decay rate c(m) = log((m + 2d)/(2d)).
    pub fn decay_rate(&self, shape: TorusShape) -> f64 {
        let deg = shape.degree() as f64;
        ((self.m + deg) / deg).ln()
    }

    pub fn field(&self, shape: TorusShape) -> Field {
        Field::from_values(shape, self.h.clone()).expect("extension is finite")
    }

    /// ‖h|_{U^c}‖₂².
    pub fn outside_mass(&self) -> f64 {
        self.h.iter().enumerate().filter(|(x, _)| !self.hole.contains(*x)).map(|(_, z)| z.norm_sqr()).sum()
    }
}

/// h = G_{·U} G_{UU}^{-1} f: solves (−Δ + m)h = 0 off U with h = f on U.
pub fn harmonic_extension(
    shape: TorusShape,
    hole: &SiteSet,
    f: &[C64],
    m: f64,
) -> Result<HarmonicExtension, GreensError> {
    harmonic_extension_with(&GreensContext::torus(shape, m).map_err(|_| mass_err(m))?, hole, f)
}

fn mass_err(m: f64) -> GreensError {
    if m == 0.0 {
        GreensError::MasslessExtension
    } else {
        GreensError::Mass(m)
    }
}

pub fn harmonic_extension_with(
    torus: &GreensContext,
    hole: &SiteSet,
    f: &[C64],
) -> Result<HarmonicExtension, GreensError> {
    let shape = torus.shape();
    if f.len() != hole.len() {
        return Err(GreensError::BoundaryLength { got: f.len(), want: hole.len() });
    }
    let n = shape.size();
    let mut h = vec![C64::new(0.0, 0.0); n];
    if !hole.is_empty() {
        let chol = hole_cholesky(torus, hole)?;
        let u = hole.sites();
        let re = chol.solve(&DVector::from_iterator(u.len(), f.iter().map(|z| z.re)));
        let im = chol.solve(&DVector::from_iterator(u.len(), f.iter().map(|z| z.im)));
        for (x, hx) in h.iter_mut().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            for (j, &s_u) in u.iter().enumerate() {
                let g = torus.value(x, s_u);
                s += C64::new(g * re[j], g * im[j]);
            }
            *hx = s;
        }
        for (j, &s_u) in u.iter().enumerate() {
            h[s_u] = f[j];
        }
    }
    Ok(HarmonicExtension { hole: hole.clone(), boundary: f.to_vec(), m: torus.mass(), h })
}

/// Boundary mass-equation terms at mass m: (Σ_i 1/(λ_i+m), ‖h^m|_{U^c}‖²).
pub fn boundary_mass_terms(
    fourier: &Fourier,
    hole: &SiteSet,
    f: &[C64],
    m: f64,
) -> Result<(f64, f64), GreensError> {
    let torus = GreensContext::torus_with(fourier, m)?;
    let shape = fourier.shape();
    if hole.is_empty() {
        return Ok((torus.diag() * shape.size() as f64, 0.0));
    }
    let chol = hole_cholesky(&torus, hole)?;
    let s = outside_second_moment(&torus, hole);
    let b = chol.inverse();
    let free = (shape.size() - hole.len()) as f64;
    let trace = free * torus.diag() - (&b * &s).trace();
    let bsb = &b * &s * &b;
    let re = DVector::from_iterator(f.len(), f.iter().map(|z| z.re));
    let im = DVector::from_iterator(f.len(), f.iter().map(|z| z.im));
    let hmass = re.dot(&(&bsb * &re)) + im.dot(&(&bsb * &im));
    Ok((trace, hmass))
}

/// m_N > 0 with Σ_i 1/(λ_i + m) + θ‖h^m‖² = θγN over the Dirichlet spectrum of U^c.
pub fn solve_mass_with_boundary(
    shape: TorusShape,
    hole: &SiteSet,
    f: &[C64],
    theta: f64,
    gamma: f64,
) -> Result<f64, GreensError> {
    if !(theta > 0.0) {
        return Err(GreensError::Theta(theta));
    }
    if f.len() != hole.len() {
        return Err(GreensError::BoundaryLength { got: f.len(), want: hole.len() });
    }
    let fourier = Fourier::new(shape);
    let target = theta * gamma * shape.size() as f64;
    let resid = |m: f64| -> Result<f64, GreensError> {
        let (tr, hm) = boundary_mass_terms(&fourier, hole, f, m)?;
        Ok(tr + theta * hm - target)
    };
    let m_lo = 1e-8;
    let r_lo = resid(m_lo)?;
    if r_lo < 0.0 {
        return Err(GreensError::NoRoot(r_lo));
    }
    let mut lo = m_lo;
    let mut hi = 1.0;
    while resid(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if resid(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_difference_matches_translate() {
        let s = TorusShape::new(3, 5).unwrap();
        for x in [0, 7, 33, 124] {
            for y in [0, 3, 61, 99] {
                let dx = s.coords(x);
                let dy = s.coords(y);
                let off: Vec<i64> = dx.iter().zip(&dy).map(|(a, b)| *a as i64 - *b as i64).collect();
                assert_eq!(site_difference(s, x, y), s.translate(0, &off));
            }
        }
    }

    #[test]
    fn quadrature_step_converged() {
        for &m in &[0.0, 1e-4, 0.3, 5.0, 200.0] {
            let (v, err) = zd_greens_diag_with_error(3, m).unwrap();
            assert!(err < 1e-12 * v.max(1e-3), "m={m} err={err}");
        }
    }
}
