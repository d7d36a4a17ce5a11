//! Torus geometry, complex fields and the Fourier basis of the lattice Laplacian.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub use rustfft::num_complex::Complex64 as C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be at least 1, got {0}")]
    Dimension(usize),
    #[error("side length must be at least 2, got {0}")]
    Side(usize),
    #[error("site count n^d overflows")]
    Overflow,
    #[error("field has {got} values, shape needs {want}")]
    Length { got: usize, want: usize },
    #[error("non-finite field entry at site {0}")]
    NonFinite(usize),
    #[error("norm exponent must be >= 1, got {0}")]
    Exponent(f64),
}

/// The torus (Z/nZ)^d with row-major site indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TorusShape {
    d: usize,
    n: usize,
    size: usize,
}

impl TorusShape {
    pub fn new(d: usize, n: usize) -> Result<Self, LatticeError> {
        if d == 0 {
            return Err(LatticeError::Dimension(d));
        }
        if n < 2 {
            return Err(LatticeError::Side(n));
        }
        let mut size = 1usize;
        for _ in 0..d {
            size = size.checked_mul(n).ok_or(LatticeError::Overflow)?;
        }
        Ok(Self { d, n, size })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of sites N = n^d.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn degree(&self) -> usize {
        2 * self.d
    }

    /// Stride of axis `a` in the flat layout; the last axis is contiguous.
    pub fn stride(&self, a: usize) -> usize {
        self.n.pow((self.d - 1 - a) as u32)
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        let mut r = idx;
        for a in (0..self.d).rev() {
            c[a] = r % self.n;
            r /= self.n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n + (c % self.n))
    }

    /// Site reached from `idx` by one step along axis `a`, forward if `up`.
    pub fn step(&self, idx: usize, a: usize, up: bool) -> usize {
        let s = self.stride(a);
        let c = (idx / s) % self.n;
        if up {
            if c + 1 == self.n {
                idx + s - self.n * s
            } else {
                idx + s
            }
        } else if c == 0 {
            idx + (self.n - 1) * s
        } else {
            idx - s
        }
    }

    /// Site x + o with o given by signed coordinates.
    pub fn translate(&self, idx: usize, offset: &[i64]) -> usize {
        let c = self.coords(idx);
        let n = self.n as i64;
        let moved: Vec<usize> = c
            .iter()
            .zip(offset)
            .map(|(&x, &o)| (x as i64 + o).rem_euclid(n) as usize)
            .collect();
        self.index(&moved)
    }

    /// Graph distance on the torus.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let ca = self.coords(a);
        let cb = self.coords(b);
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| {
                let t = x.abs_diff(y);
                t.min(self.n - t)
            })
            .sum()
    }

    /// Flat neighbor table with 2d entries per site.
    pub fn neighbor_table(&self) -> Vec<usize> {
        let mut t = Vec::with_capacity(self.size * 2 * self.d);
        for x in 0..self.size {
            for a in 0..self.d {
                t.push(self.step(x, a, true));
                t.push(self.step(x, a, false));
            }
        }
        t
    }

    /// λ_k = 4 Σ sin²(π k_i / n) for the frequency with flat index `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let one = self.axis_eigenvalues();
        self.coords(k).iter().map(|&c| one[c]).sum()
    }

    pub fn axis_eigenvalues(&self) -> Vec<f64> {
        (0..self.n)
            .map(|k| {
                let s = (PI * k as f64 / self.n as f64).sin();
                4.0 * s * s
            })
            .collect()
    }

    /// All eigenvalues in frequency order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let one = self.axis_eigenvalues();
        let mut out = vec![0.0; self.size];
        for (k, v) in out.iter_mut().enumerate() {
            let mut r = k;
            let mut s = 0.0;
            for _ in 0..self.d {
                s += one[r % self.n];
                r /= self.n;
            }
            *v = s;
        }
        out
    }
}

/// Complex amplitude per torus site.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    shape: TorusShape,
    values: Vec<C64>,
}

impl Field {
    pub fn zeros(shape: TorusShape) -> Self {
        Self { shape, values: vec![C64::new(0.0, 0.0); shape.size()] }
    }

    pub fn constant(shape: TorusShape, c: C64) -> Self {
        Self { shape, values: vec![c; shape.size()] }
    }

    pub fn indicator(shape: TorusShape, site: usize) -> Self {
        let mut f = Self::zeros(shape);
        f.values[site] = C64::new(1.0, 0.0);
        f
    }

    pub fn from_values(shape: TorusShape, values: Vec<C64>) -> Result<Self, LatticeError> {
        if values.len() != shape.size() {
            return Err(LatticeError::Length { got: values.len(), want: shape.size() });
        }
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LatticeError::NonFinite(i));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    /// Σ_x conj(f(x)) g(x).
    pub fn inner(&self, other: &Field) -> C64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn mean(&self) -> C64 {
        self.values.iter().sum::<C64>() / self.values.len() as f64
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }
}

/// (Δψ)(x) = Σ_{y∼x} ψ(y) − 2d ψ(x).
pub fn laplacian(f: &Field) -> Field {
    let shape = f.shape;
    let deg = shape.degree() as f64;
    let v = &f.values;
    let mut out = vec![C64::new(0.0, 0.0); shape.size()];
    for (x, o) in out.iter_mut().enumerate() {
        let mut s = -deg * v[x];
        for a in 0..shape.d() {
            s += v[shape.step(x, a, true)] + v[shape.step(x, a, false)];
        }
        *o = s;
    }
    Field { shape, values: out }
}

/// Σ over unordered edges of |ψ(x) − ψ(y)|², one forward edge per axis per site.
pub fn dirichlet_energy(f: &Field) -> f64 {
    let shape = f.shape;
    let v = &f.values;
    let mut e = 0.0;
    for x in 0..shape.size() {
        for a in 0..shape.d() {
            e += (v[x] - v[shape.step(x, a, true)]).norm_sqr();
        }
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    P(f64),
    Inf,
}

/// ‖f‖_p (not raised to the p-th power); p = ∞ gives the max modulus.
pub fn norm(f: &Field, p: Norm) -> Result<f64, LatticeError> {
    match p {
        Norm::Inf => Ok(linf(f.values())),
        Norm::P(p) => {
            if !(p >= 1.0) {
                return Err(LatticeError::Exponent(p));
            }
            Ok(lp_pow(f.values(), p).powf(1.0 / p))
        }
    }
}

/// Σ_x |f(x)|^p.
pub fn lp_pow(v: &[C64], p: f64) -> f64 {
    v.iter().map(|z| pow_abs(z.norm_sqr(), p)).sum()
}

pub fn linf(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max).sqrt()
}

/// |z|^p from |z|², with a fast path for even integer p.
#[inline]
pub fn pow_abs(r2: f64, p: f64) -> f64 {
    if p == 6.0 {
        r2 * r2 * r2
    } else if p == 4.0 {
        r2 * r2
    } else if p == 2.0 {
        r2
    } else {
        r2.powf(0.5 * p)
    }
}

/// ν_N = (2/p)(ν/N)^{(p−2)/2}.
pub fn nu_n(nu: f64, p: f64, size: usize) -> f64 {
    (2.0 / p) * (nu / size as f64).powf(0.5 * (p - 2.0))
}

/// H_N(ψ) = ‖∇ψ‖² − ν_N ‖ψ‖_p^p.
pub fn nls_hamiltonian(f: &Field, nu: f64, p: f64) -> f64 {
    dirichlet_energy(f) - nu_n(nu, p, f.shape.size()) * lp_pow(f.values(), p)
}

/// Unitary transform onto φ_k(x) = N^{-1/2} exp(i 2π k·x / n).
#[derive(Clone)]
pub struct Fourier {
    shape: TorusShape,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("shape", &self.shape).finish()
    }
}

impl Fourier {
    pub fn new(shape: TorusShape) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape,
            fwd: planner.plan_fft_forward(shape.n()),
            inv: planner.plan_fft_inverse(shape.n()),
        }
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    /// Coefficients ⟨φ_k, f⟩ in place.
    pub fn forward_in_place(&self, v: &mut [C64]) {
        self.apply(v, &self.fwd);
    }

    /// Σ_k c_k φ_k in place.
    pub fn inverse_in_place(&self, v: &mut [C64]) {
        self.apply(v, &self.inv);
    }

    pub fn forward(&self, f: &Field) -> Field {
        let mut v = f.values.clone();
        self.forward_in_place(&mut v);
        Field { shape: self.shape, values: v }
    }

    pub fn inverse(&self, f: &Field) -> Field {
        let mut v = f.values.clone();
        self.inverse_in_place(&mut v);
        Field { shape: self.shape, values: v }
    }

    fn apply(&self, v: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let shape = self.shape;
        let n = shape.n();
        assert_eq!(v.len(), shape.size());
        let mut line = vec![C64::new(0.0, 0.0); n];
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for a in 0..shape.d() {
            let s = shape.stride(a);
            let block = s * n;
            for base in (0..shape.size()).step_by(block) {
                for off in 0..s {
                    let start = base + off;
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = v[start + j * s];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, l) in line.iter().enumerate() {
                        v[start + j * s] = *l;
                    }
                }
            }
        }
        let norm = 1.0 / (shape.size() as f64).sqrt();
        for z in v.iter_mut() {
            *z *= norm;
        }
    }
}

/// Direct O(N²) evaluation of the unitary transform; `sign` is −1 for forward.
pub fn dft_direct(shape: TorusShape, v: &[C64], sign: f64) -> Vec<C64> {
    let n = shape.size();
    let coords: Vec<Vec<usize>> = (0..n).map(|i| shape.coords(i)).collect();
    let side = shape.n() as f64;
    let norm = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            let ck = &coords[k];
            let mut s = C64::new(0.0, 0.0);
            for (x, cx) in coords.iter().enumerate() {
                let dot: usize = ck.iter().zip(cx).map(|(a, b)| a * b).sum();
                let ph = sign * 2.0 * PI * ((dot % shape.n()) as f64) / side;
                s += v[x] * C64::new(ph.cos(), ph.sin());
            }
            s * norm
        })
        .collect()
}

/// Eigenvector φ_k as a field.
pub fn eigenvector(shape: TorusShape, k: usize) -> Field {
    let ck = shape.coords(k);
    let side = shape.n() as f64;
    let norm = 1.0 / (shape.size() as f64).sqrt();
    let values = (0..shape.size())
        .map(|x| {
            let cx = shape.coords(x);
            let dot: usize = ck.iter().zip(&cx).map(|(a, b)| a * b).sum();
            let ph = 2.0 * PI * ((dot % shape.n()) as f64) / side;
            C64::new(ph.cos(), ph.sin()) * norm
        })
        .collect();
    Field { shape, values }
}
