//! Deterministic separating set of a field and its polylogarithmic expansion.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{Field, TorusShape, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemperingError {
    #[error("epsilon = {eps} outside (0, {max})")]
    Epsilon { eps: f64, max: f64 },
    #[error("field mass {mass} is not below N = {size}")]
    Mass { mass: f64, size: usize },
    #[error("expansion constant must be positive, got {0}")]
    Constant(f64),
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Certificate {
    /// |U| ≤ ε^{−d−2}.
    pub size_ok: bool,
    /// |f(x)|² < εN off U.
    pub outside_ok: bool,
    /// mass(B_{i₀}) < εN/10.
    pub shell_ok: bool,
    pub size_bound: f64,
    pub max_outside: f64,
    pub shell_mass: f64,
    pub inner_shell_mass: f64,
    pub outer_shell_mass: f64,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.size_ok && self.outside_ok && self.shell_ok
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparatingSet {
    pub eps: f64,
    /// Sorted sites of U = U_{i₀−1} ∪ {d(·, U_{i₀−1}) = 1}.
    pub sites: Vec<usize>,
    pub seed_sites: Vec<usize>,
    /// U_{i₀−1}, the alternative convention without the one-step collar.
    pub core_sites: Vec<usize>,
    pub i0: usize,
    /// Masses of B_0, …, B_{i₀}.
    pub shell_masses: Vec<f64>,
    pub certificate: Certificate,
}

impl SeparatingSet {
    pub fn mask(&self, shape: TorusShape) -> Vec<bool> {
        let mut m = vec![false; shape.size()];
        for &s in &self.sites {
            m[s] = true;
        }
        m
    }
}

/// Largest admissible ε for the certified construction, 21^{−d}.
pub fn eps_max(d: usize) -> f64 {
    21f64.powi(-(d as i32))
}

/// Multi-source BFS graph distance to `sources`; usize::MAX when unreachable.
pub fn distance_to(shape: TorusShape, sources: &[usize], limit: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; shape.size()];
    let mut q = VecDeque::new();
    for &s in sources {
        if dist[s] != 0 {
            dist[s] = 0;
            q.push_back(s);
        }
    }
    while let Some(x) = q.pop_front() {
        let dx = dist[x];
        if dx >= limit {
            continue;
        }
        for a in 0..shape.d() {
            for up in [true, false] {
                let y = shape.step(x, a, up);
                if dist[y] == usize::MAX {
                    dist[y] = dx + 1;
                    q.push_back(y);
                }
            }
        }
    }
    dist
}

/// Separating set with ε < 21^{−d} and ‖f‖² < N, as certified.
pub fn separating_set(f: &Field, eps: f64) -> Result<SeparatingSet, TemperingError> {
    let shape = f.shape();
    let max = eps_max(shape.d());
    if !(eps > 0.0 && eps < max) {
        return Err(TemperingError::Epsilon { eps, max });
    }
    let mass = f.mass();
    if !(mass < shape.size() as f64) {
        return Err(TemperingError::Mass { mass, size: shape.size() });
    }
    Ok(build(shape, f.values(), eps))
}

/// The same procedure for any ε ∈ (0, 1); the certificate records which properties hold.
pub fn separating_set_relaxed(f: &Field, eps: f64) -> Result<SeparatingSet, TemperingError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(TemperingError::Epsilon { eps, max: 1.0 });
    }
    Ok(build(f.shape(), f.values(), eps))
}

pub(crate) fn build(shape: TorusShape, v: &[C64], eps: f64) -> SeparatingSet {
    let n = shape.size();
    let thr = eps * n as f64;
    let seed: Vec<usize> = (0..n).filter(|&x| v[x].norm_sqr() >= thr).collect();
    let imax = (10.0 / eps).ceil() as usize;
    let dist = distance_to(shape, &seed, 2 * imax + 1);
    let maxd = 2 * imax + 1;
    let mut layer = vec![0.0; maxd + 1];
    for x in 0..n {
        if dist[x] <= maxd {
            layer[dist[x]] += v[x].norm_sqr();
        }
    }
    let shell = |i: usize| layer[2 * i - 1] + layer[2 * i];
    let mut i0 = imax;
    for i in 1..=imax {
        if shell(i) < thr / 10.0 {
            i0 = i;
            break;
        }
    }
    let radius = 2 * i0 - 1;
    let sites: Vec<usize> = (0..n).filter(|&x| dist[x] <= radius).collect();
    let core_sites: Vec<usize> = (0..n).filter(|&x| dist[x] < radius).collect();
    let mut shell_masses = vec![layer[0]];
    shell_masses.extend((1..=i0).map(shell));
    let max_outside = (0..n).filter(|&x| dist[x] > radius).map(|x| v[x].norm_sqr()).fold(0.0, f64::max);
    let size_bound = eps.powi(-(shape.d() as i32) - 2);
    let certificate = Certificate {
        size_ok: sites.len() as f64 <= size_bound,
        outside_ok: max_outside < thr,
        shell_ok: shell(i0) < thr / 10.0,
        size_bound,
        max_outside,
        shell_mass: shell(i0),
        inner_shell_mass: layer[2 * i0 - 1],
        outer_shell_mass: layer[2 * i0],
    };
    SeparatingSet { eps, sites, seed_sites: seed, core_sites, i0, shell_masses, certificate }
}

/// U₁ = {x : d(x, U) ≤ C log²N}.
pub fn expanded_set(shape: TorusShape, sites: &[usize], c: f64) -> Result<Vec<usize>, TemperingError> {
    if !(c > 0.0) {
        return Err(TemperingError::Constant(c));
    }
    let r = (c * (shape.size() as f64).ln().powi(2)).floor() as usize;
    let dist = distance_to(shape, sites, r);
    Ok((0..shape.size()).filter(|&x| dist[x] <= r).collect())
}

/// ‖f|_U‖²/N.
pub fn mass_fraction(f: &Field, sites: &[usize]) -> f64 {
    let v = f.values();
    sites.iter().map(|&x| v[x].norm_sqr()).sum::<f64>() / f.shape().size() as f64
}

/// ε_N = 1/log N, the schedule used for desk-scale experiments.
pub fn experiment_eps(size: usize) -> f64 {
    1.0 / (size as f64).ln()
}
