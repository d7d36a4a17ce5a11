use nalgebra::DMatrix;
use nls_lattice::greens::{self, DirichletGreens, GreensContext, SiteSet};
use nls_lattice::lattice::{Fourier, TorusShape, C64};
use nls_lattice::rng;
use proptest::prelude::*;

const PI: f64 = std::f64::consts::PI;

/// Midpoint rule on [0,1]^3 for 1/(λ(κ) + m).
fn midpoint_3d(m: f64, k: usize) -> f64 {
    let s2: Vec<f64> = (0..k).map(|i| 4.0 * (PI * (i as f64 + 0.5) / k as f64).sin().powi(2)).collect();
    let mut acc = 0.0;
    for a in &s2 {
        for b in &s2 {
            for c in &s2 {
                acc += 1.0 / (a + b + c + m);
            }
        }
    }
    acc / (k * k * k) as f64
}

fn dense_operator(shape: TorusShape, m: f64) -> DMatrix<f64> {
    let n = shape.size();
    let mut l = DMatrix::identity(n, n) * m;
    for x in 0..n {
        let c = shape.coords(x);
        for a in 0..shape.d() {
            let mut up = c.clone();
            up[a] = (up[a] + 1) % shape.n();
            let y = shape.index(&up);
            l[(x, x)] += 1.0;
            l[(y, y)] += 1.0;
            l[(x, y)] -= 1.0;
            l[(y, x)] -= 1.0;
        }
    }
    l
}

#[test]
fn critical_constant_agrees_with_richardson_midpoint() {
    let c3 = greens::critical_constant(3).unwrap();
    // The 1/|κ|² singularity gives an O(h) midpoint error.
    let oracle = 2.0 * midpoint_3d(0.0, 160) - midpoint_3d(0.0, 80);
    assert!((c3 - oracle).abs() < 1e-3, "{c3} vs {oracle}");
    assert!((c3 - 0.252731).abs() < 1e-6);
}

#[test]
fn massive_diagonal_agrees_with_midpoint() {
    for m in [0.05, 0.5, 3.0] {
        let g = greens::zd_greens_diag(3, m).unwrap();
        let oracle = midpoint_3d(m, 96);
        assert!((g - oracle).abs() < 1e-5 * g, "m = {m}: {g} vs {oracle}");
    }
}

#[test]
fn quadrature_error_estimate_is_small() {
    let (_, err) = greens::zd_greens_diag_with_error(3, 0.0).unwrap();
    assert!(err < 1e-10);
    assert!(greens::critical_constant(2).is_err());
    assert!(greens::zd_greens_diag(3, -1.0).is_err());
}

#[test]
fn mass_equation_round_trip() {
    let c3 = greens::critical_constant(3).unwrap();
    for i in 0..20 {
        let theta = c3 * (0.05 + 0.95 * (i as f64 + 1.0) / 20.0);
        let m = greens::solve_mass(theta, 3).unwrap();
        let back = greens::zd_greens_diag(3, m).unwrap();
        assert!((back - theta).abs() < 1e-8, "theta {theta}: {back}");
    }
    assert_eq!(greens::solve_mass(c3, 3).unwrap(), 0.0);
    assert!(greens::solve_mass(1.1 * c3, 3).is_err());
}

#[test]
fn torus_green_matches_dense_inverse() {
    let shape = TorusShape::new(3, 4).unwrap();
    for m in [0.1, 1.0] {
        let inv = dense_operator(shape, m).try_inverse().unwrap();
        let ctx = GreensContext::torus(shape, m).unwrap();
        for x in 0..shape.size() {
            for y in [0, 5, 17, 63] {
                assert!((ctx.value(x, y) - inv[(x, y)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_average_kernel_is_pseudo_inverse() {
    let shape = TorusShape::new(3, 4).unwrap();
    let n = shape.size();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let pinv = (dense_operator(shape, 0.0) + &j).try_inverse().unwrap() - &j;
    let k = greens::zero_avg_kernel(&Fourier::new(shape));
    for x in 0..n {
        assert!((greens::zero_avg_greens(shape, x, 3) - pinv[(x, 3)]).abs() < 1e-12);
    }
    assert!(k.iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn infinite_volume_green_is_approached_on_large_tori() {
    let shape = TorusShape::new(3, 24).unwrap();
    let ctx = GreensContext::torus(shape, 1.0).unwrap();
    for o in [[0i64, 0, 0], [1, 0, 0], [2, 1, 0], [3, 3, 1]] {
        let z = greens::zd_greens(3, 1.0, &o).unwrap();
        let t = ctx.value(shape.translate(0, &o), 0);
        assert!((z - t).abs() < 1e-9, "{o:?}: {z} vs {t}");
    }
}

#[test]
fn dirichlet_green_matches_restricted_inverse() {
    let shape = TorusShape::new(3, 4).unwrap();
    let sites = [0usize, 1, 2, 21];
    let hole = SiteSet::new(shape, &sites).unwrap();
    let free: Vec<usize> = (0..shape.size()).filter(|x| !sites.contains(x)).collect();
    for m in [0.0, 0.7] {
        let full = dense_operator(shape, m);
        let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| full[(free[i], free[j])]);
        let inv = sub.try_inverse().unwrap();
        let g = DirichletGreens::new(shape, hole.clone(), m).unwrap();
        for (i, &x) in free.iter().enumerate().step_by(7) {
            for (j, &y) in free.iter().enumerate().step_by(5) {
                assert!((g.value(x, y).unwrap() - inv[(i, j)]).abs() < 1e-9);
            }
        }
        assert_eq!(g.value(0, 5).unwrap(), 0.0);
    }
}

#[test]
fn harmonic_extension_solves_the_massive_equation() {
    let shape = TorusShape::new(3, 5).unwrap();
    let sites = [0usize, 1, 6];
    let hole = SiteSet::new(shape, &sites).unwrap();
    let f = vec![C64::new(1.0, 0.5), C64::new(-0.3, 0.0), C64::new(0.2, 0.9)];
    let m = 0.4;
    let ext = greens::harmonic_extension(shape, &hole, &f, m).unwrap();
    let op = dense_operator(shape, m);
    for x in 0..shape.size() {
        if let Some(j) = sites.iter().position(|&u| u == x) {
            assert_eq!(ext.h[x], f[j]);
            continue;
        }
        let mut s = C64::new(0.0, 0.0);
        for y in 0..shape.size() {
            s += ext.h[y] * op[(x, y)];
        }
        assert!(s.norm() < 1e-10);
        assert!(ext.h[x].norm() <= ext.decay_bound(shape, x) + 1e-12);
    }
    assert!(greens::harmonic_extension(shape, &hole, &f, 0.0).is_err());
}

#[test]
fn boundary_mass_equation_is_solved() {
    let shape = TorusShape::new(3, 4).unwrap();
    let sites = [0usize, 1];
    let hole = SiteSet::new(shape, &sites).unwrap();
    let f = vec![C64::new(0.5, 0.0), C64::new(0.0, 0.5)];
    let (theta, gamma) = (0.12, 0.9);
    let m = greens::solve_mass_with_boundary(shape, &hole, &f, theta, gamma).unwrap();
    let free: Vec<usize> = (0..shape.size()).filter(|x| !sites.contains(x)).collect();
    let full = dense_operator(shape, m);
    let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| full[(free[i], free[j])]);
    let trace = sub.clone().try_inverse().unwrap().trace();
    let ext = greens::harmonic_extension(shape, &hole, &f, m).unwrap();
    let lhs = trace + theta * ext.outside_mass();
    let rhs = theta * gamma * shape.size() as f64;
    assert!((lhs - rhs).abs() < 1e-8 * rhs, "{lhs} vs {rhs}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn diagonal_is_decreasing_in_mass(a in 0.0f64..5.0, b in 0.0f64..5.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(greens::zd_greens_diag(3, lo).unwrap() > greens::zd_greens_diag(3, hi).unwrap());
    }

    #[test]
    fn torus_kernel_is_symmetric_and_positive(seed in 0u64..1000, m in 0.01f64..4.0) {
        let shape = TorusShape::new(3, 5).unwrap();
        let ctx = GreensContext::torus(shape, m).unwrap();
        let mut r = rng::stream(seed, 3, 0);
        use rand::Rng;
        let x = r.random_range(0..shape.size());
        let y = r.random_range(0..shape.size());
        prop_assert!((ctx.value(x, y) - ctx.value(y, x)).abs() < 1e-14);
        prop_assert!(ctx.value(x, y) > 0.0);
        prop_assert!(ctx.value(x, y) <= ctx.diag() + 1e-14);
    }
}
