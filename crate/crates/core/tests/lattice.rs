use nls_lattice::lattice::{self, Field, Fourier, Norm, TorusShape, C64};
use nls_lattice::rng;
use proptest::prelude::*;

const TAU: f64 = std::f64::consts::TAU;

fn random_field(shape: TorusShape, seed: u64) -> Field {
    let mut r = rng::stream(seed, 1, 0);
    Field::from_values(shape, (0..shape.size()).map(|_| rng::complex_normal(&mut r, 1.0)).collect()).unwrap()
}

/// Σ_x f(x) e^{sign·i2πk·x/n}/√N written out coordinate by coordinate.
fn naive_dft(shape: TorusShape, v: &[C64], sign: f64) -> Vec<C64> {
    let n = shape.n() as f64;
    let norm = (shape.size() as f64).sqrt();
    (0..shape.size())
        .map(|k| {
            let ck = shape.coords(k);
            let mut s = C64::new(0.0, 0.0);
            for (x, z) in v.iter().enumerate() {
                let cx = shape.coords(x);
                let ph: f64 = ck.iter().zip(&cx).map(|(&a, &b)| TAU * (a * b) as f64 / n).sum();
                s += z * C64::from_polar(1.0, sign * ph);
            }
            s / norm
        })
        .collect()
}

#[test]
fn shape_rejects_degenerate_sizes() {
    assert!(TorusShape::new(0, 4).is_err());
    assert!(TorusShape::new(3, 0).is_err());
    let s = TorusShape::new(3, 5).unwrap();
    assert_eq!(s.size(), 125);
    assert_eq!(s.degree(), 6);
}

#[test]
fn neighbor_table_lists_forward_then_backward_steps() {
    let s = TorusShape::new(3, 4).unwrap();
    let t = s.neighbor_table();
    for x in 0..s.size() {
        let c = s.coords(x);
        for a in 0..3 {
            let mut up = c.clone();
            up[a] = (up[a] + 1) % 4;
            let mut down = c.clone();
            down[a] = (down[a] + 3) % 4;
            assert_eq!(t[x * 6 + 2 * a], s.index(&up));
            assert_eq!(t[x * 6 + 2 * a + 1], s.index(&down));
        }
    }
}

#[test]
fn fourier_matches_naive_dft() {
    for (d, n) in [(1, 7), (2, 6), (3, 4), (3, 5)] {
        let s = TorusShape::new(d, n).unwrap();
        let f = random_field(s, d as u64 * 10 + n as u64);
        let fw = Fourier::new(s).forward(&f);
        let want = naive_dft(s, f.values(), -1.0);
        for (a, b) in fw.values().iter().zip(&want) {
            assert!((a - b).norm() < 1e-12);
        }
        let direct = lattice::dft_direct(s, f.values(), -1.0);
        for (a, b) in direct.iter().zip(&want) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn eigenvectors_diagonalise_the_laplacian() {
    let s = TorusShape::new(3, 5).unwrap();
    let lam = s.eigenvalues();
    for k in [0, 1, 7, 31, 124] {
        let e = lattice::eigenvector(s, k);
        let le = lattice::laplacian(&e);
        for (a, b) in le.values().iter().zip(e.values()) {
            assert!((a + b * lam[k]).norm() < 1e-12);
        }
        assert!((lam[k] - s.eigenvalue(k)).abs() < 1e-14);
        let c = Fourier::new(s).forward(&e);
        assert!((c.values()[k].norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn nu_n_formula() {
    let v = lattice::nu_n(1.0, 6.0, 64);
    assert!((v - 1.0 / 3.0 / 4096.0).abs() < 1e-18);
    assert!((v - 8.138020833333333e-5).abs() < 1e-15);
}

#[test]
fn hamiltonian_of_spike_and_zero() {
    let s = TorusShape::new(3, 4).unwrap();
    assert_eq!(lattice::nls_hamiltonian(&Field::zeros(s), 2.0, 6.0), 0.0);
    let n = s.size() as f64;
    let mut f = Field::indicator(s, 5);
    f.scale(n.sqrt());
    let (nu, p) = (2.0, 6.0);
    let nun = (2.0 / p) * (nu / n).powf((p - 2.0) / 2.0);
    let want = 2.0 * 3.0 * n - nun * n.powf(p / 2.0);
    assert!((lattice::nls_hamiltonian(&f, nu, p) - want).abs() < 1e-9 * want.abs());
}

#[test]
fn constant_field_has_no_gradient_energy() {
    let s = TorusShape::new(2, 6).unwrap();
    let f = Field::constant(s, C64::new(0.3, -1.2));
    assert!(lattice::dirichlet_energy(&f).abs() < 1e-15);
    assert!(lattice::laplacian(&f).values().iter().all(|z| z.norm() < 1e-14));
}

#[test]
fn field_rejects_non_finite_values() {
    let s = TorusShape::new(1, 3).unwrap();
    assert!(Field::from_values(s, vec![C64::new(f64::NAN, 0.0); 3]).is_err());
    assert!(Field::from_values(s, vec![C64::new(0.0, 0.0); 2]).is_err());
}

#[test]
fn torus_distance_is_wrapped_l1() {
    let s = TorusShape::new(2, 5).unwrap();
    let a = s.index(&[0, 0]);
    let b = s.index(&[4, 3]);
    assert_eq!(s.distance(a, b), 1 + 2);
    assert_eq!(s.translate(a, &[-1, -2]), b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn parseval_and_round_trip(seed in 0u64..10_000, d in 1usize..4, n in 2usize..7) {
        let s = TorusShape::new(d, n).unwrap();
        let f = random_field(s, seed);
        let ft = Fourier::new(s);
        let g = ft.forward(&f);
        prop_assert!((g.mass() - f.mass()).abs() <= 1e-10 * f.mass());
        let back = ft.inverse(&g);
        for (a, b) in back.values().iter().zip(f.values()) {
            prop_assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn dirichlet_energy_is_minus_inner_with_laplacian(seed in 0u64..10_000, n in 2usize..6) {
        let s = TorusShape::new(3, n).unwrap();
        let f = random_field(s, seed);
        let e = lattice::dirichlet_energy(&f);
        let inner = f.inner(&lattice::laplacian(&f));
        prop_assert!((e + inner.re).abs() <= 1e-10 * (1.0 + e));
    }

    #[test]
    fn norms_are_ordered(seed in 0u64..10_000, p in 1.0f64..8.0) {
        let s = TorusShape::new(2, 4).unwrap();
        let f = random_field(s, seed);
        let lp = lattice::norm(&f, Norm::P(p)).unwrap();
        let l2 = lattice::norm(&f, Norm::P(2.0)).unwrap();
        let linf = lattice::norm(&f, Norm::Inf).unwrap();
        prop_assert!(linf <= lp * (1.0 + 1e-12));
        if p >= 2.0 {
            prop_assert!(lp <= l2 * (1.0 + 1e-12));
        }
    }
}
