mod common;

use common::adversarial;
use nls_lattice::lattice::{Field, TorusShape, C64};
use nls_lattice::tempering::{self, TemperingError};
use proptest::prelude::*;

/// Independent construction: distances from wrapped ℓ¹ metric, shells by direct sums.
fn oracle(shape: TorusShape, v: &[C64], eps: f64) -> (Vec<usize>, usize) {
    let n = shape.size();
    let thr = eps * n as f64;
    let seed: Vec<usize> = (0..n).filter(|&x| v[x].norm_sqr() >= thr).collect();
    let dist: Vec<usize> =
        (0..n).map(|x| seed.iter().map(|&s| shape.distance(x, s)).min().unwrap_or(usize::MAX)).collect();
    let shell = |i: usize| -> f64 {
        (0..n).filter(|&x| dist[x] == 2 * i - 1 || dist[x] == 2 * i).map(|x| v[x].norm_sqr()).sum()
    };
    let imax = (10.0 / eps).ceil() as usize;
    let i0 = (1..=imax).find(|&i| shell(i) < thr / 10.0).unwrap_or(imax);
    ((0..n).filter(|&x| dist[x] <= 2 * i0 - 1).collect(), i0)
}

#[test]
fn certified_range_is_enforced() {
    let shape = TorusShape::new(2, 4).unwrap();
    let f = adversarial(shape, 0, 1, 0.5);
    assert!(matches!(tempering::separating_set(&f, 0.1), Err(TemperingError::Epsilon { .. })));
    let heavy = adversarial(shape, 0, 1, 1.5);
    assert!(matches!(tempering::separating_set(&heavy, 1e-3), Err(TemperingError::Mass { .. })));
    assert!(tempering::separating_set_relaxed(&f, 0.1).is_ok());
    assert!(tempering::separating_set_relaxed(&f, 1.0).is_err());
    assert!(tempering::expanded_set(shape, &[0], 0.0).is_err());
}

#[test]
fn expanded_set_is_a_ball_of_log_squared_radius() {
    let shape = TorusShape::new(2, 20).unwrap();
    let c = 0.1;
    let r = (c * (400f64).ln().powi(2)).floor() as usize;
    let u = tempering::expanded_set(shape, &[0], c).unwrap();
    let want: Vec<usize> = (0..400).filter(|&x| shape.distance(x, 0) <= r).collect();
    assert_eq!(u, want);
}

#[test]
fn spike_mass_fraction() {
    let shape = TorusShape::new(3, 4).unwrap();
    let mut f = Field::indicator(shape, 9);
    f.scale((0.7 * 64.0f64).sqrt());
    let u = tempering::separating_set_relaxed(&f, 0.2).unwrap();
    assert!(u.sites.contains(&9));
    assert!((tempering::mass_fraction(&f, &u.sites) - 0.7).abs() < 1e-12);
    assert_eq!(u.seed_sites, vec![9]);
}

#[test]
fn eps_schedule() {
    assert!((tempering::eps_max(2) - 1.0 / 441.0).abs() < 1e-15);
    assert!((tempering::experiment_eps(1000) - 1.0 / 1000f64.ln()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn certified_properties_hold(
        d in 1usize..4,
        n in 3usize..9,
        kind in 0u8..4,
        seed in any::<u64>(),
        scale in 0.01f64..0.999,
        e in 0.01f64..0.99,
    ) {
        let shape = TorusShape::new(d, n).unwrap();
        let f = adversarial(shape, kind, seed, scale);
        let eps = e * tempering::eps_max(d);
        let u = tempering::separating_set(&f, eps).unwrap();
        prop_assert!(u.certificate.holds());
        let thr = eps * shape.size() as f64;
        let mask = u.mask(shape);
        for x in 0..shape.size() {
            if !mask[x] {
                prop_assert!(f.values()[x].norm_sqr() < thr);
            }
        }
        prop_assert!(u.sites.len() as f64 <= eps.powi(-(d as i32) - 2));
        prop_assert!(u.certificate.shell_mass < thr / 10.0);
        prop_assert!(u.seed_sites.iter().all(|s| u.core_sites.contains(s) || u.core_sites.is_empty()));
        prop_assert!(u.core_sites.iter().all(|s| u.sites.contains(s)));
    }

    #[test]
    fn construction_matches_oracle(
        d in 1usize..4,
        n in 3usize..8,
        kind in 0u8..4,
        seed in any::<u64>(),
        scale in 0.01f64..3.0,
        eps in 0.02f64..0.6,
    ) {
        let shape = TorusShape::new(d, n).unwrap();
        let f = adversarial(shape, kind, seed, scale);
        let u = tempering::separating_set_relaxed(&f, eps).unwrap();
        let (sites, i0) = oracle(shape, f.values(), eps);
        prop_assert_eq!(&u.sites, &sites);
        prop_assert_eq!(u.i0, i0);
    }
}
