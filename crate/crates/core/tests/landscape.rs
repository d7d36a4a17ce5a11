mod common;

use nls_lattice::greens;
use nls_lattice::landscape::{self, EntropyTable, Landscape, LocalLimit, Phase, SolitonOptions};

#[test]
fn soliton_energy_is_nonpositive_and_nonincreasing() {
    let land = Landscape::new(6.0, 3).unwrap();
    let xs: Vec<f64> = (0..20).map(|j| 0.5 + 2.0 * j as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| land.soliton.i(x).unwrap()).collect();
    assert!(vals.iter().all(|&v| v <= 0.0));
    assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    assert!(vals[0] == 0.0 && vals[19] < 0.0);
    assert!(land.soliton.i(100.0).is_err());
}

#[test]
fn soliton_branch_satisfies_superadditivity_bound() {
    // I(a)/a nonincreasing gives I'(a) ≤ I(a)/a on the negative part of the branch.
    let land = Landscape::new(6.0, 3).unwrap();
    let t = &land.soliton;
    for j in 0..t.xs.len() {
        if t.values[j] < 0.0 {
            assert!(t.derivs[j] <= t.values[j] / t.xs[j] + 1e-6, "x = {}", t.xs[j]);
        }
    }
}

#[test]
fn scaling_identity_between_conventions() {
    let opts = SolitonOptions::default();
    let (p, a, nu): (f64, f64, f64) = (6.0, 1.0, 8.0);
    let kappa = nu.powf((p - 2.0) / 2.0);
    let scaled = landscape::soliton_energy_scaled(a, p, 3, kappa, &opts).unwrap();
    let plain = landscape::soliton_energy(nu * a, p, 3, &opts).unwrap();
    assert!(plain.value < 0.0);
    assert!((scaled.value - plain.value / nu).abs() < 1e-3 * plain.value.abs());
}

#[test]
fn soliton_energy_input_errors() {
    let opts = SolitonOptions::default();
    assert!(landscape::soliton_energy(-1.0, 6.0, 3, &opts).is_err());
    assert!(landscape::soliton_energy(1.0, 2.0, 3, &opts).is_err());
}

#[test]
fn weinstein_and_bisection_thresholds_agree() {
    let g = landscape::gns_threshold(6.0, 3, &SolitonOptions::default()).unwrap();
    assert!(g.relative_gap < 0.05);
    assert!(g.r_p > 0.0);
    let sub = landscape::gns_threshold(3.0, 3, &SolitonOptions::default()).unwrap();
    assert_eq!(sub.r_p, 0.0);
}

#[test]
fn entropy_is_constant_above_the_critical_point() {
    let t = EntropyTable::new(3).unwrap();
    let cd = t.critical();
    let w0 = t.w(cd);
    for j in 0..=20 {
        let b = cd * (1.0 + j as f64 / 20.0);
        assert!((t.w(b) - w0).abs() < 1e-6);
        assert_eq!(t.m_star(b), 0.0);
    }
}

#[test]
fn entropy_is_convex_and_nonincreasing_below() {
    let t = EntropyTable::new(3).unwrap();
    let cd = t.critical();
    let bs: Vec<f64> = (1..=60).map(|j| cd * j as f64 / 60.0).collect();
    let w: Vec<f64> = bs.iter().map(|&b| t.w(b)).collect();
    assert!(w.windows(2).all(|x| x[1] <= x[0] + 1e-12));
    assert!(w.windows(3).all(|x| x[0] - 2.0 * x[1] + x[2] >= -1e-9));
    assert!(t.w(1e-9) > t.w(1e-3) + 5.0);
}

#[test]
fn entropy_derivative_is_minus_the_mass() {
    let t = EntropyTable::new(3).unwrap();
    let cd = t.critical();
    for frac in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
        let b = frac * cd;
        let h = 1e-6 * b;
        let fd = (t.w(b + h) - t.w(b - h)) / (2.0 * h);
        let m = greens::solve_mass(b, 3).unwrap();
        assert!((fd + m).abs() < 1e-4 * (1.0 + m), "b = {b}: {fd} vs {m}");
        assert!((t.m_star(b) - m).abs() < 1e-4 * (1.0 + m));
    }
}

#[test]
fn entropy_table_matches_direct_evaluation() {
    let t = EntropyTable::new(3).unwrap();
    for b in [0.01, 0.1, 0.2, 0.25, 0.3] {
        assert!((t.w(b) - landscape::entropy_w(b, 3).unwrap()).abs() < 1e-7);
    }
}

#[test]
fn entropy_matches_small_volume_monte_carlo() {
    let t = EntropyTable::new(3).unwrap();
    for b in [0.12, 0.2, 0.3, 0.45] {
        let mc = common::entropy_mc(3, 6, b, 20_000, 17);
        assert!((t.w(b) - mc).abs() < 0.05, "b = {b}: {} vs {mc}", t.w(b));
    }
}

#[test]
fn minimizers_follow_the_phase_curve() {
    let land = Landscape::new(6.0, 3).unwrap();
    let cd = land.c_d();
    for theta in [0.1, 0.2, 0.4] {
        let nu_c = land.critical_nu(theta, 1e-6).unwrap();
        assert!(nu_c > land.r_p());
        let below = land.minimizer_set(theta, 0.9 * nu_c, 1e-6).unwrap();
        assert!(below.contains_zero);
        let right = below.intervals[0].1;
        let want = if theta > cd { 1.0 - cd / theta } else { 0.0 };
        assert!((right - want).abs() < 0.01, "theta {theta}: {right} vs {want}");
        let above = land.minimizer_set(theta, 1.1 * nu_c, 1e-6).unwrap();
        assert!(above.bounded_away_from_zero);
    }
}

#[test]
fn phase_curve_is_decreasing() {
    let land = Landscape::new(6.0, 3).unwrap();
    let nus: Vec<f64> = [0.05, 0.1, 0.2, 0.3, 0.5].iter().map(|&t| land.critical_nu(t, 1e-6).unwrap()).collect();
    assert!(nus.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn classification_carries_local_limits() {
    let land = Landscape::new(6.0, 3).unwrap();
    let cd = land.c_d();
    let sub = land.phase_classify(0.5 * cd, 2.0, 1e-6).unwrap();
    assert_eq!(sub.phase, Phase::Dispersive);
    assert!(matches!(sub.limit, LocalLimit::MassiveGff { .. }));
    let crit = land.phase_classify(2.0 * cd, 2.0, 1e-6).unwrap();
    match crit.limit {
        LocalLimit::MasslessGffPlusDisc { radius } => assert!((radius - 0.5f64.sqrt()).abs() < 1e-12),
        other => panic!("{other:?}"),
    }
    let sup = land.phase_classify(0.15, 12.0, 1e-6).unwrap();
    assert_eq!(sup.phase, Phase::Solitonic);
    assert_eq!(sup.limit.is_massive(), Some(true));
    assert!(landscape::supercritical_mass(0.0, 2.0 * cd, 3).is_err());
}
