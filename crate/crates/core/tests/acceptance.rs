//! Acceptance run: one line per criterion, nonzero exit on any unexpected outcome.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nls_lattice::experiments::{self, ExperimentReport, Status, Tolerances};
use nls_lattice::greens;
use nls_lattice::landscape::{EntropyTable, Landscape, SolitonOptions};
use nls_lattice::lattice::TorusShape;
use nls_lattice::spherical::{self, SphericalParams};
use nls_lattice::tempering;

const C3_MC_TOL: f64 = 1e-3;
const C3_REGRESSION: f64 = 0.252731;
const C3_REGRESSION_TOL: f64 = 1e-6;
const ROUND_TRIP_TOL: f64 = 1e-8;
const TV_TOL: f64 = 0.05;
const SE_MULT: f64 = 3.0;
const SCALING_TOL: f64 = 1e-3;
const W_FLAT_TOL: f64 = 1e-6;
const W_DUAL_TOL: f64 = 1e-4;
const W_MC_TOL: f64 = 0.05;
const RP_GAP_TOL: f64 = 0.05;
const MINSET_GRID_TOL: f64 = 0.01;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn c3() -> f64 {
    greens::critical_constant(3).unwrap()
}

fn summarize(r: &ExperimentReport) -> String {
    let failed: Vec<&str> = r.failed().iter().map(|c| c.name.as_str()).collect();
    format!("status {:?}, {} checks, failed {:?}", r.status, r.checks.len(), failed)
}

fn green_constant() -> Outcome {
    let (q, err) = greens::zd_greens_diag_with_error(3, 0.0).unwrap();
    let (mc, se) = common::random_walk_green(10_000_000, 400, 2024);
    let ok = (q - mc).abs() < C3_MC_TOL && (q - C3_REGRESSION).abs() < C3_REGRESSION_TOL;
    outcome(ok, format!("quadrature {q:.8} (err {err:.1e}), random walk {mc:.6} ± {se:.1e}"))
}

fn mass_round_trip() -> Outcome {
    let c = c3();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let theta = c * (0.05 + 0.95 * (i + 1) as f64 / 20.0);
        let m = greens::solve_mass(theta, 3).unwrap();
        worst = worst.max((greens::zd_greens_diag(3, m).unwrap() - theta).abs());
    }
    outcome(worst < ROUND_TRIP_TOL, format!("max |G(m(θ)) − θ| = {worst:.2e}"))
}

fn spherical_marginals() -> Outcome {
    let s = TorusShape::new(3, 2).unwrap();
    let size = s.size() as f64;
    let bins = 20;
    let sub = 8;
    let mut worst: f64 = 0.0;
    for theta in [0.6 * c3(), 2.0 * c3()] {
        let mu: Vec<f64> = common::torus_eigenvalues(3, 2)[1..].iter().map(|l| 1.0 / (theta * l)).collect();
        let h = size / (bins * sub) as f64;
        let cdf: Vec<f64> = (0..=bins * sub).map(|j| common::hypoexp_cdf(&mu, j as f64 * h)).collect();
        let mut mass_p: Vec<f64> =
            (0..bins).map(|b| (0..sub).map(|q| 0.5 * h * (cdf[b * sub + q] + cdf[b * sub + q + 1])).sum()).collect();
        let total: f64 = mass_p.iter().sum();
        mass_p.iter_mut().for_each(|p| *p /= total);
        // |Y_0|² = u has density ∝ P(Z' ≤ N − u): the mass histogram reversed.
        let zero_p: Vec<f64> = mass_p.iter().rev().copied().collect();
        let batch = spherical::sample_spherical(SphericalParams::new(s, theta), 100_000, 31).unwrap();
        let mut mass_c = vec![0u64; bins];
        let mut zero_c = vec![0u64; bins];
        for f in &batch.fields {
            let y0 = f.mean().norm_sqr() * size;
            mass_c[((f.mass() / size * bins as f64) as usize).min(bins - 1)] += 1;
            zero_c[((y0 / size * bins as f64) as usize).min(bins - 1)] += 1;
        }
        worst = worst.max(common::tv_distance(&mass_c, &mass_p)).max(common::tv_distance(&zero_c, &zero_p));
    }
    outcome(worst < TV_TOL, format!("max TV over mass and zero-mode marginals = {worst:.4}"))
}

fn massless() -> Outcome {
    let r = experiments::verify_massless_shift(&experiments::MasslessConfig {
        d: 3,
        ns: vec![8, 12, 16],
        theta: 2.0 * c3(),
        nu: 1.0,
        p: 6.0,
        samples: 4000,
        sweeps: 20_000,
        burnin: 2000,
        rmax: 4,
        seed: 12,
        tol: Tolerances::default(),
    })
    .unwrap();
    outcome(r.passed(), summarize(&r))
}

fn massive() -> Outcome {
    let r = experiments::verify_subcritical_massive(&experiments::SubcriticalConfig {
        d: 3,
        n: 8,
        theta: 0.6 * c3(),
        nu: 2.0,
        p: 6.0,
        samples: 4000,
        sweeps: 20_000,
        burnin: 2000,
        rmax: 4,
        seed: 11,
        tol: Tolerances::default(),
    })
    .unwrap();
    let slope = r.check("decay_slope").map(|c| format!(", decay slope {:.3} vs {:.3}", c.measured, c.expected));
    outcome(r.passed(), format!("{}{}", summarize(&r), slope.unwrap_or_default()))
}

fn scaling_relation() -> Outcome {
    let s = TorusShape::new(3, 8).unwrap();
    let offsets = spherical::axis_offsets(3, 4);
    let mut worst: f64 = 0.0;
    for (k, theta) in [0.6 * c3(), 2.0 * c3()].into_iter().enumerate() {
        let half = spherical::sample_spherical(SphericalParams::new(s, theta).with_gamma(0.5), 4000, 40 + k as u64).unwrap();
        let full = spherical::sample_spherical(SphericalParams::new(s, 0.5 * theta), 4000, 50 + k as u64).unwrap();
        let a = spherical::empirical_covariance(&half, &offsets, false);
        let b = spherical::empirical_covariance(&full, &offsets, false);
        for (x, y) in a.iter().zip(&b) {
            // Field at (θ, γ) equals √γ times the field at (θγ, 1).
            let se = (x.re.se.powi(2) + 0.25 * y.re.se.powi(2)).sqrt();
            worst = worst.max((x.re.mean - 0.5 * y.re.mean).abs() / se);
        }
    }
    outcome(worst < SE_MULT, format!("max |C(θ,½) − ½C(θ/2,1)| = {worst:.2} SE over offsets 0..4"))
}

fn separating_sets() -> Outcome {
    let mut bad = 0;
    let mut count = 0;
    for i in 0..1000u64 {
        let d = 1 + (i % 3) as usize;
        let n = 3 + (i / 3 % 6) as usize;
        let shape = TorusShape::new(d, n).unwrap();
        let scale = 0.01 + 0.98 * ((i * 7919) % 1000) as f64 / 1000.0;
        let f = common::adversarial(shape, (i % 4) as u8, i.wrapping_mul(0x9e37_79b9_7f4a_7c15), scale);
        let eps = tempering::eps_max(d) * (0.01 + 0.98 * ((i * 104_729) % 997) as f64 / 997.0);
        let u = tempering::separating_set(&f, eps).unwrap();
        let thr = eps * shape.size() as f64;
        let mask = u.mask(shape);
        let size_ok = u.sites.len() as f64 <= eps.powi(-(d as i32) - 2);
        let outside_ok = (0..shape.size()).all(|x| mask[x] || f.values()[x].norm_sqr() < thr);
        let shell_ok = u.certificate.shell_mass < thr / 10.0;
        if !(size_ok && outside_ok && shell_ok && u.certificate.holds()) {
            bad += 1;
        }
        count += 1;
    }
    outcome(bad == 0, format!("{bad} of {count} fields violate a property"))
}

fn landscape_identities() -> Outcome {
    let land = Landscape::new(6.0, 3).unwrap();
    let xs: Vec<f64> = (0..20).map(|j| 0.5 + 2.0 * j as f64).collect();
    let iv: Vec<f64> = xs.iter().map(|&x| land.soliton.i(x).unwrap()).collect();
    let i_ok = iv.iter().all(|&v| v <= 0.0) && iv.windows(2).all(|w| w[1] <= w[0]);

    let opts = SolitonOptions::default();
    let (p, nu): (f64, f64) = (6.0, 8.0);
    let scaled = nls_lattice::landscape::soliton_energy_scaled(1.0, p, 3, nu.powf((p - 2.0) / 2.0), &opts).unwrap();
    let plain = nls_lattice::landscape::soliton_energy(nu, p, 3, &opts).unwrap();
    let scale_err = (scaled.value - plain.value / nu).abs() / plain.value.abs();

    let t = EntropyTable::new(3).unwrap();
    let cd = t.critical();
    let flat = (0..=20).map(|j| (t.w(cd * (1.0 + j as f64 / 20.0)) - t.w(cd)).abs()).fold(0.0, f64::max);
    let w: Vec<f64> = (1..=60).map(|j| t.w(cd * j as f64 / 60.0)).collect();
    let shape_ok =
        w.windows(2).all(|x| x[1] <= x[0] + 1e-12) && w.windows(3).all(|x| x[0] - 2.0 * x[1] + x[2] >= -1e-9);
    let mut dual: f64 = 0.0;
    for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let b = frac * cd;
        let h = 1e-6 * b;
        let fd = (t.w(b + h) - t.w(b - h)) / (2.0 * h);
        let m = greens::solve_mass(b, 3).unwrap();
        dual = dual.max((fd + m).abs() / (1.0 + m));
    }
    let mut mc: f64 = 0.0;
    for (k, b) in [0.12, 0.2, 0.3, 0.45].into_iter().enumerate() {
        mc = mc.max((t.w(b) - common::entropy_mc(3, 6, b, 20_000, 60 + k as u64)).abs());
    }
    let ok = i_ok && scale_err < SCALING_TOL && flat < W_FLAT_TOL && shape_ok && dual < W_DUAL_TOL && mc < W_MC_TOL;
    outcome(
        ok,
        format!(
            "I ok {i_ok}, scaling rel err {scale_err:.1e}, W flat {flat:.1e}, W convex/nonincreasing {shape_ok}, \
             W' + m* {dual:.1e}, W vs MC {mc:.4}"
        ),
    )
}

fn gns() -> Outcome {
    let g = nls_lattice::landscape::gns_threshold(6.0, 3, &SolitonOptions::default()).unwrap();
    outcome(
        g.relative_gap < RP_GAP_TOL,
        format!("R_p quotient {:.4}, bisection {:.4}, gap {:.2e}", g.r_p, g.r_p_bisection, g.relative_gap),
    )
}

fn phase_curve() -> Outcome {
    let land = Landscape::new(6.0, 3).unwrap();
    let cd = land.c_d();
    let thetas: Vec<f64> = (0..12).map(|i| 0.05 + 0.55 * i as f64 / 11.0).collect();
    let nus: Vec<f64> = thetas.iter().map(|&t| land.critical_nu(t, 1e-9).unwrap()).collect();
    let decreasing = nus.windows(2).all(|w| w[1] < w[0]);
    let above_rp = nus.iter().all(|&v| v > land.r_p());
    let mut mismatches = Vec::new();
    for (&theta, &nu_c) in thetas.iter().zip(&nus) {
        let below = land.minimizer_set(theta, 0.95 * nu_c, 1e-6).unwrap();
        let right = if theta > cd { 1.0 - cd / theta } else { 0.0 };
        let ok_below = below.contains_zero
            && below.intervals.len() == 1
            && (below.intervals[0].1 - right).abs() < MINSET_GRID_TOL;
        let above = land.minimizer_set(theta, 1.05 * nu_c, 1e-6).unwrap();
        if !ok_below || !above.bounded_away_from_zero {
            mismatches.push(theta);
        }
    }
    outcome(
        decreasing && above_rp && mismatches.is_empty(),
        format!(
            "ν_c from {:.4} to {:.4}, decreasing {decreasing}, above R_p {:.4} {above_rp}, flag mismatches {mismatches:?}",
            nus[0],
            nus[11],
            land.r_p()
        ),
    )
}

fn double_transition() -> Outcome {
    let land = Landscape::new(6.0, 3).unwrap();
    let nu = 0.5 * (land.r_p() + land.critical_nu(land.c_d(), 1e-9).unwrap());
    let r = experiments::verify_double_transition(&experiments::DoubleTransitionConfig {
        d: 3,
        p: 6.0,
        nu,
        thetas: (0..30).map(|i| 0.05 * 1.12f64.powi(i)).collect(),
        representative: Vec::new(),
        n: 12,
        sweeps: 10_000,
        burnin: 2000,
        rmax: 6,
        seed: 14,
        tol: Tolerances::default(),
    })
    .unwrap();
    outcome(r.passed(), format!("ν = {nu:.4}: {}", summarize(&r)))
}

/// The reduced mass exceeds m(θ) on this branch, so only that check is expected to fail.
const KNOWN_SUPERCRITICAL_FAILURES: [&str; 1] = ["m_star_below_m_theta"];

fn supercritical() -> (Outcome, bool) {
    let land = Landscape::new(6.0, 3).unwrap();
    let theta = 0.15;
    let nu = 1.05 * land.critical_nu(theta, 1e-9).unwrap();
    let r = experiments::verify_supercritical(&experiments::SupercriticalConfig {
        d: 3,
        n: 12,
        theta,
        nu,
        p: 6.0,
        sweeps: 20_000,
        burnin: 5000,
        expand_c: 0.02,
        far: 3,
        seed: 13,
        tol: Tolerances::default(),
    })
    .unwrap();
    let failed: Vec<&str> = r.failed().iter().map(|c| c.name.as_str()).collect();
    let expected = r.status == Status::Fail && failed == KNOWN_SUPERCRITICAL_FAILURES;
    let m = r.check("m_star_below_m_theta").map(|c| format!(", M(a*) = {:.4} vs m(θ) = {:.4}", c.measured, c.expected));
    (outcome(r.passed(), format!("{}{}", summarize(&r), m.unwrap_or_default())), expected)
}

fn tails() -> Outcome {
    let r = experiments::verify_tail_envelope(&experiments::TailConfig {
        d: 3,
        n: 8,
        theta: 0.5 * c3(),
        samples: 20_000,
        hole_radius: 1,
        boundary_value: 1.0,
        seed: 16,
    })
    .unwrap();
    let env: Vec<String> = ["linf_envelope", "boundary_envelope"]
        .iter()
        .filter_map(|k| r.check(k).map(|c| format!("{k} {:.4}", c.measured)))
        .collect();
    outcome(r.passed(), format!("{}; {}", summarize(&r), env.join(", ")))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("nls-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.toml");
    fs::write(&cfg, "suite = \"tails\"\nd = 3\nn = 6\ntheta = 0.1\nseed = 8\nsamples = 2000\n").unwrap();
    let cases: Vec<Vec<String>> = [
        vec!["greens", "--d", "3", "--m", "0.1", "--n", "8"],
        vec!["sample-spherical", "--d", "3", "--n", "6", "--theta", "0.2", "--count", "200", "--seed", "2"],
        vec!["sample-nls", "--d", "3", "--n", "4", "--theta", "0.3", "--nu", "3", "--steps", "500", "--burnin", "100", "--seed", "9"],
        vec!["landscape", "--theta", "0.2", "--nu", "9", "--a-grid", "0:0.9:19"],
        vec!["phase-diagram", "--theta-range", "0.05:0.6:5"],
        vec!["verify", "--config", cfg.to_str().unwrap()],
    ]
    .iter()
    .map(|v| v.iter().map(|s| s.to_string()).collect())
    .collect();
    let mut differing = Vec::new();
    for (i, args) in cases.iter().enumerate() {
        let mut runs = Vec::new();
        for rep in 0..2 {
            let out = dir.join(format!("c{i}-{rep}"));
            let o = Command::new(env!("CARGO_BIN_EXE_nls-lattice"))
                .args(args)
                .args(["--out", out.to_str().unwrap()])
                .output()
                .unwrap();
            runs.push((o.status.code(), o.stdout, o.stderr, tree(&out)));
        }
        if runs[0] != runs[1] || runs[0].3.is_empty() {
            differing.push(args[0].clone());
        }
    }
    let _ = fs::remove_dir_all(&dir);
    outcome(differing.is_empty(), format!("{} invocations repeated, differing {differing:?}", cases.len()))
}

fn main() {
    // libtest arguments such as --nocapture are accepted and ignored.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut unexpected = 0;
    let mut run = |id: u32, name: &str, f: &dyn Fn() -> (Outcome, bool)| {
        if filter.as_deref().is_some_and(|s| !name.contains(s)) {
            return;
        }
        let t = Instant::now();
        let (o, expected_failure) = f();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        let note = if !o.passed && expected_failure { " [known failure]" } else { "" };
        println!("criterion {id:>2} {verdict} {name} ({:.1}s): {}{note}", t.elapsed().as_secs_f64(), o.detail);
        if !o.passed && !expected_failure {
            unexpected += 1;
        }
    };
    let plain = |f: fn() -> Outcome| move || (f(), false);
    run(1, "green_constant", &plain(green_constant));
    run(2, "mass_round_trip", &plain(mass_round_trip));
    run(3, "spherical_marginals", &plain(spherical_marginals));
    run(4, "massless_local_limit", &plain(massless));
    run(5, "massive_local_limit", &plain(massive));
    run(6, "scaling_relation", &plain(scaling_relation));
    run(7, "separating_set", &plain(separating_sets));
    run(8, "landscape_identities", &plain(landscape_identities));
    run(9, "gns_threshold", &plain(gns));
    run(10, "phase_curve", &plain(phase_curve));
    run(11, "double_transition", &plain(double_transition));
    run(12, "supercritical_concentration", &supercritical);
    run(13, "tail_envelope", &plain(tails));
    run(14, "determinism", &plain(determinism));
    if unexpected > 0 {
        println!("acceptance: {unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
    println!("acceptance: done");
}
