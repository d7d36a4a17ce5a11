use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use nls_lattice::config::{self, ConfigError, RunConfig, Suite};
use nls_lattice::experiments::{self, Curve, ExperimentReport, Status};
use nls_lattice::greens::{self, GreensContext};
use nls_lattice::io;
use nls_lattice::landscape::{Landscape, Phase};
use nls_lattice::lattice::{self, TorusShape, C64};
use nls_lattice::nls::{self, NlsParams, Schedule};
use nls_lattice::spherical::{self, Boundary, SphericalParams};
use nls_lattice::stats;

#[derive(Parser)]
#[command(name = "nls-lattice", version, about = "Lattice NLS and spherical-model sampling and verification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Diagonal Green's function of Z^d at mass m with its quadrature error.
    Greens {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        /// Also export the torus Green's function along an axis for this side length.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact samples from the spherical law.
    SampleSpherical {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Site indices of the hole, whitespace or comma separated.
        #[arg(long)]
        hole: Option<PathBuf>,
        /// Snapshot whose values on the hole are the boundary condition.
        #[arg(long)]
        boundary: Option<PathBuf>,
        /// Number of samples written as snapshots.
        #[arg(long, default_value_t = 8)]
        keep: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metropolis chain for the focusing NLS measure.
    SampleNls {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long, default_value_t = 6.0)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        #[arg(long, default_value_t = 2_000)]
        burnin: usize,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        linf_cap: Option<f64>,
        #[arg(long)]
        hole: Option<PathBuf>,
        #[arg(long)]
        boundary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Free-energy landscape F(a) = W(θ(1−a)) + (θ/ν) I(νa) with its phase certificate.
    Landscape {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long, default_value_t = 6.0)]
        p: f64,
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// Comma-separated values or lo:hi:k.
        #[arg(long)]
        a_grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critical curve ν_c(θ) with region labels.
    PhaseDiagram {
        #[arg(long, default_value_t = 6.0)]
        p: f64,
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// lo:hi:k
        #[arg(long)]
        theta_range: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Statistical verification suites.
    Verify {
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
    violations: Option<ConfigError>,
    code: u8,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<ConfigError>() {
            Ok(c) => Failure { kind: "config", message: c.to_string(), violations: Some(c), code: 2 },
            Err(e) => Failure { kind: "runtime", message: format!("{e:#}"), violations: None, code: 1 },
        }
    }
}

fn main() -> ExitCode {
    if let Ok(t) = std::env::var("NLS_LATTICE_THREADS") {
        if let Ok(k) = t.trim().parse::<usize>() {
            if k > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                eprintln!("{}", json!({ "error": { "kind": "usage", "message": msg.trim() } }));
                return ExitCode::from(2);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut err = json!({ "kind": f.kind, "message": f.message });
            if let Some(v) = f.violations {
                err["violations"] = serde_json::to_value(v.violations).unwrap_or_default();
            }
            eprintln!("{}", json!({ "error": err }));
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Greens { d, m, n, out } => cmd_greens(d, m, n, out.as_deref())?,
        Cmd::SampleSpherical { d, n, theta, gamma, count, seed, hole, boundary, keep, out } => {
            cmd_sample_spherical(d, n, theta, gamma, count, seed, hole.as_deref(), boundary.as_deref(), keep, &out)?
        }
        Cmd::SampleNls { d, n, theta, nu, p, gamma, steps, burnin, thin, seed, linf_cap, hole, boundary, out } => {
            let a = NlsArgs { d, n, theta, nu, p, gamma, steps, burnin, thin, seed, linf_cap };
            cmd_sample_nls(&a, hole.as_deref(), boundary.as_deref(), &out)?
        }
        Cmd::Landscape { theta, nu, p, d, a_grid, out } => cmd_landscape(theta, nu, p, d, a_grid.as_deref(), out.as_deref())?,
        Cmd::PhaseDiagram { p, d, theta_range, out } => cmd_phase_diagram(p, d, &theta_range, out.as_deref())?,
        Cmd::Verify { suite, config, out } => return cmd_verify(suite.as_deref(), &config, out.as_deref()),
    }
    Ok(())
}

fn prepare_out(out: &Path, echo: &str) -> Result<()> {
    fs::create_dir_all(out.join("curves")).with_context(|| format!("creating {}", out.display()))?;
    fs::create_dir_all(out.join("snapshots"))?;
    fs::write(out.join("config.echo"), echo)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn echo_args(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

fn shape(d: usize, n: usize) -> Result<TorusShape> {
    TorusShape::new(d, n).map_err(|e| anyhow!("{e}"))
}

fn cmd_greens(d: usize, m: f64, n: Option<usize>, out: Option<&Path>) -> Result<()> {
    let (value, error) = greens::zd_greens_diag_with_error(d, m)?;
    let report = json!({ "d": d, "m": m, "value": value, "quadrature_error": error });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = out {
        prepare_out(out, &echo_args(&[("d", d.to_string()), ("m", format!("{m:?}")), ("n", format!("{n:?}"))]))?;
        write_json(&out.join("report.json"), &report)?;
        if let Some(n) = n {
            let sh = shape(d, n)?;
            let mut curve = Curve::new("greens", &["distance", "value", "mass", "n", "d"]);
            let g: Box<dyn Fn(usize) -> f64> = if m == 0.0 {
                let k = greens::zero_avg_kernel(&lattice::Fourier::new(sh));
                Box::new(move |x| k[x])
            } else {
                let ctx = GreensContext::torus(sh, m)?;
                Box::new(move |x| ctx.value(x, 0))
            };
            for r in 0..=n / 2 {
                let mut o = vec![0i64; d];
                o[0] = r as i64;
                curve.rows.push(vec![r as f64, g(sh.translate(0, &o)), m, n as f64, d as f64]);
            }
            io::write_csv(&out.join("curves/greens.csv"), &curve)?;
        }
    }
    Ok(())
}

fn load_boundary(sh: TorusShape, hole: Option<&Path>, boundary: Option<&Path>) -> Result<Option<Boundary>> {
    let Some(hole) = hole else {
        if boundary.is_some() {
            bail!("--boundary requires --hole");
        }
        return Ok(None);
    };
    let text = fs::read_to_string(hole).with_context(|| format!("reading {}", hole.display()))?;
    let sites = io::parse_sites(&text, sh)?;
    let values: Vec<C64> = match boundary {
        Some(b) => {
            let f = io::read_field(b).with_context(|| format!("reading {}", b.display()))?;
            if f.shape() != sh {
                bail!("boundary snapshot shape does not match the lattice");
            }
            sites.iter().map(|&x| f.values()[x]).collect()
        }
        None => vec![C64::new(0.0, 0.0); sites.len()],
    };
    Ok(Some(Boundary::new(sh, &sites, values)?))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample_spherical(
    d: usize,
    n: usize,
    theta: f64,
    gamma: f64,
    count: usize,
    seed: u64,
    hole: Option<&Path>,
    boundary: Option<&Path>,
    keep: usize,
    out: &Path,
) -> Result<()> {
    let sh = shape(d, n)?;
    let mut params = SphericalParams::new(sh, theta).with_gamma(gamma);
    if let Some(b) = load_boundary(sh, hole, boundary)? {
        params = params.with_boundary(b);
    }
    let batch = spherical::sample_spherical_boundary(params, count, seed)?;
    prepare_out(
        out,
        &echo_args(&[
            ("command", "\"sample-spherical\"".into()),
            ("d", d.to_string()),
            ("n", n.to_string()),
            ("theta", format!("{theta:?}")),
            ("gamma", format!("{gamma:?}")),
            ("count", count.to_string()),
            ("seed", seed.to_string()),
            ("hole", format!("{:?}", hole.map(|p| p.display().to_string()))),
            ("boundary", format!("{:?}", boundary.map(|p| p.display().to_string()))),
        ]),
    )?;
    let masses: Vec<f64> = batch.fields.iter().map(|f| f.mass() / sh.size() as f64).collect();
    let linf: Vec<f64> = batch.fields.iter().map(|f| lattice::linf(f.values()) / (sh.size() as f64).sqrt()).collect();
    let mut curve = Curve::new("samples", &["index", "mass", "linf"]);
    curve.rows = masses.iter().zip(&linf).enumerate().map(|(i, (&m, &l))| vec![i as f64, m, l]).collect();
    io::write_csv(&out.join("curves/samples.csv"), &curve)?;
    for (i, f) in batch.fields.iter().take(keep).enumerate() {
        io::write_field(&out.join(format!("snapshots/sample_{i:05}.nlsf")), f)?;
    }
    let report = json!({
        "command": "sample-spherical",
        "parameters": { "d": d, "n": n, "theta": theta, "gamma": gamma, "count": count },
        "seeds": [seed],
        "strategy": batch.strategy,
        "stats": batch.stats,
        "acceptance_rate": batch.stats.acceptance_rate,
        "mass": stats::batch_means(&masses),
        "linf": stats::batch_means(&linf),
    });
    write_json(&out.join("report.json"), &report)?;
    Ok(())
}

struct NlsArgs {
    d: usize,
    n: usize,
    theta: f64,
    nu: f64,
    p: f64,
    gamma: f64,
    steps: usize,
    burnin: usize,
    thin: Option<usize>,
    seed: u64,
    linf_cap: Option<f64>,
}

fn cmd_sample_nls(a: &NlsArgs, hole: Option<&Path>, boundary: Option<&Path>, out: &Path) -> Result<()> {
    let sh = shape(a.d, a.n)?;
    let mut params = NlsParams::new(sh, a.theta, a.nu, a.p).with_gamma(a.gamma);
    if let Some(c) = a.linf_cap {
        params = params.with_linf_cap(c);
    }
    let has_boundary = if let Some(b) = load_boundary(sh, hole, boundary)? {
        params = params.with_boundary(b);
        true
    } else {
        false
    };
    let mut sched = Schedule::new(a.steps, a.burnin);
    sched.thin = a.thin;
    if !has_boundary && a.d >= 3 {
        sched.mixture.pcn = 1.0;
    }
    let rec = nls::run_mcmc(&params, &sched, a.seed)?;
    prepare_out(
        out,
        &echo_args(&[
            ("command", "\"sample-nls\"".into()),
            ("d", a.d.to_string()),
            ("n", a.n.to_string()),
            ("theta", format!("{:?}", a.theta)),
            ("nu", format!("{:?}", a.nu)),
            ("p", format!("{:?}", a.p)),
            ("gamma", format!("{:?}", a.gamma)),
            ("steps", a.steps.to_string()),
            ("burnin", a.burnin.to_string()),
            ("thin", format!("{:?}", a.thin)),
            ("seed", a.seed.to_string()),
            ("linf_cap", format!("{:?}", a.linf_cap)),
            ("nu_n", format!("{:?}", params.nu_n())),
        ]),
    )?;
    let t = &rec.traces;
    let mut curve = Curve::new("traces", &["sweep", "mass", "linf", "tilt", "separating_fraction"]);
    curve.rows = (0..t.mass.len()).map(|i| vec![i as f64, t.mass[i], t.linf[i], t.tilt[i], t.separating_fraction[i]]).collect();
    io::write_csv(&out.join("curves/traces.csv"), &curve)?;
    for (i, f) in rec.snapshots.iter().enumerate() {
        io::write_field(&out.join(format!("snapshots/state_{i:05}.nlsf")), f)?;
    }
    let report = json!({
        "command": "sample-nls",
        "parameters": { "d": a.d, "n": a.n, "theta": a.theta, "nu": a.nu, "p": a.p, "gamma": a.gamma, "nu_n": params.nu_n() },
        "chain": rec,
        "summary": rec.summary(),
    });
    write_json(&out.join("report.json"), &report)?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        return config::parse_range(s).map(config::range_points).ok_or_else(|| anyhow!("invalid range {s:?}, expected lo:hi:k"));
    }
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("invalid grid value {t:?}"))).collect()
}

fn cmd_landscape(theta: f64, nu: f64, p: f64, d: usize, a_grid: Option<&str>, out: Option<&Path>) -> Result<()> {
    let grid = match a_grid {
        Some(s) => parse_grid(s)?,
        None => config::range_points((0.0, 0.99, 100)),
    };
    if grid.iter().any(|&a| !(0.0..1.0).contains(&a)) {
        bail!("a-grid values must lie in [0, 1)");
    }
    let land = Landscape::new(p, d)?;
    let table = land.table(theta, nu, &grid)?;
    match out {
        Some(out) => {
            prepare_out(
                out,
                &echo_args(&[
                    ("command", "\"landscape\"".into()),
                    ("theta", format!("{theta:?}")),
                    ("nu", format!("{nu:?}")),
                    ("p", format!("{p:?}")),
                    ("d", d.to_string()),
                    ("a_grid", format!("{grid:?}")),
                ]),
            )?;
            write_json(&out.join("report.json"), &table)?;
            let mut curve = Curve::new("landscape", &["a", "i", "w", "f"]);
            curve.rows = table.rows.iter().map(|r| vec![r.a, r.i, r.w, r.f]).collect();
            io::write_csv(&out.join("curves/landscape.csv"), &curve)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&table)?),
    }
    Ok(())
}

fn region(phase: Phase, theta: f64, cd: f64) -> &'static str {
    match phase {
        Phase::Solitonic => "solitonic_massive",
        _ if theta < cd => "dispersive_massive",
        _ => "dispersive_massless",
    }
}

fn cmd_phase_diagram(p: f64, d: usize, theta_range: &str, out: Option<&Path>) -> Result<()> {
    let range = config::parse_range(theta_range).ok_or_else(|| anyhow!("invalid --theta-range {theta_range:?}, expected lo:hi:k"))?;
    if range.0 <= 0.0 || range.1 <= range.0 {
        bail!("--theta-range needs 0 < lo < hi");
    }
    let land = Landscape::new(p, d)?;
    let cd = land.c_d();
    let mut curve = Curve::new("phase_diagram", &["theta", "nu_c", "below", "above"]);
    let mut csv = String::from("theta,nu_c,below,above\n");
    for th in config::range_points(range) {
        let nc = land.critical_nu(th, 1e-9)?;
        let below = region(Phase::Dispersive, th, cd);
        let above = region(Phase::Solitonic, th, cd);
        csv.push_str(&format!("{th:e},{nc:e},{below},{above}\n"));
        curve.rows.push(vec![th, nc]);
    }
    match out {
        Some(out) => {
            prepare_out(
                out,
                &echo_args(&[
                    ("command", "\"phase-diagram\"".into()),
                    ("p", format!("{p:?}")),
                    ("d", d.to_string()),
                    ("theta_range", format!("{theta_range:?}")),
                ]),
            )?;
            fs::write(out.join("curves/phase_diagram.csv"), &csv)?;
            let report = json!({
                "p": p,
                "d": d,
                "c_d": cd,
                "r_p": land.r_p(),
                "theta": curve.rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
                "nu_c": curve.rows.iter().map(|r| r[1]).collect::<Vec<_>>(),
                "strictly_decreasing": curve.rows.windows(2).all(|w| w[1][1] < w[0][1]),
            });
            write_json(&out.join("report.json"), &report)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn suite_reports(cfg: &RunConfig, suite: Suite) -> Result<Vec<ExperimentReport>> {
    use experiments::*;
    let cd = greens::critical_constant(cfg.d)?;
    let tol = cfg.tolerances;
    let all = suite == Suite::All;
    let mut reps = Vec::new();
    if suite == Suite::Subcritical || all {
        let theta = if all { 0.6 * cd } else { cfg.theta };
        reps.push(verify_subcritical_massive(&SubcriticalConfig {
            d: cfg.d,
            n: cfg.n,
            theta,
            nu: cfg.nu,
            p: cfg.p,
            samples: cfg.samples,
            sweeps: cfg.steps,
            burnin: cfg.burnin,
            rmax: cfg.rmax,
            seed: cfg.seed,
            tol,
        })?);
    }
    if suite == Suite::Massless || all {
        let theta = if all { 2.0 * cd } else { cfg.theta };
        reps.push(verify_massless_shift(&MasslessConfig {
            d: cfg.d,
            ns: cfg.ns.clone(),
            theta,
            nu: cfg.nu,
            p: cfg.p,
            samples: cfg.samples,
            sweeps: cfg.steps,
            burnin: cfg.burnin,
            rmax: cfg.rmax,
            seed: cfg.seed,
            tol,
        })?);
    }
    if suite == Suite::Supercritical || all {
        let (theta, nu) = if all {
            let land = Landscape::new(cfg.p, cfg.d)?;
            let th = 0.6 * cd;
            (th, 1.05 * land.critical_nu(th, 1e-9)?)
        } else {
            (cfg.theta, cfg.nu)
        };
        reps.push(verify_supercritical(&SupercriticalConfig {
            d: cfg.d,
            n: cfg.n,
            theta,
            nu,
            p: cfg.p,
            sweeps: cfg.steps,
            burnin: cfg.burnin,
            expand_c: cfg.expand_c,
            far: cfg.far,
            seed: cfg.seed,
            tol,
        })?);
    }
    if suite == Suite::Double || all {
        let nu = if all {
            let land = Landscape::new(cfg.p, cfg.d)?;
            0.5 * (land.r_p() + land.critical_nu(cd, 1e-9)?)
        } else {
            cfg.nu
        };
        reps.push(verify_double_transition(&DoubleTransitionConfig {
            d: cfg.d,
            p: cfg.p,
            nu,
            thetas: config::range_points(cfg.theta_range),
            representative: cfg.representative.clone(),
            n: cfg.n,
            sweeps: cfg.steps,
            burnin: cfg.burnin,
            rmax: cfg.rmax,
            seed: cfg.seed,
            tol,
        })?);
    }
    if suite == Suite::Tempering || all {
        let theta = if all { 0.5 * cd } else { cfg.theta };
        reps.push(verify_tempering(&TemperingConfig {
            d: cfg.d,
            p: cfg.p,
            theta,
            nu: cfg.nu,
            ns: cfg.ns.clone(),
            sweeps: cfg.steps,
            burnin: cfg.burnin,
            eps: cfg.eps,
            seed: cfg.seed,
            tol,
        })?);
    }
    if suite == Suite::Tails || all {
        let theta = if all { 0.5 * cd } else { cfg.theta };
        reps.push(verify_tail_envelope(&TailConfig {
            d: cfg.d,
            n: cfg.n,
            theta,
            samples: cfg.samples,
            hole_radius: cfg.hole_radius,
            boundary_value: cfg.boundary_value,
            seed: cfg.seed,
        })?);
    }
    Ok(reps)
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    suite: &'a str,
    status: Status,
    reports: &'a [ExperimentReport],
}

fn cmd_verify(suite: Option<&str>, config_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))
        .map_err(Failure::from)?;
    let mut cfg = config::parse_config(&text).map_err(anyhow::Error::from)?;
    if let Some(s) = suite {
        cfg.suite = Suite::parse(s).ok_or_else(|| ConfigError {
            violations: vec![config::Violation {
                key: "suite".into(),
                message: format!("expected one of {}", Suite::NAMES.join(", ")),
            }],
        })
        .map_err(anyhow::Error::from)?;
    }
    let out: PathBuf = match (out, &cfg.out) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => return Err(anyhow!("no output directory: pass --out or set `out` in the config").into()),
    };
    let reports = suite_reports(&cfg, cfg.suite)?;
    prepare_out(&out, &config::echo(&cfg))?;
    for r in &reports {
        for c in &r.curves {
            io::write_csv(&out.join(format!("curves/{}_{}.csv", r.id, c.name)), c).map_err(anyhow::Error::from)?;
        }
        eprintln!("{}: {:?}", r.id, r.status);
    }
    let status = if reports.iter().all(|r| r.status == Status::Pass) {
        Status::Pass
    } else if reports.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else {
        Status::Inconclusive
    };
    write_json(&out.join("report.json"), &VerifyOutput { suite: cfg.suite.name(), status, reports: &reports })?;
    if status == Status::Pass {
        return Ok(());
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failed().into_iter().map(move |c| format!("{}.{}", r.id, c.name)))
        .collect();
    Err(Failure {
        kind: if status == Status::Fail { "verification_failed" } else { "verification_inconclusive" },
        message: format!("failed checks: {}", failed.join(", ")),
        violations: None,
        code: 3,
    })
}

