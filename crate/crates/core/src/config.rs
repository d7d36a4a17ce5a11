//! Run configuration: a flat TOML document with an optional `[tolerances]` table.

use std::fmt;

use serde::Serialize;
use toml::{Table, Value};

use crate::experiments::Tolerances;
use crate::lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Subcritical,
    Massless,
    Supercritical,
    Double,
    Tempering,
    Tails,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = ["subcritical", "massless", "supercritical", "double", "tempering", "tails", "all"];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "subcritical" => Self::Subcritical,
            "massless" => Self::Massless,
            "supercritical" => Self::Supercritical,
            "double" => Self::Double,
            "tempering" => Self::Tempering,
            "tails" => Self::Tails,
            "all" => Self::All,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub suite: Suite,
    pub d: usize,
    pub n: usize,
    pub theta: f64,
    pub nu: f64,
    pub p: f64,
    pub gamma: f64,
    pub eps: Option<f64>,
    pub linf_cap: Option<f64>,
    pub seed: u64,
    pub steps: usize,
    pub burnin: usize,
    pub thin: Option<usize>,
    pub samples: usize,
    pub rmax: usize,
    /// Side lengths for size sweeps; defaults to `[n]`.
    pub ns: Vec<usize>,
    /// θ sweep `lo:hi:k` for the double-transition suite.
    pub theta_range: (f64, f64, usize),
    /// θ values classified by MCMC in the double-transition suite; empty picks one per region.
    pub representative: Vec<f64>,
    pub expand_c: f64,
    pub far: usize,
    pub hole_radius: usize,
    pub boundary_value: f64,
    pub out: Option<String>,
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn size(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn nu_n(&self) -> f64 {
        lattice::nu_n(self.nu, self.p, self.size())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{}: {}", v.key, v.message)).collect();
        write!(f, "invalid config: {}", parts.join("; "))
    }
}

impl std::error::Error for ConfigError {}

const TOP_KEYS: [&str; 25] = [
    "suite",
    "d",
    "n",
    "theta",
    "nu",
    "p",
    "gamma",
    "eps",
    "linf_cap",
    "seed",
    "steps",
    "burnin",
    "thin",
    "samples",
    "rmax",
    "ns",
    "theta_range",
    "representative",
    "expand_c",
    "far",
    "hole_radius",
    "boundary_value",
    "out",
    "tolerances",
    "derived",
];
const TOL_KEYS: [&str; 5] = ["se", "concentration", "slope", "acceptance", "shape"];
const DERIVED_KEYS: [&str; 2] = ["size", "nu_n"];

struct Reader<'a> {
    table: &'a Table,
    prefix: &'a str,
    errs: Vec<Violation>,
}

impl<'a> Reader<'a> {
    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn fail(&mut self, key: &str, message: impl Into<String>) {
        let key = self.path(key);
        self.errs.push(Violation { key, message: message.into() });
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        match self.table.get(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.fail(key, "expected a number");
                None
            }
        }
    }

    fn uint(&mut self, key: &str) -> Option<usize> {
        match self.table.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.fail(key, "expected a non-negative integer");
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.fail(key, "expected a string");
                None
            }
        }
    }

    fn list<T>(&mut self, key: &str, item: impl Fn(&Value) -> Option<T>) -> Option<Vec<T>> {
        match self.table.get(key)? {
            Value::Array(a) => {
                let v: Option<Vec<T>> = a.iter().map(item).collect();
                if v.is_none() {
                    self.fail(key, "array has an element of the wrong type");
                }
                v
            }
            _ => {
                self.fail(key, "expected an array");
                None
            }
        }
    }

    fn required<T>(&mut self, key: &str, v: Option<T>) -> Option<T> {
        if v.is_none() && !self.table.contains_key(key) {
            self.fail(key, "missing required key");
        }
        v
    }

    fn check(&mut self, key: &str, ok: bool, message: &str) {
        if !ok && self.table.contains_key(key) {
            self.fail(key, message);
        }
    }

    fn unknown(&mut self, allowed: &[&str]) {
        let extra: Vec<String> = self.table.keys().filter(|k| !allowed.contains(&k.as_str())).cloned().collect();
        for k in extra {
            self.fail(&k, "unknown key");
        }
    }
}

/// `lo:hi:k` with k ≥ 2 points.
pub fn parse_range(s: &str) -> Option<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let lo: f64 = parts[0].trim().parse().ok()?;
    let hi: f64 = parts[1].trim().parse().ok()?;
    let k: usize = parts[2].trim().parse().ok()?;
    (lo.is_finite() && hi.is_finite() && k >= 2).then_some((lo, hi, k))
}

pub fn range_points((lo, hi, k): (f64, f64, usize)) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        violations: vec![Violation { key: String::new(), message: e.message().to_string() }],
    })?;
    let mut r = Reader { table: &table, prefix: "", errs: Vec::new() };
    r.unknown(&TOP_KEYS);

    let suite = match r.string("suite") {
        Some(s) => Suite::parse(&s).unwrap_or_else(|| {
            r.fail("suite", format!("expected one of {}", Suite::NAMES.join(", ")));
            Suite::All
        }),
        None => Suite::All,
    };
    let d = r.uint("d");
    let d = r.required("d", d).unwrap_or(3);
    let n = r.uint("n");
    let n = r.required("n", n).unwrap_or(8);
    let theta = r.float("theta");
    let theta = r.required("theta", theta).unwrap_or(1.0);
    let seed = r.uint("seed");
    let seed = r.required("seed", seed).unwrap_or(0) as u64;
    let nu = r.float("nu").unwrap_or(0.0);
    let p = r.float("p").unwrap_or(6.0);
    let gamma = r.float("gamma").unwrap_or(1.0);
    let eps = r.float("eps");
    let linf_cap = r.float("linf_cap");
    let steps = r.uint("steps").unwrap_or(20_000);
    let burnin = r.uint("burnin").unwrap_or(2_000);
    let thin = r.uint("thin");
    let samples = r.uint("samples").unwrap_or(4_000);
    let rmax = r.uint("rmax").unwrap_or(4);
    let ns = r.list("ns", |v| v.as_integer().filter(|&i| i >= 0).map(|i| i as usize)).unwrap_or_else(|| vec![n]);
    let theta_range = match r.string("theta_range") {
        Some(s) => parse_range(&s).unwrap_or_else(|| {
            r.fail("theta_range", "expected lo:hi:k with k >= 2");
            (0.05, 2.0, 30)
        }),
        None => (0.05, 2.0, 30),
    };
    let representative = r.list("representative", |v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64))).unwrap_or_default();
    let expand_c = r.float("expand_c").unwrap_or(0.02);
    let far = r.uint("far").unwrap_or(3);
    let hole_radius = r.uint("hole_radius").unwrap_or(1);
    let boundary_value = r.float("boundary_value").unwrap_or(1.0);
    let out = r.string("out");

    r.check("d", (1..=8).contains(&d), "must lie in [1, 8]");
    r.check("n", n >= 2, "must be at least 2");
    r.check("theta", theta.is_finite() && theta > 0.0, "must be a positive finite number");
    r.check("nu", nu.is_finite() && nu >= 0.0, "must be finite and >= 0");
    r.check("p", p.is_finite() && p > 2.0, "must satisfy p > 2");
    r.check("gamma", gamma > 0.0 && gamma <= 1.0, "must lie in (0, 1]");
    if let Some(e) = eps {
        r.check("eps", e > 0.0 && e < 1.0, "must lie in (0, 1)");
    }
    if let Some(c) = linf_cap {
        r.check("linf_cap", c.is_finite() && c > 0.0, "must be positive");
    }
    r.check("steps", steps >= 1, "must be at least 1");
    r.check("thin", thin.is_none_or(|t| t >= 1), "must be at least 1");
    r.check("samples", samples >= 1, "must be at least 1");
    r.check("rmax", rmax >= 1 && rmax <= n / 2, "must lie in [1, n/2]");
    r.check("ns", !ns.is_empty() && ns.iter().all(|&m| m >= 2), "must be a nonempty list of sides >= 2");
    r.check("theta_range", theta_range.0 > 0.0 && theta_range.1 > theta_range.0, "needs 0 < lo < hi");
    r.check("representative", representative.iter().all(|&t| t.is_finite() && t > 0.0), "values must be positive");
    r.check("expand_c", expand_c.is_finite() && expand_c > 0.0, "must be positive");
    r.check("boundary_value", boundary_value.is_finite(), "must be finite");
    let size = (n as f64).powi(d as i32);
    r.check("n", size <= 1e8, "lattice too large");

    let mut tolerances = Tolerances::default();
    let mut errs = std::mem::take(&mut r.errs);
    match table.get("tolerances") {
        None => {}
        Some(Value::Table(t)) => {
            let mut tr = Reader { table: t, prefix: "tolerances", errs: Vec::new() };
            tr.unknown(&TOL_KEYS);
            for (k, slot) in TOL_KEYS.iter().zip([
                &mut tolerances.se,
                &mut tolerances.concentration,
                &mut tolerances.slope,
                &mut tolerances.acceptance,
                &mut tolerances.shape,
            ]) {
                if let Some(x) = tr.float(k) {
                    *slot = x;
                    tr.check(k, x.is_finite() && x > 0.0, "must be positive");
                }
            }
            errs.append(&mut tr.errs);
        }
        Some(_) => errs.push(Violation { key: "tolerances".into(), message: "expected a table".into() }),
    }

    let cfg = RunConfig {
        suite,
        d,
        n,
        theta,
        nu,
        p,
        gamma,
        eps,
        linf_cap,
        seed,
        steps,
        burnin,
        thin,
        samples,
        rmax,
        ns,
        theta_range,
        representative,
        expand_c,
        far,
        hole_radius,
        boundary_value,
        out,
        tolerances,
    };

    match table.get("derived") {
        None => {}
        Some(Value::Table(t)) => {
            let mut dr = Reader { table: t, prefix: "derived", errs: Vec::new() };
            dr.unknown(&DERIVED_KEYS);
            if errs.is_empty() {
                if let Some(s) = dr.uint("size") {
                    dr.check("size", s == cfg.size(), "does not match n^d");
                }
                if let Some(x) = dr.float("nu_n") {
                    dr.check("nu_n", x == cfg.nu_n(), "does not match (2/p)(nu/N)^((p-2)/2)");
                }
            }
            errs.append(&mut dr.errs);
        }
        Some(_) => errs.push(Violation { key: "derived".into(), message: "expected a table".into() }),
    }

    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { violations: errs })
    }
}

fn float_lit(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn string_lit(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

/// Canonical TOML of the validated config with derived quantities appended.
pub fn echo(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("suite", string_lit(cfg.suite.name()));
    kv("d", cfg.d.to_string());
    kv("n", cfg.n.to_string());
    kv("theta", float_lit(cfg.theta));
    kv("nu", float_lit(cfg.nu));
    kv("p", float_lit(cfg.p));
    kv("gamma", float_lit(cfg.gamma));
    if let Some(e) = cfg.eps {
        kv("eps", float_lit(e));
    }
    if let Some(c) = cfg.linf_cap {
        kv("linf_cap", float_lit(c));
    }
    kv("seed", cfg.seed.to_string());
    kv("steps", cfg.steps.to_string());
    kv("burnin", cfg.burnin.to_string());
    if let Some(t) = cfg.thin {
        kv("thin", t.to_string());
    }
    kv("samples", cfg.samples.to_string());
    kv("rmax", cfg.rmax.to_string());
    kv("ns", format!("[{}]", cfg.ns.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")));
    let (lo, hi, k) = cfg.theta_range;
    kv("theta_range", string_lit(&format!("{lo:?}:{hi:?}:{k}")));
    kv("representative", format!("[{}]", cfg.representative.iter().map(|&v| float_lit(v)).collect::<Vec<_>>().join(", ")));
    kv("expand_c", float_lit(cfg.expand_c));
    kv("far", cfg.far.to_string());
    kv("hole_radius", cfg.hole_radius.to_string());
    kv("boundary_value", float_lit(cfg.boundary_value));
    if let Some(o) = &cfg.out {
        kv("out", string_lit(o));
    }
    let t = cfg.tolerances;
    s.push_str("\n[tolerances]\n");
    for (k, v) in TOL_KEYS.iter().zip([t.se, t.concentration, t.slope, t.acceptance, t.shape]) {
        s.push_str(&format!("{k} = {}\n", float_lit(v)));
    }
    s.push_str("\n[derived]\n");
    s.push_str(&format!("size = {}\n", cfg.size()));
    s.push_str(&format!("nu_n = {}\n", float_lit(cfg.nu_n())));
    s
}
