//! Flat `section.key = value` experiment configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::{check_alpha, Grid, ALPHA_MAX};
use crate::harness::{SweepConfig, WindowSpec};
use crate::operator::quadrature::DEFAULT_ORDER;
use crate::operator::Backend;
use crate::profiles::{evolve_reference, ReferenceTrajectory};
use crate::selection::{ModelKind, SelectionModel};
use crate::solver::{self, InitialProfile, Scheme, DEFAULT_DT_FACTOR};

pub const DEFAULT_ALPHA: f64 = 0.4;
pub const DEFAULT_REFERENCE_DT: f64 = 1e-3;
pub const DEFAULT_OUT_DIR: &str = "out";
/// Smallest automatically chosen grid size.
pub const MIN_AUTO_N: usize = 256;

const KEYS: &[&str] = &[
    "selection.kind",
    "selection.coeffs",
    "selection.z0",
    "z_star0",
    "epsilon",
    "grid.zmin",
    "grid.zmax",
    "grid.n",
    "time.t_end",
    "time.dt_factor",
    "time.snapshot_every",
    "time.scheme",
    "time.reference_dt",
    "alpha",
    "operator.backend",
    "operator.quad_order",
    "init.q0",
    "init.p0",
    "init.lambda0",
    "init.profile",
    "harness.floor",
    "harness.half_width",
    "out_dir",
];

/// Resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: SelectionModel,
    pub z_star0: f64,
    /// Strictly decreasing; more than one entry means sweep mode.
    pub epsilon: Vec<f64>,
    pub z_min: f64,
    pub z_max: f64,
    /// `None` picks the smallest power of two with `h <= eps/8` per run.
    pub n: Option<usize>,
    pub t_end: f64,
    pub dt_factor: f64,
    pub snapshot_every: f64,
    pub scheme: Scheme,
    pub reference_dt: f64,
    pub alpha: f64,
    pub backend: Backend,
    pub quad_order: usize,
    pub q0: f64,
    pub p0: f64,
    pub lambda0: f64,
    pub init: InitialProfile,
    pub window: WindowSpec,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn is_sweep(&self) -> bool {
        self.epsilon.len() > 1
    }

    pub fn reference(&self) -> Result<ReferenceTrajectory> {
        evolve_reference(
            &self.model,
            self.z_star0,
            self.q0,
            self.p0,
            self.lambda0,
            self.t_end,
            self.reference_dt.min(self.t_end),
        )
    }

    /// Grid used for a run at `eps`.
    pub fn grid_for(&self, eps: f64) -> Result<Grid> {
        match self.n {
            Some(n) => Grid::new(self.z_min, self.z_max, n),
            None => {
                let mut n = MIN_AUTO_N;
                while (self.z_max - self.z_min) / (n - 1) as f64 > eps / 8.0 {
                    n *= 2;
                }
                Grid::new(self.z_min, self.z_max, n)
            }
        }
    }

    /// Grid for diagnostics that do not depend on `eps`.
    pub fn base_grid(&self) -> Result<Grid> {
        let eps = self.epsilon.iter().copied().fold(f64::INFINITY, f64::min);
        self.grid_for(eps)
    }

    pub fn run_config(&self, eps: f64) -> solver::RunConfig {
        solver::RunConfig {
            eps,
            t_end: self.t_end,
            dt_factor: self.dt_factor,
            snapshot_every: self.snapshot_every,
            backend: self.backend,
            scheme: self.scheme,
            init: self.init,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            model: self.model.clone(),
            z_star0: self.z_star0,
            q0: self.q0,
            p0: self.p0,
            lambda0: self.lambda0,
            z_min: self.z_min,
            z_max: self.z_max,
            n_min: self.n.unwrap_or(MIN_AUTO_N),
            t_end: self.t_end,
            dt_factor: self.dt_factor,
            snapshot_every: self.snapshot_every,
            backend: self.backend,
            scheme: self.scheme,
            init: self.init,
            alpha: self.alpha,
            window: self.window,
            reference_dt: self.reference_dt.min(self.t_end),
        }
    }

    /// Canonical `key = value` echo, one line per key, fixed order.
    pub fn echo(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("selection.kind", self.model.kind().to_string());
        put("selection.coeffs", list(self.model.coefficients()));
        put("selection.z0", num(self.model.z0()));
        put("z_star0", num(self.z_star0));
        put("epsilon", list(&self.epsilon));
        put("grid.zmin", num(self.z_min));
        put("grid.zmax", num(self.z_max));
        put("grid.n", self.n.map_or("auto".into(), |n| n.to_string()));
        put("time.t_end", num(self.t_end));
        put("time.dt_factor", num(self.dt_factor));
        put("time.snapshot_every", num(self.snapshot_every));
        put("time.scheme", self.scheme.to_string());
        put("time.reference_dt", num(self.reference_dt));
        put("alpha", num(self.alpha));
        put("operator.backend", self.backend.to_string());
        put("operator.quad_order", self.quad_order.to_string());
        put("init.q0", num(self.q0));
        put("init.p0", num(self.p0));
        put("init.lambda0", num(self.lambda0));
        put("init.profile", self.init.to_string());
        put("harness.floor", num(self.window.floor));
        put(
            "harness.half_width",
            self.window.half_width.map_or("none".into(), num),
        );
        put("out_dir", self.out_dir.display().to_string());
        s
    }
}

/// Shortest round-tripping form, in exponent notation for extreme magnitudes.
fn num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e6) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn number(e: &Entry, key: &str) -> Result<f64> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| parse_err(e.line, format!("{key}: expected a number, got `{}`", e.value)))?;
    if !v.is_finite() {
        return Err(parse_err(e.line, format!("{key}: must be finite")));
    }
    Ok(v)
}

fn number_list(e: &Entry, key: &str) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(e.line, format!("{key}: expected finite numbers, got `{part}`")))
        })
        .collect()
}

fn integer(e: &Entry, key: &str) -> Result<usize> {
    e.value
        .parse()
        .map_err(|_| parse_err(e.line, format!("{key}: expected a non-negative integer, got `{}`", e.value)))
}

/// Parse a configuration document. Unknown or repeated keys, malformed
/// values and violated invariants are reported with their line number.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: HashMap<&'static str, Entry> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        let value = value.trim().trim_matches('"').to_string();
        let known = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| parse_err(line, format!("unknown key `{key}`")))?;
        if let Some(prev) = entries.get(known) {
            return Err(parse_err(line, format!("`{key}` already set on line {}", prev.line)));
        }
        entries.insert(known, Entry { line, value });
    }

    let required = |key: &str| -> Result<&Entry> {
        entries
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    };
    let opt_number = |key: &str, default: f64| -> Result<f64> {
        entries.get(key).map_or(Ok(default), |e| number(e, key))
    };

    let kind_entry = required("selection.kind")?;
    let kind = ModelKind::parse(&kind_entry.value).ok_or_else(|| {
        parse_err(
            kind_entry.line,
            format!(
                "selection.kind: expected quadratic, polynomial or double_well, got `{}`",
                kind_entry.value
            ),
        )
    })?;
    let coeffs_entry = required("selection.coeffs")?;
    let coeffs = number_list(coeffs_entry, "selection.coeffs")?;
    let z0 = opt_number("selection.z0", 0.0)?;
    let model = SelectionModel::new(kind, coeffs, z0).map_err(|e| parse_err(coeffs_entry.line, e.to_string()))?;

    let z_star0 = number(required("z_star0")?, "z_star0")?;

    let eps_entry = required("epsilon")?;
    let epsilon = number_list(eps_entry, "epsilon")?;
    if epsilon.iter().any(|&e| e <= 0.0) {
        return Err(parse_err(eps_entry.line, "epsilon: entries must be positive"));
    }
    if epsilon.windows(2).any(|w| w[1] >= w[0]) {
        return Err(parse_err(eps_entry.line, "epsilon: a list must be strictly decreasing"));
    }

    let zmin_entry = required("grid.zmin")?;
    let z_min = number(zmin_entry, "grid.zmin")?;
    let zmax_entry = required("grid.zmax")?;
    let z_max = number(zmax_entry, "grid.zmax")?;
    if z_max <= z_min {
        return Err(parse_err(zmax_entry.line, "grid.zmax must exceed grid.zmin"));
    }
    if !(z_min < z_star0 && z_star0 < z_max) {
        return Err(parse_err(zmin_entry.line, "z_star0 must lie inside the grid"));
    }
    let n = match entries.get("grid.n") {
        Some(e) => {
            let n = integer(e, "grid.n")?;
            Grid::new(z_min, z_max, n).map_err(|err| parse_err(e.line, err.to_string()))?;
            Some(n)
        }
        None => None,
    };

    let t_entry = required("time.t_end")?;
    let t_end = number(t_entry, "time.t_end")?;
    if t_end <= 0.0 {
        return Err(parse_err(t_entry.line, "time.t_end must be positive"));
    }
    let dt_factor = opt_number("time.dt_factor", DEFAULT_DT_FACTOR)?;
    if dt_factor <= 0.0 {
        return Err(parse_err(entries["time.dt_factor"].line, "time.dt_factor must be positive"));
    }
    let snapshot_every = opt_number("time.snapshot_every", t_end)?;
    if snapshot_every <= 0.0 {
        return Err(parse_err(
            entries["time.snapshot_every"].line,
            "time.snapshot_every must be positive",
        ));
    }
    let scheme = match entries.get("time.scheme") {
        Some(e) => Scheme::parse(&e.value)
            .ok_or_else(|| parse_err(e.line, format!("time.scheme: expected etd1 or etdrk4, got `{}`", e.value)))?,
        None => Scheme::default(),
    };
    let reference_dt = opt_number("time.reference_dt", DEFAULT_REFERENCE_DT)?;
    if reference_dt <= 0.0 {
        return Err(parse_err(entries["time.reference_dt"].line, "time.reference_dt must be positive"));
    }

    let alpha = opt_number("alpha", DEFAULT_ALPHA)?;
    if check_alpha(alpha).is_err() {
        return Err(parse_err(
            entries["alpha"].line,
            format!("alpha = {alpha} outside the admissible range (0, {ALPHA_MAX:.6})"),
        ));
    }

    let backend = match entries.get("operator.backend") {
        Some(e) => Backend::parse(&e.value)
            .ok_or_else(|| parse_err(e.line, format!("operator.backend: expected direct or fft, got `{}`", e.value)))?,
        None => Backend::default(),
    };
    let quad_order = match entries.get("operator.quad_order") {
        Some(e) => {
            let q = integer(e, "operator.quad_order")?;
            if q == 0 {
                return Err(parse_err(e.line, "operator.quad_order must be positive"));
            }
            q
        }
        None => DEFAULT_ORDER,
    };

    let q0 = opt_number("init.q0", 0.0)?;
    let p0 = opt_number("init.p0", 0.0)?;
    let lambda0 = opt_number("init.lambda0", 0.0)?;
    let init = match entries.get("init.profile") {
        Some(e) => InitialProfile::parse(&e.value).ok_or_else(|| {
            parse_err(
                e.line,
                format!("init.profile: expected well_prepared or gaussian, got `{}`", e.value),
            )
        })?,
        None => InitialProfile::default(),
    };

    let mut window = WindowSpec::default();
    if let Some(e) = entries.get("harness.floor") {
        let floor = number(e, "harness.floor")?;
        if !(floor > 0.0 && floor < 1.0) {
            return Err(parse_err(e.line, "harness.floor must lie in (0, 1)"));
        }
        window.floor = floor;
    }
    if let Some(e) = entries.get("harness.half_width") {
        let w = number(e, "harness.half_width")?;
        if w <= 0.0 {
            return Err(parse_err(e.line, "harness.half_width must be positive"));
        }
        window.half_width = Some(w);
    }

    let out_dir = entries
        .get("out_dir")
        .map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), |e| PathBuf::from(&e.value));

    Ok(RunConfig {
        model,
        z_star0,
        epsilon,
        z_min,
        z_max,
        n,
        t_end,
        dt_factor,
        snapshot_every,
        scheme,
        reference_dt,
        alpha,
        backend,
        quad_order,
        q0,
        p0,
        lambda0,
        init,
        window,
        out_dir,
    })
}
