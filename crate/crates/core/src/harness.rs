//! Hopf–Cole decomposition of simulated densities, the correctors `W` and
//! `kappa`, the weighted F-norm and the convergence sweep over `eps`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{derivative, phi, Field, Grid};
use crate::operator::Backend;
use crate::profiles::{evolve_reference, v_star_field, ReferenceTrajectory, SERIES_TOL};
use crate::selection::SelectionModel;
use crate::solver::{run, InitialProfile, RunConfig, Scheme, SimState};

/// Tolerance on `|W(z*)|` and `|W'(z*)|` before the F-norm refuses `W`.
pub const PINNING_TOLERANCE: f64 = 1e-6;
/// Points on each side of `z*` required inside an analysis window.
pub const MIN_SIDE_POINTS: usize = 10;
/// Points at each window end left out of every supremum.
pub const EDGE_POINTS: usize = 3;

/// Which part of the grid the decomposition is restricted to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    /// Keep points where `density > floor * max density`.
    pub floor: f64,
    /// Optionally also keep only `|z - z*| <= half_width`.
    pub half_width: Option<f64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            floor: 1e-12,
            half_width: None,
        }
    }
}

/// `U_eps = p_eps + q_eps (z - z*) + V_eps` on an analysis window.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub t: f64,
    pub eps: f64,
    pub z_star: f64,
    pub lambda_ref: f64,
    pub p_eps: f64,
    pub q_eps: f64,
    pub u_eps: Field,
    pub v_eps: Field,
    /// Index range `lo..=hi` of the window on the simulation grid.
    pub window: (usize, usize),
    /// First moment of the full density.
    pub mean: f64,
}

impl Decomposition {
    pub fn window_grid(&self) -> &Grid {
        self.u_eps.grid()
    }
}

fn window_indices(s: &SimState, z_star: f64, bounds: &WindowSpec) -> Result<(usize, usize)> {
    let g = s.density.grid();
    if !g.contains(z_star) {
        return Err(Error::InsufficientSupport(format!(
            "z* = {z_star} lies outside the grid [{}, {}]",
            g.z_min(),
            g.z_max()
        )));
    }
    let rho = s.density.values();
    let cut = bounds.floor * s.density.max();
    let keep = |i: usize| {
        rho[i] > cut && bounds.half_width.is_none_or(|w| (g.point(i) - z_star).abs() <= w)
    };
    let c = g.nearest_index(z_star);
    if !keep(c) {
        return Err(Error::InsufficientSupport(format!(
            "density at z* = {z_star} is below the window floor"
        )));
    }
    let mut lo = c;
    while lo > 0 && keep(lo - 1) {
        lo -= 1;
    }
    let mut hi = c;
    while hi + 1 < g.len() && keep(hi + 1) {
        hi += 1;
    }
    let left = ((z_star - g.point(lo)) / g.spacing()).floor() as usize;
    let right = ((g.point(hi) - z_star) / g.spacing()).floor() as usize;
    if left < MIN_SIDE_POINTS || right < MIN_SIDE_POINTS {
        return Err(Error::InsufficientSupport(format!(
            "window [{:.4}, {:.4}] holds fewer than {MIN_SIDE_POINTS} points on one side of z* = {z_star:.4}",
            g.point(lo),
            g.point(hi)
        )));
    }
    Ok((lo, hi))
}

/// Inverts the Hopf–Cole transform of `s` around the reference state at `s.t`.
///
/// `p_eps` and `q_eps` are the value and slope at `z*` of the local quintic
/// interpolant, the same one the harness uses to evaluate `V_eps` and `W`
/// off the grid, so both vanish with their slope at `z*` up to rounding.
pub fn hopf_cole_decompose(
    s: &SimState,
    traj: &ReferenceTrajectory,
    bounds: &WindowSpec,
) -> Result<Decomposition> {
    let r = traj.state_at(s.t)?;
    let zs = r.z_star;
    let eps = s.eps;
    let (lo, hi) = window_indices(s, zs, bounds)?;
    let g = s.density.grid();
    let wg = g.slice(lo, hi)?;
    let shift = r.lambda / (eps * eps) - s.log_mass - (eps * (2.0 * PI).sqrt()).ln();
    let u: Vec<f64> = (lo..=hi)
        .map(|i| {
            let d = g.point(i) - zs;
            shift - s.density.values()[i].ln() - d * d / (2.0 * eps * eps)
        })
        .collect();
    let u_eps = Field::new(wg, u);
    let (p_eps, q_eps) = u_eps.quintic(zs).expect("window contains z*");
    let v_eps = u_eps.map(|z, u| u - p_eps - q_eps * (z - zs));
    let h = g.spacing();
    let mean = h * g.points().zip(s.density.values()).map(|(z, v)| z * v).sum::<f64>();
    Ok(Decomposition {
        t: s.t,
        eps,
        z_star: zs,
        lambda_ref: r.lambda,
        p_eps,
        q_eps,
        u_eps,
        v_eps,
        window: (lo, hi),
        mean,
    })
}

/// Deviations of a decomposition from the reference profile.
#[derive(Debug, Clone)]
pub struct Correctors {
    /// `(q_eps - q*)/eps²`.
    pub kappa: f64,
    /// `(V_eps - V*)/eps²` on the window.
    pub w: Field,
    /// `sup |V_eps - V*|` on the window.
    pub v_err_inf: f64,
    pub q_star: f64,
    pub p_star: f64,
}

/// `V*` is sampled on the window and its affine part at `z*` under the
/// quintic interpolant is removed, so `W` inherits the pinning of `V_eps`.
pub fn correctors(
    d: &Decomposition,
    model: &SelectionModel,
    traj: &ReferenceTrajectory,
) -> Result<Correctors> {
    let r = traj.state_at(d.t)?;
    let zs = d.z_star;
    let vs = v_star_field(model, zs, d.window_grid(), SERIES_TOL)?;
    let (v0, v1) = vs.quintic(zs).expect("window contains z*");
    let e2 = d.eps * d.eps;
    let diff: Vec<f64> = d
        .v_eps
        .grid()
        .points()
        .zip(d.v_eps.values().iter().zip(vs.values()))
        .map(|(z, (ve, v))| ve - (v - v0 - v1 * (z - zs)))
        .collect();
    let v_err_inf = diff.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(Correctors {
        kappa: (d.q_eps - r.q_star) / e2,
        w: Field::new(*d.window_grid(), diff.into_iter().map(|x| x / e2).collect()),
        v_err_inf,
        q_star: r.q_star,
        p_star: r.p_star,
    })
}

/// The five suprema whose maximum is the F-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FNorm {
    pub value: f64,
    /// `sup|W'|`, `sup φ|W''|`, `sup φ|W'''|`, `sup|2W(z̄) - W(z)|`,
    /// `sup φ|W'(z̄) - W'(z)|`.
    pub terms: [f64; 5],
    /// Points whose third derivative disagreed by more than 10% between
    /// spacings `h` and `2h` and were left out.
    pub discarded: usize,
}

pub fn f_norm(w: &Field, z_star: f64, alpha: f64) -> Result<FNorm> {
    crate::grid::check_alpha(alpha)?;
    let g = w.grid();
    let n = g.len();
    if !g.contains(z_star) {
        return Err(Error::InsufficientSupport(format!("z* = {z_star} is outside the window")));
    }
    let left = ((z_star - g.z_min()) / g.spacing()).floor() as usize;
    let right = ((g.z_max() - z_star) / g.spacing()).floor() as usize;
    if left < MIN_SIDE_POINTS || right < MIN_SIDE_POINTS {
        return Err(Error::InsufficientSupport(format!(
            "need {MIN_SIDE_POINTS} window points on each side of z* = {z_star}"
        )));
    }
    let (value, slope) = w.quintic(z_star).expect("checked above");
    if value.abs() > PINNING_TOLERANCE || slope.abs() > PINNING_TOLERANCE {
        return Err(Error::PinningViolation { value, slope });
    }

    let d1 = derivative(w, 1)?;
    let d2 = derivative(w, 2)?;
    let d3 = derivative(w, 3)?;
    let y = w.values();
    let h = g.spacing();
    let mut terms = [0.0f64; 5];
    let mut discarded = 0;
    // Below this the third-derivative stencil only sees rounding.
    let noise = 1e3 * f64::EPSILON * y.iter().map(|v| v.abs()).fold(0.0, f64::max) / h.powi(3);
    for i in EDGE_POINTS..n - EDGE_POINTS {
        let z = g.point(i);
        let zbar = 0.5 * (z + z_star);
        let weight = phi(z, z_star, alpha);
        terms[0] = terms[0].max(d1.values()[i].abs());
        terms[1] = terms[1].max(weight * d2.values()[i].abs());

        let fine = d3.values()[i];
        let keep = if i >= 4 && i + 4 < n {
            let coarse = (y[i + 4] - 2.0 * y[i + 2] + 2.0 * y[i - 2] - y[i - 4]) / (16.0 * h * h * h);
            let scale = fine.abs().max(coarse.abs());
            scale <= noise || (fine - coarse).abs() <= 0.1 * scale
        } else {
            true
        };
        if keep {
            terms[2] = terms[2].max(weight * fine.abs());
        } else {
            discarded += 1;
        }

        let (w_bar, _) = w.quintic(zbar).expect("midpoint inside the window");
        terms[3] = terms[3].max((2.0 * w_bar - y[i]).abs());
        let (dw_bar, _) = d1.quintic(zbar).expect("midpoint inside the window");
        terms[4] = terms[4].max(weight * (dw_bar - d1.values()[i]).abs());
    }
    Ok(FNorm {
        value: terms.iter().copied().fold(0.0, f64::max),
        terms,
        discarded,
    })
}

/// `p` along the trajectory from `p' = -m'(z*) q* + m''(z*)/2`, trapezoid
/// rule on the trajectory samples.
///
/// This is the rate obtained by expanding the residual functional at `z*`
/// to order `eps²`; it differs from the trajectory's own `p*` by the factor
/// on `m''`, and is reported next to it.
pub fn p_star_half_curvature(model: &SelectionModel, traj: &ReferenceTrajectory) -> Vec<f64> {
    let rate = |i: usize| {
        let z = traj.z_star()[i];
        -model.derivative(z, 1) * traj.q_star()[i] + 0.5 * model.derivative(z, 2)
    };
    let times = traj.times();
    let mut out = Vec::with_capacity(times.len());
    let mut acc = traj.p_star()[0];
    out.push(acc);
    for i in 1..times.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (rate(i) + rate(i - 1));
        out.push(acc);
    }
    out
}

fn sample_linear(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
    let (t0, t1) = (times[k - 1], times[k]);
    let s = (t - t0) / (t1 - t0);
    values[k - 1] + s * (values[k] - values[k - 1])
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Everything a sweep needs except the list of `eps`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub model: SelectionModel,
    pub z_star0: f64,
    pub q0: f64,
    pub p0: f64,
    pub lambda0: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Smallest grid size; grown by powers of two until `h <= eps/8`.
    pub n_min: usize,
    pub t_end: f64,
    pub dt_factor: f64,
    pub snapshot_every: f64,
    pub backend: Backend,
    pub scheme: Scheme,
    pub init: InitialProfile,
    pub alpha: f64,
    pub window: WindowSpec,
    pub reference_dt: f64,
}

impl SweepConfig {
    pub fn grid_for(&self, eps: f64) -> Result<Grid> {
        let mut n = self.n_min.max(16).next_power_of_two();
        while (self.z_max - self.z_min) / (n - 1) as f64 > eps / 8.0 {
            n *= 2;
        }
        Grid::new(self.z_min, self.z_max, n)
    }

    pub fn reference(&self) -> Result<ReferenceTrajectory> {
        evolve_reference(
            &self.model,
            self.z_star0,
            self.q0,
            self.p0,
            self.lambda0,
            self.t_end,
            self.reference_dt,
        )
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone)]
pub struct SnapshotDiagnostics {
    pub t: f64,
    pub f_norm: FNorm,
    pub kappa: f64,
    pub p_err: f64,
    pub p_half_err: f64,
    pub v_err_inf: f64,
    /// `mean - (z* - eps² q_eps)`.
    pub mean_shift_residual: f64,
    pub window: (f64, f64),
}

/// One row of a convergence report.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub eps: f64,
    pub grid_n: usize,
    pub sup_f_norm: f64,
    pub sup_abs_kappa: f64,
    pub sup_p_err_over_eps2: f64,
    pub sup_p_half_err_over_eps2: f64,
    pub v_err_inf: f64,
    pub sup_mean_shift_over_eps2: f64,
    /// `sup |dp_eps/dt + m'(z*) q* - m''(z*)|` from snapshot differences.
    pub p_rate_residual: f64,
    /// Same with `m''(z*)/2`.
    pub p_rate_residual_half: f64,
    pub clamped: f64,
    pub valid: bool,
    pub error: Option<String>,
    pub snapshots: Vec<SnapshotDiagnostics>,
}

impl SweepRow {
    fn failed(eps: f64, grid_n: usize, err: &Error) -> Self {
        SweepRow {
            eps,
            grid_n,
            sup_f_norm: f64::NAN,
            sup_abs_kappa: f64::NAN,
            sup_p_err_over_eps2: f64::NAN,
            sup_p_half_err_over_eps2: f64::NAN,
            v_err_inf: f64::NAN,
            sup_mean_shift_over_eps2: f64::NAN,
            p_rate_residual: f64::NAN,
            p_rate_residual_half: f64::NAN,
            clamped: f64::NAN,
            valid: false,
            error: Some(err.to_string()),
            snapshots: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.valid && self.error.is_none() && self.sup_f_norm.is_finite() && self.sup_abs_kappa.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Sorted by decreasing `eps`.
    pub rows: Vec<SweepRow>,
    pub t_end: f64,
    pub slope_v: f64,
    /// Ratios between consecutive rows.
    pub f_norm_ratios: Vec<f64>,
    pub kappa_ratios: Vec<f64>,
    pub p_ratios: Vec<f64>,
    /// `max sup|p_eps - p*|/eps²` over rows.
    pub k0: f64,
    pub k0_half: f64,
    pub slope_mean_shift: f64,
}

fn ratios(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] / w[0]).collect()
}

fn within(rs: &[f64], lo: f64, hi: f64) -> bool {
    !rs.is_empty() && rs.iter().all(|r| (lo..=hi).contains(r))
}

impl ConvergenceReport {
    pub fn bounded(&self) -> bool {
        self.rows.iter().all(SweepRow::passed)
    }

    pub fn f_norm_uniform(&self) -> bool {
        within(&self.f_norm_ratios, 0.6, 1.3)
    }

    pub fn kappa_uniform(&self) -> bool {
        within(&self.kappa_ratios, 0.6, 1.3)
    }

    pub fn slope_v_ok(&self) -> bool {
        (self.slope_v - 2.0).abs() <= 0.2
    }

    /// A single constant bounds `|p_eps - p*|/eps²`: it does not grow
    /// by more than 30% from one `eps` to the next.
    pub fn p_uniform(&self) -> bool {
        !self.p_ratios.is_empty() && self.p_ratios.iter().all(|r| *r <= 1.3)
    }

    pub fn passed(&self) -> bool {
        self.bounded() && self.f_norm_uniform() && self.kappa_uniform() && self.slope_v_ok() && self.p_uniform()
    }

    /// `eps,sup_F_norm_W,sup_abs_kappa,sup_p_err_over_eps2,slope_V,passed`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "eps,sup_F_norm_W,sup_abs_kappa,sup_p_err_over_eps2,slope_V,passed")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.6e},{:.10e},{:.10e},{:.10e},{:.6},{}",
                r.eps,
                r.sup_f_norm,
                r.sup_abs_kappa,
                r.sup_p_err_over_eps2,
                self.slope_v,
                r.passed()
            )?;
        }
        Ok(())
    }

    /// Every per-row and per-report diagnostic, one `key = value` per line.
    pub fn summary(&self) -> String {
        let mut s = format!("horizon t_end = {}\n", self.t_end);
        for r in &self.rows {
            s += &format!(
                "eps = {:.4}: n = {}, sup F-norm W = {:.4e}, sup |kappa| = {:.4e}, sup |p - p*|/eps^2 = {:.4e}, \
                 sup |p - p_half|/eps^2 = {:.4e}, sup |V - V*| = {:.4e}, sup mean-shift residual/eps^2 = {:.4e}, \
                 p-rate residual = {:.4e} (half curvature: {:.4e}), clamped = {:.2e}, valid = {}{}\n",
                r.eps,
                r.grid_n,
                r.sup_f_norm,
                r.sup_abs_kappa,
                r.sup_p_err_over_eps2,
                r.sup_p_half_err_over_eps2,
                r.v_err_inf,
                r.sup_mean_shift_over_eps2,
                r.p_rate_residual,
                r.p_rate_residual_half,
                r.clamped,
                r.valid,
                r.error.as_deref().map(|e| format!(", error: {e}")).unwrap_or_default()
            );
        }
        s += &format!("slope of sup |V - V*| = {:.4}\n", self.slope_v);
        s += &format!("slope of mean-shift residual = {:.4}\n", self.slope_mean_shift);
        s += &format!("F-norm ratios = {:?}\n", self.f_norm_ratios);
        s += &format!("kappa ratios = {:?}\n", self.kappa_ratios);
        s += &format!("p-error ratios = {:?}\n", self.p_ratios);
        s += &format!("K0 = {:.4e} (half curvature: {:.4e})\n", self.k0, self.k0_half);
        s
    }
}

fn write_decomposition(dir: &Path, d: &Decomposition, c: &Correctors) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(format!("decomp_t{:.4}.csv", d.t)))?);
    writeln!(out, "z,U_eps,V_eps,W_eps")?;
    let g = d.window_grid();
    for i in 0..g.len() {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            g.point(i),
            d.u_eps.values()[i],
            d.v_eps.values()[i],
            c.w.values()[i]
        )?;
    }
    out.flush()?;
    Ok(())
}

fn sweep_row(
    cfg: &SweepConfig,
    traj: &ReferenceTrajectory,
    p_half: &[f64],
    eps: f64,
    out_dir: Option<&Path>,
) -> Result<SweepRow> {
    let g = cfg.grid_for(eps)?;
    let run_cfg = RunConfig {
        eps,
        t_end: cfg.t_end,
        dt_factor: cfg.dt_factor,
        snapshot_every: cfg.snapshot_every,
        backend: cfg.backend,
        scheme: cfg.scheme,
        init: cfg.init,
    };
    let out = run(&cfg.model, traj, &g, &run_cfg)?;
    let dir = match out_dir {
        Some(d) => {
            let d = d.join(format!("eps_{eps}"));
            std::fs::create_dir_all(&d)?;
            Some(d)
        }
        None => None,
    };
    let e2 = eps * eps;
    let mut snaps = Vec::with_capacity(out.snapshots.len());
    let mut p_series = Vec::with_capacity(out.snapshots.len());
    for s in &out.snapshots {
        let d = hopf_cole_decompose(s, traj, &cfg.window)?;
        let c = correctors(&d, &cfg.model, traj)?;
        let f = f_norm(&c.w, d.z_star, cfg.alpha)?;
        if let Some(dir) = &dir {
            write_decomposition(dir, &d, &c)?;
        }
        let ph = sample_linear(traj.times(), p_half, s.t);
        let wg = d.window_grid();
        p_series.push((s.t, d.p_eps, d.z_star, c.q_star));
        snaps.push(SnapshotDiagnostics {
            t: s.t,
            f_norm: f,
            kappa: c.kappa,
            p_err: (d.p_eps - c.p_star).abs(),
            p_half_err: (d.p_eps - ph).abs(),
            v_err_inf: c.v_err_inf,
            mean_shift_residual: d.mean - (d.z_star - e2 * d.q_eps),
            window: (wg.z_min(), wg.z_max()),
        });
    }
    let mut p_rate = 0.0f64;
    let mut p_rate_half = 0.0f64;
    for w in p_series.windows(2) {
        let (t0, p0, z0, q0) = w[0];
        let (t1, p1, z1, q1) = w[1];
        let slope = (p1 - p0) / (t1 - t0);
        let mid = |f: &dyn Fn(f64, f64) -> f64| 0.5 * (f(z0, q0) + f(z1, q1));
        let drift = mid(&|z, q| -cfg.model.derivative(z, 1) * q);
        let curv = mid(&|z, _| cfg.model.derivative(z, 2));
        p_rate = p_rate.max((slope - drift - curv).abs());
        p_rate_half = p_rate_half.max((slope - drift - 0.5 * curv).abs());
    }
    let sup = |f: &dyn Fn(&SnapshotDiagnostics) -> f64| snaps.iter().map(f).fold(0.0, f64::max);
    let last = out.last();
    Ok(SweepRow {
        eps,
        grid_n: g.len(),
        sup_f_norm: sup(&|s| s.f_norm.value),
        sup_abs_kappa: sup(&|s| s.kappa.abs()),
        sup_p_err_over_eps2: sup(&|s| s.p_err) / e2,
        sup_p_half_err_over_eps2: sup(&|s| s.p_half_err) / e2,
        v_err_inf: sup(&|s| s.v_err_inf),
        sup_mean_shift_over_eps2: sup(&|s| s.mean_shift_residual.abs()) / e2,
        p_rate_residual: p_rate,
        p_rate_residual_half: p_rate_half,
        clamped: last.clamped,
        valid: last.is_valid(),
        error: None,
        snapshots: snaps,
    })
}

/// Runs the solver for every `eps` (concurrently), decomposes each
/// snapshot and assembles the report. A failing run yields a row marked
/// with its error instead of aborting the sweep.
pub fn convergence_sweep(
    cfg: &SweepConfig,
    eps_list: &[f64],
    out_dir: Option<&Path>,
) -> Result<ConvergenceReport> {
    if eps_list.is_empty() {
        return Err(Error::Config("empty eps list".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("eps list must be positive and strictly decreasing".into()));
    }
    crate::grid::check_alpha(cfg.alpha)?;
    let traj = cfg.reference()?;
    let p_half = p_star_half_curvature(&cfg.model, &traj);
    let rows: Vec<SweepRow> = eps_list
        .par_iter()
        .map(|&eps| {
            let n = cfg.grid_for(eps).map(|g| g.len()).unwrap_or(0);
            sweep_row(cfg, &traj, &p_half, eps, out_dir).unwrap_or_else(|e| SweepRow::failed(eps, n, &e))
        })
        .collect();

    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let v_err = col(|r| r.v_err_inf);
    let mean_shift: Vec<f64> = rows.iter().map(|r| r.sup_mean_shift_over_eps2 * r.eps * r.eps).collect();
    let max_of = |xs: &[f64]| xs.iter().copied().fold(f64::NAN, f64::max);
    Ok(ConvergenceReport {
        t_end: cfg.t_end,
        slope_v: loglog_slope(&eps, &v_err),
        slope_mean_shift: loglog_slope(&eps, &mean_shift),
        f_norm_ratios: ratios(&col(|r| r.sup_f_norm)),
        kappa_ratios: ratios(&col(|r| r.sup_abs_kappa)),
        p_ratios: ratios(&col(|r| r.sup_p_err_over_eps2)),
        k0: max_of(&col(|r| r.sup_p_err_over_eps2)),
        k0_half: max_of(&col(|r| r.sup_p_half_err_over_eps2)),
        rows,
    })
}
