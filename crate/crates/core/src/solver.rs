//! Time integration of `eps² ∂_t f + m f = B_eps(f)`.
//!
//! The state keeps a unit-mass density and the logarithm of the total mass
//! separately, since the mass grows like `exp(t/eps²)`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::operator::{Backend, Mixing, MixingOperator};
use crate::profiles::{u_star, ReferenceTrajectory};
use crate::selection::SelectionModel;

pub const DEFAULT_C_STAB: f64 = 0.2;
pub const DEFAULT_DT_FACTOR: f64 = 0.1;
/// Cells at each end of the grid forced to zero after every step.
pub const BOUNDARY_CELLS: usize = 3;
/// A run whose accumulated clamped mass exceeds this is invalid.
pub const CLAMP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    /// Unit-mass density; `f = exp(log_mass) * density`.
    pub density: Field,
    pub log_mass: f64,
    pub eps: f64,
    /// Accumulated relative mass removed at the boundary.
    pub clamped: f64,
}

impl SimState {
    pub fn is_valid(&self) -> bool {
        self.clamped <= CLAMP_TOLERANCE
    }

    /// Location of the maximum, refined by a least-squares parabola through
    /// the logarithm of the five nearest samples.
    pub fn mode(&self) -> f64 {
        mode_of(&self.density)
    }
}

pub fn mode_of(f: &Field) -> f64 {
    let g = f.grid();
    let n = g.len();
    let i = f.argmax();
    let c = i.clamp(2, n - 3);
    let ys: Vec<f64> = (c - 2..=c + 2).map(|j| f.values()[j]).collect();
    if ys.iter().any(|&y| y <= 0.0) {
        return g.point(i);
    }
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let offsets = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let sum_y: f64 = logs.iter().sum();
    let sum_xy: f64 = offsets.iter().zip(&logs).map(|(x, y)| x * y).sum();
    let sum_xxy: f64 = offsets.iter().zip(&logs).map(|(x, y)| x * x * y).sum();
    let slope = sum_xy / 10.0;
    let curvature = (sum_xxy - 2.0 * sum_y) / 14.0;
    if curvature >= 0.0 {
        return g.point(i);
    }
    let vertex = (-slope / (2.0 * curvature)).clamp(-2.0, 2.0);
    g.point(c) + vertex * g.spacing()
}

/// Which correction to the Gaussian is put into the initial datum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialProfile {
    /// `U = U*(0, ·)`, the reference profile including `V*`.
    #[default]
    WellPrepared,
    /// `U = p*(0) + q*(0)(z - z*(0))`; usable where `V*` is undefined.
    Gaussian,
}

impl InitialProfile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "well_prepared" => Some(InitialProfile::WellPrepared),
            "gaussian" => Some(InitialProfile::Gaussian),
            _ => None,
        }
    }
}

impl std::fmt::Display for InitialProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitialProfile::WellPrepared => "well_prepared",
            InitialProfile::Gaussian => "gaussian",
        })
    }
}

/// `f0 =(eps √(2π))^{-1} exp(lambda(0)/eps² - (z - z*)²/(2 eps²) - U*(0, z))`.
pub fn init_well_prepared(
    model: &SelectionModel,
    traj: &ReferenceTrajectory,
    eps: f64,
    g: &Grid,
) -> Result<SimState> {
    init_state(model, traj, eps, g, InitialProfile::WellPrepared)
}

pub fn init_state(
    model: &SelectionModel,
    traj: &ReferenceTrajectory,
    eps: f64,
    g: &Grid,
    profile: InitialProfile,
) -> Result<SimState> {
    let r0 = traj.sample(0);
    let zs = r0.z_star;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if g.spacing() > eps / 8.0 {
        return Err(Error::Config(format!(
            "grid spacing {:.4e} does not resolve eps = {eps} (need h <= eps/8)",
            g.spacing()
        )));
    }
    if zs - g.z_min() < 6.0 * eps || g.z_max() - zs < 6.0 * eps {
        return Err(Error::Config(format!(
            "z*(0) = {zs} is closer than 6 eps to the grid boundary [{}, {}]",
            g.z_min(),
            g.z_max()
        )));
    }
    let norm = -(eps * (2.0 * PI).sqrt()).ln();
    let mut log_f = Vec::with_capacity(g.len());
    for z in g.points() {
        let u = match profile {
            InitialProfile::WellPrepared => u_star(model, traj, 0.0, z)?,
            InitialProfile::Gaussian => r0.p_star + r0.q_star * (z - zs),
        };
        log_f.push(r0.lambda / (eps * eps) + norm - (z - zs).powi(2) / (2.0 * eps * eps) - u);
    }
    let top = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shape = Field::new(*g, log_f.iter().map(|l| (l - top).exp()).collect());
    let mass = shape.mass();
    Ok(SimState {
        t: 0.0,
        density: shape.scale(1.0 / mass),
        log_mass: top + mass.ln(),
        eps,
        clamped: 0.0,
    })
}

/// `(e^x - 1)/x`, continuous at 0.
pub fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// `(φ1, φ2, φ3)` with `φ_k(x) = Σ_j x^j / (j + k)!`.
pub fn phi123(x: f64) -> (f64, f64, f64) {
    if x.abs() < 0.5 {
        let mut sums = [0.0; 3];
        for (k, sum) in sums.iter_mut().enumerate() {
            let mut term: f64 = (1..=k + 1).map(|j| 1.0 / j as f64).product();
            for j in 0..20 {
                *sum += term;
                term *= x / (j + k + 2) as f64;
            }
        }
        (sums[0], sums[1], sums[2])
    } else {
        let p1 = x.exp_m1() / x;
        let p2 = (p1 - 1.0) / x;
        let p3 = (p2 - 0.5) / x;
        (p1, p2, p3)
    }
}

/// Exponential time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Exponential Euler.
    Etd1,
    /// Fourth-order exponential Runge-Kutta (Cox-Matthews).
    #[default]
    Etdrk4,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "etd1" => Some(Scheme::Etd1),
            "etdrk4" => Some(Scheme::Etdrk4),
            _ => None,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Etd1 => "etd1",
            Scheme::Etdrk4 => "etdrk4",
        })
    }
}

/// Exponential integrator for the normalized density.
///
/// `B` is homogeneous of degree one, so over a step the density may be
/// rescaled by `exp(-Λ t/eps²)` with `Λ = ∫B(ρ) - ∫mρ` frozen at the start
/// of the step; the rescaled density solves
/// `eps² ∂_t g = -(m + Λ) g + B(g)` exactly, with the stiff linear part
/// diagonal. Densities with `B(ρ) = (m + Λ) ρ` are fixed points of every
/// scheme.
pub struct Solver<M: Mixing = MixingOperator> {
    mixing: M,
    grid: Grid,
    eps: f64,
    m_values: Vec<f64>,
    dt_max: f64,
    scheme: Scheme,
}

impl Solver<MixingOperator> {
    pub fn new(model: &SelectionModel, grid: Grid, eps: f64, backend: Backend) -> Result<Self> {
        let op = MixingOperator::new(grid, eps, backend)?;
        Ok(Solver::with_mixing(model, op, grid, eps, DEFAULT_C_STAB))
    }
}

impl<M: Mixing> Solver<M> {
    pub fn with_mixing(model: &SelectionModel, mixing: M, grid: Grid, eps: f64, c_stab: f64) -> Self {
        Solver {
            mixing,
            grid,
            eps,
            m_values: grid.points().map(|z| model.m(z)).collect(),
            dt_max: c_stab * eps * eps,
            scheme: Scheme::default(),
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    fn mix(&self, v: Vec<f64>) -> Result<Vec<f64>> {
        Ok(self.mixing.apply(&Field::new(self.grid, v))?.into_values())
    }

    pub fn step(&self, s: &SimState, dt: f64) -> Result<SimState> {
        if dt > self.dt_max * (1.0 + 1e-12) || dt <= 0.0 {
            return Err(Error::Stability {
                dt,
                dt_max: self.dt_max,
            });
        }
        let h = self.grid.spacing();
        let u = s.density.values();
        let nu = self.mixing.apply(&s.density)?.into_values();
        let mean_m = h * u.iter().zip(&self.m_values).map(|(r, m)| r * m).sum::<f64>();
        let lambda = h * nu.iter().sum::<f64>() - mean_m;
        if !lambda.is_finite() {
            return Err(Error::Divergence { last_valid_t: s.t });
        }
        let r = dt / (self.eps * self.eps);
        let rates: Vec<f64> = self.m_values.iter().map(|m| -(m + lambda) * r).collect();

        let mut next: Vec<f64> = match self.scheme {
            Scheme::Etd1 => (0..u.len())
                .map(|i| rates[i].exp() * u[i] + r * phi1(rates[i]) * nu[i])
                .collect(),
            Scheme::Etdrk4 => {
                let half: Vec<(f64, f64)> = rates
                    .iter()
                    .map(|&x| ((0.5 * x).exp(), 0.5 * r * phi1(0.5 * x)))
                    .collect();
                let a: Vec<f64> = (0..u.len()).map(|i| half[i].0 * u[i] + half[i].1 * nu[i]).collect();
                let na = self.mix(a.clone())?;
                let b: Vec<f64> = (0..u.len()).map(|i| half[i].0 * u[i] + half[i].1 * na[i]).collect();
                let nb = self.mix(b)?;
                let c: Vec<f64> = (0..u.len())
                    .map(|i| half[i].0 * a[i] + half[i].1 * (2.0 * nb[i] - nu[i]))
                    .collect();
                let nc = self.mix(c)?;
                (0..u.len())
                    .map(|i| {
                        let x = rates[i];
                        let (p1, p2, p3) = phi123(x);
                        let f1 = p1 - 3.0 * p2 + 4.0 * p3;
                        let f2 = p2 - 2.0 * p3;
                        let f3 = 4.0 * p3 - p2;
                        x.exp() * u[i] + r * (f1 * nu[i] + 2.0 * f2 * (na[i] + nb[i]) + f3 * nc[i])
                    })
                    .collect()
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_valid_t: s.t });
        }
        next.iter_mut().for_each(|v| *v = v.max(0.0));

        let n = next.len();
        let mut removed = 0.0;
        for i in (0..BOUNDARY_CELLS).chain(n - BOUNDARY_CELLS..n) {
            removed += next[i];
            next[i] = 0.0;
        }
        let kept: f64 = next.iter().sum();
        if !(kept > 0.0) {
            return Err(Error::DegenerateDensity(h * kept));
        }
        let inv = 1.0 / (h * kept);
        next.iter_mut().for_each(|v| *v *= inv);
        Ok(SimState {
            t: s.t + dt,
            density: Field::new(self.grid, next),
            log_mass: s.log_mass + lambda * r + (h * kept).ln(),
            eps: s.eps,
            clamped: s.clamped + removed / (removed + kept),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub eps: f64,
    pub t_end: f64,
    pub dt_factor: f64,
    pub snapshot_every: f64,
    pub backend: Backend,
    pub scheme: Scheme,
    pub init: InitialProfile,
}

impl RunConfig {
    pub fn new(eps: f64, t_end: f64) -> Self {
        RunConfig {
            eps,
            t_end,
            dt_factor: DEFAULT_DT_FACTOR,
            snapshot_every: t_end,
            backend: Backend::default(),
            scheme: Scheme::default(),
            init: InitialProfile::default(),
        }
    }

    /// Step count, uniform step and steps per snapshot.
    ///
    /// The step is shrunk from `dt_factor * eps²` so that snapshots fall on
    /// multiples of `snapshot_every` and the last step lands on `t_end`.
    pub fn steps(&self) -> (usize, f64, usize) {
        let dt0 = self.dt_factor * self.eps * self.eps;
        let every = if self.snapshot_every > 0.0 {
            ((self.snapshot_every / dt0) - 1e-9).ceil().max(1.0) as usize
        } else {
            usize::MAX
        };
        let dt = if every == usize::MAX { dt0 } else { self.snapshot_every / every as f64 };
        let n = ((self.t_end / dt) - 1e-9).ceil().max(1.0) as usize;
        (n, self.t_end / n as f64, every)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub snapshots: Vec<SimState>,
    pub mass_series: Vec<(f64, f64)>,
    pub mode_series: Vec<(f64, f64)>,
    pub config: RunConfig,
    pub grid: Grid,
}

impl SimOutput {
    pub fn last(&self) -> &SimState {
        self.snapshots.last().expect("a run keeps at least its initial state")
    }

    pub fn is_valid(&self) -> bool {
        self.last().is_valid()
    }

    /// `f_t<time>.csv` per snapshot, plus `mass.csv` and `mode.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for s in &self.snapshots {
            let file = File::create(dir.join(format!("f_t{:.4}.csv", s.t)))?;
            s.density.write_csv(BufWriter::new(file))?;
        }
        write_series(&dir.join("mass.csv"), "t,log_mass", &self.mass_series)?;
        write_series(&dir.join("mode.csv"), "t,z_mode", &self.mode_series)?;
        Ok(())
    }
}

pub fn write_series(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for (a, b) in rows {
        writeln!(out, "{a:.16e},{b:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

/// Initializes from the reference trajectory and steps to `t_end`.
pub fn run(
    model: &SelectionModel,
    traj: &ReferenceTrajectory,
    g: &Grid,
    cfg: &RunConfig,
) -> Result<SimOutput> {
    let state = init_state(model, traj, cfg.eps, g, cfg.init)?;
    let solver = Solver::new(model, *g, cfg.eps, cfg.backend)?.with_scheme(cfg.scheme);
    run_from(&solver, state, g, cfg)
}

pub fn run_from<M: Mixing>(
    solver: &Solver<M>,
    mut state: SimState,
    g: &Grid,
    cfg: &RunConfig,
) -> Result<SimOutput> {
    let (steps, dt, every) = cfg.steps();
    let mut out = SimOutput {
        snapshots: vec![state.clone()],
        mass_series: vec![(state.t, state.log_mass)],
        mode_series: vec![(state.t, state.mode())],
        config: cfg.clone(),
        grid: *g,
    };
    for i in 1..=steps {
        state = solver.step(&state, dt)?;
        if i == steps {
            state.t = cfg.t_end;
        }
        out.mass_series.push((state.t, state.log_mass));
        out.mode_series.push((state.t, state.mode()));
        if i % every == 0 || i == steps {
            out.snapshots.push(state.clone());
        }
    }
    Ok(out)
}
