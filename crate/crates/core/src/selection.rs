//! Mortality `m`, the normalized selection `M(t, z)` and runtime checks of
//! the structural assumptions placed on them.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{phi, Grid};
use crate::profiles::ReferenceTrajectory;

/// Highest derivative order the model exposes.
pub const MAX_ORDER: usize = 5;
/// Highest polynomial degree accepted for the `polynomial` kind.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `c (z - z0)^2 / 2`
    Quadratic,
    /// `sum_j a_j (z - z0)^j`, degree at most 8.
    Polynomial,
    /// `a ((z - z0)^2 - 1)^2 + b (z - z0) + c`
    DoubleWell,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quadratic" => Some(ModelKind::Quadratic),
            "polynomial" => Some(ModelKind::Polynomial),
            "double_well" => Some(ModelKind::DoubleWell),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::Polynomial => "polynomial",
            ModelKind::DoubleWell => "double_well",
        })
    }
}

/// Polynomial mortality, stored in powers of `z - z0`.
///
/// Every built-in kind is a polynomial, so derivatives of any order are
/// exact and `M - 1` can be formed from Taylor coefficients without
/// cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionModel {
    kind: ModelKind,
    coefficients: Vec<f64>,
    z0: f64,
    poly: Vec<f64>,
    description: String,
}

impl SelectionModel {
    pub fn new(kind: ModelKind, coefficients: Vec<f64>, z0: f64) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) || !z0.is_finite() {
            return Err(Error::Config("selection coefficients must be finite".into()));
        }
        let mut poly = match kind {
            ModelKind::Quadratic => {
                let [c] = coefficients[..] else {
                    return Err(Error::Config(
                        "quadratic selection takes exactly one coefficient".into(),
                    ));
                };
                vec![0.0, 0.0, 0.5 * c]
            }
            ModelKind::Polynomial => {
                if coefficients.is_empty() || coefficients.len() > MAX_DEGREE + 1 {
                    return Err(Error::Config(format!(
                        "polynomial selection takes 1..={} coefficients",
                        MAX_DEGREE + 1
                    )));
                }
                coefficients.clone()
            }
            ModelKind::DoubleWell => {
                let [a, b, c] = coefficients[..] else {
                    return Err(Error::Config(
                        "double_well selection takes coefficients a, b, c".into(),
                    ));
                };
                vec![a + c, b, -2.0 * a, 0.0, a]
            }
        };
        while poly.len() > 1 && poly[poly.len() - 1] == 0.0 {
            poly.pop();
        }
        let degree = poly.len() - 1;
        if degree > 0 && (degree % 2 == 1 || poly[degree] < 0.0) {
            return Err(Error::Config(format!(
                "selection function {kind} with coefficients {coefficients:?} is not bounded below"
            )));
        }
        let description = match kind {
            ModelKind::Quadratic => format!("{} (z - {z0})^2 / 2", coefficients[0]),
            ModelKind::Polynomial => format!("polynomial in (z - {z0}) with coefficients {coefficients:?}"),
            ModelKind::DoubleWell => format!(
                "{} ((z - {z0})^2 - 1)^2 + {} (z - {z0}) + {}",
                coefficients[0], coefficients[1], coefficients[2]
            ),
        };
        Ok(SelectionModel {
            kind,
            coefficients,
            z0,
            poly,
            description,
        })
    }

    pub fn quadratic(c: f64, z0: f64) -> Result<Self> {
        Self::new(ModelKind::Quadratic, vec![c], z0)
    }

    pub fn double_well(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(ModelKind::DoubleWell, vec![a, b, c], 0.0)
    }

    /// `m ≡ c`
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(ModelKind::Polynomial, vec![c], 0.0)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// `m^{(k)}(z)` for `k <= 5`.
    pub fn eval(&self, z: f64, k: usize) -> Result<f64> {
        if k > MAX_ORDER {
            return Err(Error::UnsupportedOrder(k));
        }
        Ok(self.derivative(z, k))
    }

    /// Unchecked derivative of any order (zero beyond the degree).
    pub fn derivative(&self, z: f64, k: usize) -> f64 {
        let x = z - self.z0;
        let mut acc = 0.0;
        for j in (k..self.poly.len()).rev() {
            acc = acc * x + self.poly[j] * falling(j, k);
        }
        acc
    }

    #[inline]
    pub fn m(&self, z: f64) -> f64 {
        self.derivative(z, 0)
    }

    /// `M(z) = 1 + m(z) - m(z*) - m'(z*) (z - z*)`.
    pub fn eval_big_m(&self, z_star: f64, z: f64) -> f64 {
        self.normalized_at(z_star).value(z)
    }

    /// Taylor form of `M` around `z_star`.
    pub fn normalized_at(&self, z_star: f64) -> NormalizedSelection {
        let taylor = (0..self.poly.len())
            .map(|j| self.derivative(z_star, j) / factorial(j))
            .collect();
        NormalizedSelection { z_star, taylor }
    }

    /// Local minimum reached by Newton iteration on `m'` from `z_init`.
    pub fn local_minimum_near(&self, z_init: f64) -> Option<f64> {
        let mut z = z_init;
        for _ in 0..100 {
            let d1 = self.derivative(z, 1);
            let d2 = self.derivative(z, 2);
            if d2 <= 0.0 {
                return None;
            }
            let step = d1 / d2;
            z -= step;
            if step.abs() < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        (self.derivative(z, 2) > 0.0 && self.derivative(z, 1).abs() < 1e-10).then_some(z)
    }
}

/// `M(t, ·)` expanded around a fixed `z*`: `M(z*+d) = 1 + sum_{j>=2} c_j d^j`.
#[derive(Debug, Clone)]
pub struct NormalizedSelection {
    z_star: f64,
    taylor: Vec<f64>,
}

impl NormalizedSelection {
    pub fn z_star(&self) -> f64 {
        self.z_star
    }

    /// `M(z*+d) - 1`, free of cancellation for small `d`.
    #[inline]
    pub fn excess(&self, d: f64) -> f64 {
        let mut acc = 0.0;
        for j in (2..self.taylor.len()).rev() {
            acc = acc * d + self.taylor[j];
        }
        acc * d * d
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        1.0 + self.excess(z - self.z_star)
    }

    /// `∂_z^k M(z)` for `k >= 1`.
    pub fn derivative(&self, z: f64, k: usize) -> f64 {
        if k == 0 {
            return self.value(z);
        }
        let d = z - self.z_star;
        let mut acc = 0.0;
        for j in (k.max(2)..self.taylor.len()).rev() {
            acc = acc * d + self.taylor[j] * falling(j, k);
        }
        // Horner above skipped powers below max(k, 2); restore them.
        if k < 2 {
            acc *= d.powi((2 - k) as i32);
        }
        acc
    }
}

fn falling(j: usize, k: usize) -> f64 {
    ((j + 1 - k)..=j).map(|x| x as f64).product()
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|x| x as f64).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionFlags {
    /// `inf M > 0`
    pub cond_gamma: bool,
    /// weighted ratios `phi |∂^k M| / M` finite for k = 1..5
    pub decay_gamma: bool,
    /// `limsup |M(z̄)/M(z)| < 1/2`, estimated on the outer quarter of the grid
    pub superlinear: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub inf_m: f64,
    /// Location `(t, z)` of the infimum.
    pub inf_m_at: (f64, f64),
    pub weighted_ratio_sup: [f64; 5],
    pub a_estimate: f64,
    /// `a_estimate < 0.475`, i.e. the bound holds with a 5 % margin.
    pub a_within_margin: bool,
    /// `sup |∂M(z̄) / ∂M(z)|` on the outer quarter; recorded, not judged.
    pub dm_ratio_estimate: f64,
    pub passed: AssumptionFlags,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.passed.cond_gamma && self.passed.decay_gamma && self.passed.superlinear
    }

    pub fn summary(&self) -> String {
        let mark = |b: bool| if b { "pass" } else { "FAIL" };
        format!(
            "cond_Gamma: {} (inf M = {:.6e} at t = {:.4}, z = {:.4})\n\
             decay_Gamma: {} (sup phi|d^k M|/M, k=1..5 = {:?})\n\
             superlinear: {} (a estimate = {:.4} on the outer 25% of the grid, 5% margin {})\n\
             limsup |dM(zbar)/dM(z)| estimate = {:.4} (recorded only)",
            mark(self.passed.cond_gamma),
            self.inf_m,
            self.inf_m_at.0,
            self.inf_m_at.1,
            mark(self.passed.decay_gamma),
            self.weighted_ratio_sup,
            mark(self.passed.superlinear),
            self.a_estimate,
            if self.a_within_margin { "met" } else { "not met" },
            self.dm_ratio_estimate,
        )
    }
}

/// Sample `M` over the trajectory and the grid and report which structural
/// assumptions hold. Never fails on a violated assumption.
pub fn check_assumptions(
    model: &SelectionModel,
    traj: &ReferenceTrajectory,
    g: &Grid,
    alpha: f64,
) -> AssumptionReport {
    const MAX_TIMES: usize = 400;
    let times = traj.times();
    let stride = times.len().div_ceil(MAX_TIMES).max(1);
    let mut indices: Vec<usize> = (0..times.len()).step_by(stride).collect();
    if indices.last() != Some(&(times.len() - 1)) {
        indices.push(times.len() - 1);
    }

    let outer = g.len() / 8;
    let mut inf_m = f64::INFINITY;
    let mut inf_m_at = (0.0, 0.0);
    let mut ratios = [0.0f64; 5];
    let mut a_estimate = 0.0f64;
    let mut dm_ratio = 0.0f64;

    for &j in &indices {
        let t = times[j];
        let zs = traj.z_star()[j];
        let big_m = model.normalized_at(zs);
        // M(z*) = 1 exactly; the grid rarely contains z* itself.
        if g.contains(zs) && big_m.value(zs) < inf_m {
            inf_m = big_m.value(zs);
            inf_m_at = (t, zs);
        }
        for i in 0..g.len() {
            let z = g.point(i);
            let mz = big_m.value(z);
            if mz < inf_m {
                inf_m = mz;
                inf_m_at = (t, z);
            }
            let w = phi(z, zs, alpha);
            for (k, r) in ratios.iter_mut().enumerate() {
                let val = if mz > 0.0 {
                    w * big_m.derivative(z, k + 1).abs() / mz
                } else {
                    f64::INFINITY
                };
                *r = r.max(val);
            }
            if i < outer || i >= g.len() - outer {
                let zbar = 0.5 * (z + zs);
                a_estimate = a_estimate.max((big_m.value(zbar) / mz).abs());
                let dm = big_m.derivative(z, 1);
                if dm != 0.0 {
                    dm_ratio = dm_ratio.max((big_m.derivative(zbar, 1) / dm).abs());
                }
            }
        }
    }

    AssumptionReport {
        inf_m,
        inf_m_at,
        weighted_ratio_sup: ratios,
        a_estimate,
        a_within_margin: a_estimate < 0.475,
        dm_ratio_estimate: dm_ratio,
        passed: AssumptionFlags {
            cond_gamma: inf_m > 0.0,
            decay_gamma: ratios.iter().all(|r| r.is_finite()),
            superlinear: a_estimate < 0.5,
        },
    }
}
