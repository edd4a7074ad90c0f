//! Reference objects of the small-variance expansion: the dominant trait
//! `z*`, the growth `lambda`, the affine correctors `q*`, `p*`, the dyadic
//! series `V*` and the assembled profile `U*`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{richardson_derivative, Field, Grid};
use crate::selection::{NormalizedSelection, SelectionModel};

pub const SERIES_TOL: f64 = 1e-12;
pub const SERIES_MIN_TERMS: usize = 8;
pub const SERIES_MAX_TERMS: usize = 60;

/// Instantaneous reference state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefState {
    pub t: f64,
    pub z_star: f64,
    pub lambda: f64,
    pub q_star: f64,
    pub p_star: f64,
}

impl RefState {
    fn to_array(self) -> [f64; 4] {
        [self.z_star, self.lambda, self.q_star, self.p_star]
    }

    fn from_array(t: f64, y: [f64; 4]) -> Self {
        RefState {
            t,
            z_star: y[0],
            lambda: y[1],
            q_star: y[2],
            p_star: y[3],
        }
    }
}

/// Time samples of `(z*, lambda, q*, p*)`.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    times: Vec<f64>,
    z_star: Vec<f64>,
    lambda: Vec<f64>,
    q_star: Vec<f64>,
    p_star: Vec<f64>,
    rates: Vec<[f64; 4]>,
    dt: f64,
}

/// Right-hand side of the reference system.
fn reference_rhs(model: &SelectionModel, y: [f64; 4]) -> [f64; 4] {
    let [z, _, q, _] = y;
    let m1 = model.derivative(z, 1);
    let m2 = model.derivative(z, 2);
    let m3 = model.derivative(z, 3);
    [
        -m1,
        1.0 - model.m(z),
        -m2 * q + 0.5 * m3 - 2.0 * m2 * m1,
        -m1 * q + m2,
    ]
}

/// Classical RK4 integration of the reference system up to `t_end`.
///
/// The step is shrunk so that an integer number of steps lands on `t_end`.
pub fn evolve_reference(
    model: &SelectionModel,
    z0: f64,
    q0: f64,
    p0: f64,
    lambda0: f64,
    t_end: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if !(dt > 0.0 && t_end >= dt) {
        return Err(Error::Config(format!(
            "reference integration needs 0 < dt <= t_end, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let h = t_end / steps as f64;
    let axpy = |y: [f64; 4], k: [f64; 4], c: f64| -> [f64; 4] {
        [y[0] + c * k[0], y[1] + c * k[1], y[2] + c * k[2], y[3] + c * k[3]]
    };

    let mut y = [z0, lambda0, q0, p0];
    let mut traj = ReferenceTrajectory {
        times: Vec::with_capacity(steps + 1),
        z_star: Vec::with_capacity(steps + 1),
        lambda: Vec::with_capacity(steps + 1),
        q_star: Vec::with_capacity(steps + 1),
        p_star: Vec::with_capacity(steps + 1),
        rates: Vec::with_capacity(steps + 1),
        dt: h,
    };
    traj.push(0.0, y, reference_rhs(model, y));
    for i in 0..steps {
        let k1 = reference_rhs(model, y);
        let k2 = reference_rhs(model, axpy(y, k1, 0.5 * h));
        let k3 = reference_rhs(model, axpy(y, k2, 0.5 * h));
        let k4 = reference_rhs(model, axpy(y, k3, h));
        let mut next = y;
        for j in 0..4 {
            next[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                last_valid_t: i as f64 * h,
            });
        }
        y = next;
        let t = if i + 1 == steps { t_end } else { (i + 1) as f64 * h };
        traj.push(t, y, reference_rhs(model, y));
    }
    Ok(traj)
}

impl ReferenceTrajectory {
    fn push(&mut self, t: f64, y: [f64; 4], rate: [f64; 4]) {
        self.times.push(t);
        self.z_star.push(y[0]);
        self.lambda.push(y[1]);
        self.q_star.push(y[2]);
        self.p_star.push(y[3]);
        self.rates.push(rate);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn z_star(&self) -> &[f64] {
        &self.z_star
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn q_star(&self) -> &[f64] {
        &self.q_star
    }

    pub fn p_star(&self) -> &[f64] {
        &self.p_star
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn sample(&self, i: usize) -> RefState {
        RefState {
            t: self.times[i],
            z_star: self.z_star[i],
            lambda: self.lambda[i],
            q_star: self.q_star[i],
            p_star: self.p_star[i],
        }
    }

    /// State at time `t` by cubic Hermite interpolation between samples,
    /// using the stored right-hand sides as slopes.
    pub fn state_at(&self, t: f64) -> Result<RefState> {
        let t_end = self.t_end();
        let slack = 1e-9 * self.dt;
        if !(t >= -slack && t <= t_end + slack) {
            return Err(Error::Range {
                t,
                t_min: 0.0,
                t_max: t_end,
            });
        }
        let t = t.clamp(0.0, t_end);
        let i = ((t / self.dt).floor() as usize).min(self.times.len() - 2);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        let a = self.sample(i).to_array();
        let b = self.sample(i + 1).to_array();
        let (da, db) = (self.rates[i], self.rates[i + 1]);
        let mut y = [0.0; 4];
        for j in 0..4 {
            y[j] = h00 * a[j] + h10 * h * da[j] + h01 * b[j] + h11 * h * db[j];
        }
        Ok(RefState::from_array(t, y))
    }

    /// Earliest `t0` after which `m''(z*(t)) > 0` on every later sample,
    /// with `mu0 = min m''(z*(t))` over those samples.
    pub fn local_convexity(&self, model: &SelectionModel) -> Option<(f64, f64)> {
        let curv: Vec<f64> = self.z_star.iter().map(|&z| model.derivative(z, 2)).collect();
        let start = match curv.iter().rposition(|&c| c <= 0.0) {
            None => 0,
            Some(i) if i + 1 < curv.len() => i + 1,
            Some(_) => return None,
        };
        let mu0 = curv[start..].iter().copied().fold(f64::INFINITY, f64::min);
        Some((self.times[start], mu0))
    }

    /// CSV with header `t,z_star,lambda,q_star,p_star`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,z_star,lambda,q_star,p_star")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.z_star[i], self.lambda[i], self.q_star[i], self.p_star[i]
            )?;
        }
        Ok(())
    }
}

/// A truncated evaluation of the dyadic series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    pub terms: usize,
    pub last_term: f64,
}

/// `sum_{k>=0} 2^k log M(z* + 2^{-k}(z - z*))` with `M` pre-expanded.
pub fn v_star_series(big_m: &NormalizedSelection, z: f64, tol: f64) -> Result<SeriesSum> {
    let d = z - big_m.z_star();
    let mut sum = 0.0;
    let mut scale = 1.0;
    let mut last = 0.0;
    let mut terms = 0;
    while terms < SERIES_MAX_TERMS {
        let dk = d / scale;
        let excess = big_m.excess(dk);
        if excess <= -1.0 || !excess.is_finite() {
            return Err(Error::Domain {
                z: big_m.z_star() + dk,
                value: 1.0 + excess,
            });
        }
        last = scale * excess.ln_1p();
        sum += last;
        terms += 1;
        scale *= 2.0;
        if terms >= SERIES_MIN_TERMS && last.abs() < tol {
            break;
        }
    }
    Ok(SeriesSum {
        value: sum,
        terms,
        last_term: last,
    })
}

/// `V*(z)` for the dominant trait `z_star`.
pub fn v_star(model: &SelectionModel, z_star: f64, z: f64, tol: f64) -> Result<f64> {
    v_star_series(&model.normalized_at(z_star), z, tol).map(|s| s.value)
}

/// `V*(z_star, ·)` sampled on a grid.
pub fn v_star_field(model: &SelectionModel, z_star: f64, g: &Grid, tol: f64) -> Result<Field> {
    let big_m = model.normalized_at(z_star);
    let values = g
        .points()
        .map(|z| v_star_series(&big_m, z, tol).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(Field::new(*g, values))
}

/// Finite-difference values of `∂²V*(z*)` and `∂³V*(z*)` next to their
/// closed forms `2 m''(z*)` and `(4/3) m'''(z*)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VStarIdentities {
    pub d2: f64,
    pub d3: f64,
    pub target2: f64,
    pub target3: f64,
    /// Relative error, absolute when the target vanishes.
    pub err2: f64,
    pub err3: f64,
}

pub fn check_vstar_identities(model: &SelectionModel, z_star: f64, h: f64) -> Result<VStarIdentities> {
    let big_m = model.normalized_at(z_star);
    // Run the series far enough that truncation is below round-off at the stencil points.
    let v = |z: f64| v_star_series(&big_m, z, 1e-30).map(|s| s.value).unwrap_or(f64::NAN);
    let d2 = richardson_derivative(v, z_star, 2, h)?;
    let d3 = richardson_derivative(v, z_star, 3, h)?;
    if !(d2.is_finite() && d3.is_finite()) {
        return Err(Error::Domain {
            z: z_star,
            value: f64::NAN,
        });
    }
    let target2 = 2.0 * model.derivative(z_star, 2);
    let target3 = 4.0 / 3.0 * model.derivative(z_star, 3);
    let err = |got: f64, want: f64| {
        if want == 0.0 {
            got.abs()
        } else {
            ((got - want) / want).abs()
        }
    };
    Ok(VStarIdentities {
        d2,
        d3,
        target2,
        target3,
        err2: err(d2, target2),
        err3: err(d3, target3),
    })
}

/// `U*(t, z) = p*(t) + q*(t)(z - z*(t)) + V*(t, z)`.
pub fn u_star(model: &SelectionModel, traj: &ReferenceTrajectory, t: f64, z: f64) -> Result<f64> {
    let r = traj.state_at(t)?;
    let v = v_star(model, r.z_star, z, SERIES_TOL)?;
    Ok(r.p_star + r.q_star * (z - r.z_star) + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_abs_diff_eq;

    fn quad() -> SelectionModel {
        SelectionModel::quadratic(1.0, 0.0).unwrap()
    }

    #[test]
    fn gradient_flow_on_quadratic() {
        let traj = evolve_reference(&quad(), 1.0, 0.0, 0.0, 0.0, 2.0, 1e-3).unwrap();
        for (t, z) in traj.times().iter().zip(traj.z_star()) {
            assert_abs_diff_eq!(*z, (-t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn correctors_at_the_optimum() {
        let traj = evolve_reference(&quad(), 0.0, 1.0, 0.0, 0.0, 1.0, 1e-3).unwrap();
        let end = traj.sample(traj.times().len() - 1);
        assert_abs_diff_eq!(end.q_star, (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(end.p_star, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.lambda, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn q_star_relaxes_to_skewness_ratio() {
        let dw = SelectionModel::double_well(1.0, 0.4, 0.0).unwrap();
        let z_loc = dw.local_minimum_near(1.0).unwrap();
        let traj = evolve_reference(&dw, z_loc, 0.0, 0.0, 0.0, 5.0, 1e-3).unwrap();
        let want = dw.derivative(z_loc, 3) / (2.0 * dw.derivative(z_loc, 2));
        let got = *traj.q_star().last().unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-8);
    }

    #[test]
    fn divergence_is_reported() {
        // Integrating with a huge step makes the gradient flow explode.
        let quartic = SelectionModel::new(
            crate::selection::ModelKind::Polynomial,
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
            0.0,
        )
        .unwrap();
        let err = evolve_reference(&quartic, 10.0, 0.0, 0.0, 0.0, 10.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let dw = SelectionModel::double_well(1.0, 0.3, 0.0).unwrap();
        let run = |dt: f64| evolve_reference(&dw, 0.4, 0.1, 0.0, 0.0, 1.0, dt).unwrap();
        let reference = run(0.01 / 4.0);
        let err = |traj: &ReferenceTrajectory| {
            let end = traj.sample(traj.times().len() - 1);
            let r = reference.sample(reference.times().len() - 1);
            (end.z_star - r.z_star)
                .abs()
                .max((end.q_star - r.q_star).abs())
                .max((end.p_star - r.p_star).abs())
        };
        let ratio = err(&run(0.04)) / err(&run(0.02));
        assert!((12.0..20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn hermite_interpolation_between_samples() {
        let traj = evolve_reference(&quad(), 1.0, 0.0, 0.0, 0.0, 2.0, 1e-2).unwrap();
        let r = traj.state_at(0.123_45).unwrap();
        assert_abs_diff_eq!(r.z_star, (-0.123_45f64).exp(), epsilon = 1e-9);
        assert!(matches!(traj.state_at(2.5), Err(Error::Range { .. })));
    }

    #[test]
    fn local_convexity_after_transient() {
        let dw = SelectionModel::double_well(1.0, 0.3, 0.0).unwrap();
        // start on the concave hump, flow into the right well
        let traj = evolve_reference(&dw, 0.3, 0.0, 0.0, 0.0, 4.0, 1e-3).unwrap();
        let (t0, mu0) = traj.local_convexity(&dw).unwrap();
        assert!(t0 > 0.0);
        assert!(mu0 > 0.0);
    }

    #[test]
    fn v_star_vanishes_at_z_star() {
        assert_eq!(v_star(&quad(), 0.3, 0.3, SERIES_TOL).unwrap(), 0.0);
    }

    #[test]
    fn v_star_quadratic_value() {
        // Independent partial-sum oracle, evaluated to convergence.
        let oracle: f64 = (0..80)
            .map(|k| 2f64.powi(k) * (2f64.powi(-2 * k - 1)).ln_1p())
            .sum();
        let got = v_star(&quad(), 0.0, 1.0, SERIES_TOL).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-11);
        assert_abs_diff_eq!(got, 0.888_8, epsilon = 1e-3);
    }

    #[test]
    fn v_star_solves_the_limit_problem() {
        let g = make_grid(-4.0, 4.0, 256).unwrap();
        for (model, zs) in [
            (quad(), 0.4),
            (SelectionModel::double_well(1.0, 0.3, 0.0).unwrap(), 0.95),
        ] {
            let big_m = model.normalized_at(zs);
            let mut worst = 0.0f64;
            for z in g.points().skip(3).take(g.len() - 6) {
                let zbar = 0.5 * (z + zs);
                let v = |x| v_star(&model, zs, x, SERIES_TOL).unwrap();
                let lhs = (v(z) - 2.0 * v(zbar) + v(zs)).exp();
                worst = worst.max((lhs - big_m.value(z)).abs());
            }
            assert!(worst < 1e-8, "{worst}");
        }
    }

    #[test]
    fn domain_error_when_m_turns_negative() {
        let deep = SelectionModel::double_well(1.0, 0.8, 0.0).unwrap();
        let z_loc = deep.local_minimum_near(1.0).unwrap();
        let err = v_star(&deep, z_loc, -1.2, SERIES_TOL).unwrap_err();
        assert!(matches!(err, Error::Domain { value, .. } if value <= 0.0));
    }

    #[test]
    fn identities_for_quadratic() {
        let r = check_vstar_identities(&quad(), 0.0, 1e-3).unwrap();
        assert!(r.err2 < 1e-6, "{r:?}");
        assert!(r.err3 < 1e-6, "{r:?}");
    }

    #[test]
    fn identities_for_double_well_minimum() {
        let dw = SelectionModel::double_well(1.0, 0.3, 0.0).unwrap();
        let z_opt = dw.local_minimum_near(-1.0).unwrap();
        let r = check_vstar_identities(&dw, z_opt, 1e-3).unwrap();
        assert!(r.err2 < 1e-5, "{r:?}");
        assert!(r.err3 < 1e-5, "{r:?}");
    }

    #[test]
    fn u_star_assembly() {
        let m = quad();
        let traj = evolve_reference(&m, 0.0, 1.0, 0.0, 0.0, 2.0, 1e-3).unwrap();
        let t = 1.0;
        let r = traj.state_at(t).unwrap();
        let u = u_star(&m, &traj, t, 1.0).unwrap();
        let v = v_star(&m, 0.0, 1.0, SERIES_TOL).unwrap();
        assert_abs_diff_eq!(u, t + (-t).exp() + v, epsilon = 1e-9);
        let affine = r.p_star + r.q_star * (1.0 - r.z_star);
        assert_abs_diff_eq!(u - affine, v, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn series_depends_only_on_offset(shift in -3.0f64..3.0, d in -4.0f64..4.0) {
                let a = SelectionModel::double_well(1.0, 0.2, 0.0).unwrap();
                let b = SelectionModel::new(
                    crate::selection::ModelKind::DoubleWell, vec![1.0, 0.2, 0.0], shift,
                ).unwrap();
                let zs = 0.97;
                let va = v_star(&a, zs, zs + d, SERIES_TOL).unwrap();
                let vb = v_star(&b, zs + shift, zs + shift + d, SERIES_TOL).unwrap();
                prop_assert!((va - vb).abs() < 1e-12 * (1.0 + va.abs()));
            }

            #[test]
            fn truncation_bounded_by_last_term(d in -8.0f64..8.0) {
                let m = SelectionModel::quadratic(1.0, 0.0).unwrap();
                let big_m = m.normalized_at(0.0);
                let partial = v_star_series(&big_m, d, SERIES_TOL).unwrap();
                let full = v_star_series(&big_m, d, 0.0).unwrap();
                prop_assert!((full.value - partial.value).abs() <= 2.0 * partial.last_term.abs() + 1e-15);
            }
        }
    }
}
