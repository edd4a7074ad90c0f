//! The infinitesimal mixing operator, the residual functional `I_eps`
//! and the linearized operator `T`.

pub mod quadrature;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{richardson_derivative, Field, Grid};
use crate::selection::SelectionModel;

pub use quadrature::{QuadratureRule1D, QuadratureRule2D, DEFAULT_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    Direct,
    #[default]
    Fft,
}

impl Backend {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(Backend::Direct),
            "fft" => Some(Backend::Fft),
            _ => None,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Direct => "direct",
            Backend::Fft => "fft",
        })
    }
}

/// Anything that maps a density to its offspring density.
pub trait Mixing: Sync {
    fn apply(&self, f: &Field) -> Result<Field>;
}

/// `B_eps` bound to a grid, with its kernel (and FFT plan) precomputed.
///
/// The double integral reduces to a one-dimensional one: the parental
/// midpoint `w = (z1 + z2)/2` has density `2 (f*f)(2w) / |f|`, and the
/// offspring are spread around `w` by a Gaussian of variance `eps²/2`.
/// On a uniform grid the midpoints live on the half-spacing lattice
/// `z_min + k h/2`, `k = 0..2n-1`, so both stages are discrete
/// convolutions indexed by `k`.
pub struct MixingOperator {
    grid: Grid,
    eps: f64,
    backend: Backend,
    /// `G(j h/2)` for `j = 0..=kernel_len`, Gaussian of variance `eps²/2`.
    kernel: Vec<f64>,
    fft: Option<FftPlan>,
}

struct FftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
}

impl fmt::Debug for MixingOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MixingOperator")
            .field("grid", &self.grid)
            .field("eps", &self.eps)
            .field("backend", &self.backend)
            .finish()
    }
}

impl MixingOperator {
    pub fn new(grid: Grid, eps: f64, backend: Backend) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        let n = grid.len();
        let half = 0.5 * grid.spacing();
        let norm = 1.0 / (eps * PI.sqrt());
        let kernel: Vec<f64> = (0..=2 * n - 2)
            .map(|j| {
                let x = j as f64 * half / eps;
                norm * (-x * x).exp()
            })
            .collect();

        let fft = match backend {
            Backend::Direct => None,
            Backend::Fft => {
                let len = (4 * n).next_power_of_two();
                let mut planner = FftPlanner::new();
                let forward = planner.plan_fft_forward(len);
                let inverse = planner.plan_fft_inverse(len);
                let mut kernel_hat = vec![Complex::new(0.0, 0.0); len];
                kernel_hat[0].re = kernel[0];
                for j in 1..kernel.len() {
                    kernel_hat[j].re = kernel[j];
                    kernel_hat[len - j].re = kernel[j];
                }
                forward.process(&mut kernel_hat);
                Some(FftPlan {
                    len,
                    forward,
                    inverse,
                    kernel_hat,
                })
            }
        };
        Ok(MixingOperator {
            grid,
            eps,
            backend,
            kernel,
            fft,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Set when the grid does not resolve the offspring spread (`h > eps/4`).
    pub fn resolution_warning(&self) -> Option<String> {
        let h = self.grid.spacing();
        (h > self.eps / 4.0).then(|| {
            format!(
                "grid spacing {h:.4e} exceeds eps/4 = {:.4e}; the mixing operator is under-resolved",
                self.eps / 4.0
            )
        })
    }

    fn check_input(&self, f: &Field) -> Result<f64> {
        if f.grid() != &self.grid {
            return Err(Error::Config("field lives on a different grid than the operator".into()));
        }
        let mass = f.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::DegenerateDensity(mass));
        }
        Ok(mass)
    }

    fn apply_direct(&self, f: &Field) -> Result<Field> {
        let mass = self.check_input(f)?;
        let n = f.values().len();
        let h = self.grid.spacing();
        let y = truncate_tail(f.values());

        let mut midpoint = vec![0.0; 2 * n - 1];
        for (i, &fi) in y.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            for (acc, &fj) in midpoint[i..i + n].iter_mut().zip(&y) {
                *acc += fi * fj;
            }
        }
        let to_density = 2.0 * h / mass;
        midpoint.iter_mut().for_each(|v| *v *= to_density);
        let midpoint = truncate_tail(&midpoint);

        let cut = TAIL_CUTOFF * self.kernel[0];
        let reach = self.kernel.iter().rposition(|&g| g > cut).unwrap_or(0);
        // sym[reach + j] = G(j h/2) for j in -reach..=reach.
        let sym: Vec<f64> = (0..=2 * reach).map(|j| self.kernel[j.abs_diff(reach)]).collect();
        let last = 2 * n - 2;
        let out = (0..n)
            .map(|i| {
                let c = 2 * i;
                let lo = c.saturating_sub(reach);
                let hi = (c + reach).min(last);
                let ker = &sym[lo + reach - c..=hi + reach - c];
                0.5 * h * dot(ker, &midpoint[lo..=hi])
            })
            .collect();
        Ok(Field::new(self.grid, out))
    }

    fn apply_fft(&self, f: &Field, plan: &FftPlan) -> Result<Field> {
        let mass = self.check_input(f)?;
        let n = self.grid.len();
        let h = self.grid.spacing();
        let mut buf = vec![Complex::new(0.0, 0.0); plan.len];
        for (b, &v) in buf.iter_mut().zip(f.values()) {
            b.re = v;
        }
        plan.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&plan.kernel_hat) {
            *b = *b * *b * *k;
        }
        plan.inverse.process(&mut buf);
        let scale = 0.5 * h * (2.0 * h / mass) / plan.len as f64;
        let out = (0..n).map(|i| scale * buf[2 * i].re).collect();
        Ok(Field::new(self.grid, out))
    }
}

impl Mixing for MixingOperator {
    fn apply(&self, f: &Field) -> Result<Field> {
        match &self.fft {
            Some(plan) => self.apply_fft(f, plan),
            None => self.apply_direct(f),
        }
    }
}

/// Relative level below which the direct backend treats samples as zero.
///
/// Products of two retained samples then stay in the normal floating-point
/// range; subnormal arithmetic is orders of magnitude slower.
pub const TAIL_CUTOFF: f64 = 1e-150;

fn truncate_tail(v: &[f64]) -> Vec<f64> {
    let cut = TAIL_CUTOFF * v.iter().copied().fold(0.0, f64::max);
    v.iter().map(|&x| if x > cut { x } else { 0.0 }).collect()
}

/// Dot product with eight independent partial sums, which lets the
/// compiler vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

/// `B_eps(f)` together with an optional under-resolution warning.
#[derive(Debug, Clone)]
pub struct MixingOutput {
    pub field: Field,
    pub warning: Option<String>,
}

fn apply_once(f: &Field, eps: f64, backend: Backend) -> Result<MixingOutput> {
    let op = MixingOperator::new(*f.grid(), eps, backend)?;
    let field = op.apply(f)?;
    Ok(MixingOutput {
        field,
        warning: op.resolution_warning(),
    })
}

/// `B_eps(f)` by direct `O(n²)` summation.
pub fn apply_b_direct(f: &Field, eps: f64) -> Result<MixingOutput> {
    apply_once(f, eps, Backend::Direct)
}

/// `B_eps(f)` through zero-padded FFT convolutions.
pub fn apply_b_fft(f: &Field, eps: f64) -> Result<MixingOutput> {
    apply_once(f, eps, Backend::Fft)
}

/// Quadrature rules for evaluating `I_eps`.
#[derive(Debug, Clone)]
pub struct ResidualQuadrature {
    pub rule2: QuadratureRule2D,
    pub rule1: QuadratureRule1D,
}

impl ResidualQuadrature {
    pub fn new(order: usize) -> Result<Self> {
        Ok(ResidualQuadrature {
            rule2: QuadratureRule2D::new(order)?,
            rule1: QuadratureRule1D::new(order)?,
        })
    }
}

/// `I_eps` for `U = q (z - z*) + V`, with `V` interpolated from a field.
///
/// Numerator and denominator are both expectations under normalized
/// Gaussian laws; the normalizing constants coincide and cancel.
pub fn eval_i_eps(
    q: f64,
    v: &Field,
    eps: f64,
    z_star: f64,
    z: f64,
    quad: &ResidualQuadrature,
) -> Result<f64> {
    let g = v.grid();
    let zbar = 0.5 * (z + z_star);
    let reach = eps * quad.rule2.max_abs_node().max(
        quad.rule1.nodes.iter().map(|y| y.abs()).fold(0.0, f64::max),
    );
    let lo = (zbar - reach).min(z_star - reach);
    let hi = (zbar + reach).max(z_star + reach);
    if lo < g.z_min() || hi > g.z_max() {
        let (bad, padding) = if lo < g.z_min() {
            (lo, g.z_min() - lo)
        } else {
            (hi, hi - g.z_max())
        };
        return Err(Error::WindowOverflow {
            z: bad,
            z_min: g.z_min(),
            z_max: g.z_max(),
            padding: padding.max(hi - g.z_max()).max(g.z_min() - lo),
        });
    }
    let u = |x: f64| q * (x - z_star) + v.interpolate(x).expect("checked against the window");
    let u_bar = u(zbar);
    let u_star = u(z_star);
    let num = quad
        .rule2
        .expectation(|y1, y2| (2.0 * u_bar - u(zbar + eps * y1) - u(zbar + eps * y2)).exp());
    let den = quad.rule1.expectation(|y| (u_star - u(z_star + eps * y)).exp());
    Ok(num / den)
}

/// `T(R)(z) = M(z) (2 R(z̄) - R(z) - R(z*))` on a grid, midpoints by
/// cubic interpolation.
///
/// The minus sign on `R(z*)` is the one that makes affine functions the
/// kernel of `T`.
pub fn apply_t(r: &Field, model: &SelectionModel, z_star: f64) -> Result<Field> {
    let g = r.grid();
    let r_star = r.interpolate(z_star).ok_or_else(|| {
        Error::Config(format!("z* = {z_star} lies outside the grid of the field"))
    })?;
    let big_m = model.normalized_at(z_star);
    let values = g
        .points()
        .zip(r.values())
        .map(|(z, &rz)| {
            let r_bar = r.interpolate(0.5 * (z + z_star)).expect("midpoint inside the grid");
            big_m.value(z) * (2.0 * r_bar - rz - r_star)
        })
        .collect();
    Ok(Field::new(*g, values))
}

/// `T` acting on an analytic function.
pub fn t_closure<'a>(
    r: impl Fn(f64) -> f64 + 'a,
    model: &SelectionModel,
    z_star: f64,
) -> impl Fn(f64) -> f64 + 'a {
    let big_m = model.normalized_at(z_star);
    let r_star = r(z_star);
    move |z| big_m.value(z) * (2.0 * r(0.5 * (z + z_star)) - r(z) - r_star)
}

/// `(1/k!) ∂^k [T((· - z*)^k)](z*)`, the eigenvalue dual to `δ^{(k)}_{z*}`.
pub fn spectral_check_t(model: &SelectionModel, z_star: f64, k: usize) -> Result<f64> {
    if k > 3 {
        return Err(Error::UnsupportedOrder(k));
    }
    let tr = t_closure(move |z: f64| (z - z_star).powi(k as i32), model, z_star);
    let fact: f64 = (1..=k).map(|j| j as f64).product();
    Ok(richardson_derivative(tr, z_star, k, 1e-3)? / fact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::profiles::{v_star_field, SERIES_TOL};
    use approx::assert_abs_diff_eq;

    fn gaussian(g: &Grid, mu: f64, var: f64, mass: f64) -> Field {
        g.sample(|z| mass * (-(z - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt())
    }

    fn moments(f: &Field) -> (f64, f64, f64) {
        let h = f.grid().spacing();
        let m0 = f.mass();
        let m1: f64 = f.grid().points().zip(f.values()).map(|(z, v)| z * v).sum::<f64>() * h / m0;
        let m2: f64 = f
            .grid()
            .points()
            .zip(f.values())
            .map(|(z, v)| (z - m1).powi(2) * v)
            .sum::<f64>()
            * h
            / m0;
        (m0, m1, m2)
    }

    fn rel_linf(a: &Field, b: &Field) -> f64 {
        let diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        diff / b.values().iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_variance_map() {
        let eps = 0.1;
        let g = make_grid(-3.0, 3.0, 1024).unwrap();
        let sigma2 = 0.09;
        let f = gaussian(&g, 0.3, sigma2, 1.0);
        for backend in [Backend::Direct, Backend::Fft] {
            let out = apply_once(&f, eps, backend).unwrap();
            assert!(out.warning.is_none());
            let expected = gaussian(&g, 0.3, sigma2 / 2.0 + eps * eps / 2.0, 1.0);
            let err = rel_linf(&out.field, &expected);
            assert!(err < 1e-9, "{backend}: {err:e}");
        }
    }

    #[test]
    fn direct_backend_is_relatively_accurate_in_the_tails() {
        let eps = 0.05;
        let g = make_grid(-2.0, 2.0, 1024).unwrap();
        let f = gaussian(&g, 0.1, eps * eps, 1.0);
        let out = apply_b_direct(&f, eps).unwrap().field;
        let top = f.max();
        let mut checked = 0;
        for (a, b) in out.values().iter().zip(f.values()) {
            if *b > 1e-100 * top {
                assert!((a - b).abs() <= 1e-9 * b, "{a:e} vs {b:e}");
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn gaussian_fixed_point() {
        let eps = 0.1;
        let g = make_grid(-1.5, 1.5, 512).unwrap();
        let f = gaussian(&g, 0.1, eps * eps, 1.0);
        let direct = apply_b_direct(&f, eps).unwrap().field;
        let fft = apply_b_fft(&f, eps).unwrap().field;
        assert!(rel_linf(&direct, &f) < 1e-9);
        assert!(rel_linf(&fft, &direct) < 1e-8);
    }

    #[test]
    fn mass_preserved_for_bimodal() {
        let eps = 0.1;
        let g = make_grid(-3.0, 3.0, 1024).unwrap();
        let f = g.sample(|z| {
            0.7 * (-(z + 1.0).powi(2) / 0.02).exp() + 2.3 * (-(z - 0.8).powi(2) / 0.1).exp()
        });
        let direct = apply_b_direct(&f, eps).unwrap().field;
        let fft = apply_b_fft(&f, eps).unwrap().field;
        assert!((direct.mass() - f.mass()).abs() < 1e-10 * f.mass());
        assert!((fft.mass() - f.mass()).abs() < 1e-10 * f.mass());
        assert!(rel_linf(&fft, &direct) < 1e-8);
        assert!(fft.min() >= -1e-12 * fft.max());
    }

    #[test]
    fn narrow_input_spreads_to_half_sum_variance() {
        let eps = 0.2;
        let sigma = eps / 8.0;
        let g = make_grid(-1.0, 1.0, 2048).unwrap();
        let f = gaussian(&g, 0.0, sigma * sigma, 1.0);
        let out = apply_b_fft(&f, eps).unwrap().field;
        let (_, mean, var) = moments(&out);
        assert!(mean.abs() < 1e-12);
        assert_abs_diff_eq!(var, 0.5 * (eps * eps + sigma * sigma), epsilon = 1e-9);
    }

    #[test]
    fn degenerate_mass_is_rejected() {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let err = apply_b_direct(&Field::zeros(g), 0.1).unwrap_err();
        assert!(matches!(err, Error::DegenerateDensity(_)));
    }

    #[test]
    fn under_resolution_warns() {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let f = gaussian(&g, 0.0, 0.01, 1.0);
        let out = apply_b_direct(&f, 0.05).unwrap();
        assert!(out.warning.is_some());
    }

    #[test]
    fn translation_equivariance() {
        let eps = 0.1;
        let g = make_grid(-2.0, 2.0, 512).unwrap();
        let shape = |z: f64| (-(z - 0.2).powi(2) / 0.03).exp() + 0.5 * (-(z + 0.4).powi(2) / 0.01).exp();
        let f = g.sample(shape);
        let shifted = g.sample(|z| shape(z - g.spacing()));
        let op = MixingOperator::new(g, eps, Backend::Fft).unwrap();
        let a = op.apply(&f).unwrap();
        let b = op.apply(&shifted).unwrap();
        let scale = a.max();
        for i in 50..g.len() - 50 {
            assert!((b.values()[i + 1] - a.values()[i]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn variance_contracts_by_half() {
        let eps = 0.1;
        let g = make_grid(-2.0, 2.0, 1024).unwrap();
        let op = MixingOperator::new(g, eps, Backend::Fft).unwrap();
        let mut f = gaussian(&g, 0.0, 4.0 * eps * eps, 1.0);
        let mut excess = 3.0 * eps * eps;
        for _ in 0..6 {
            f = op.apply(&f).unwrap();
            let (_, _, var) = moments(&f);
            let next = var - eps * eps;
            assert_abs_diff_eq!(next / excess, 0.5, epsilon = 1e-6);
            excess = next;
        }
    }

    #[test]
    fn i_eps_of_zero_profile_is_one() {
        let quad = ResidualQuadrature::new(DEFAULT_ORDER).unwrap();
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let v = Field::zeros(g);
        for eps in [0.5, 0.1, 0.01] {
            let i = eval_i_eps(0.0, &v, eps, 0.0, 1.0, &quad).unwrap();
            assert_abs_diff_eq!(i, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn i_eps_ignores_affine_and_constant_parts() {
        let quad = ResidualQuadrature::new(DEFAULT_ORDER).unwrap();
        let g = make_grid(-10.0, 10.0, 2048).unwrap();
        let model = SelectionModel::quadratic(1.0, 0.0).unwrap();
        let v = v_star_field(&model, 0.0, &g, SERIES_TOL).unwrap();
        let shifted = v.map(|_, x| x + 3.7);
        let a = eval_i_eps(0.4, &v, 0.2, 0.0, 1.3, &quad).unwrap();
        let b = eval_i_eps(0.4, &shifted, 0.2, 0.0, 1.3, &quad).unwrap();
        assert!((a - b).abs() < 1e-12);
        // The slope only cancels exactly when V vanishes: both Gaussian
        // laws give (y1 + y2) and y the same unit variance.
        let zero = Field::zeros(g);
        let c = eval_i_eps(0.4, &zero, 0.2, 0.0, 1.3, &quad).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn i_eps_window_overflow() {
        let quad = ResidualQuadrature::new(DEFAULT_ORDER).unwrap();
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let err = eval_i_eps(0.0, &Field::zeros(g), 0.3, 0.0, 0.5, &quad).unwrap_err();
        assert!(matches!(err, Error::WindowOverflow { padding, .. } if padding > 0.0));
    }

    #[test]
    fn t_kills_affine_functions() {
        let model = SelectionModel::double_well(1.0, 0.3, 0.0).unwrap();
        let g = make_grid(-2.0, 2.0, 256).unwrap();
        let zs = 0.7;
        for r in [g.sample(|_| 2.5), g.sample(|z| 1.7 * (z - zs))] {
            let t = apply_t(&r, &model, zs).unwrap();
            assert!(t.values().iter().all(|v| v.abs() < 1e-11));
        }
    }

    #[test]
    fn t_on_square_has_eigenvalue_minus_half() {
        let model = SelectionModel::quadratic(1.0, 0.0).unwrap();
        let g = make_grid(-2.0, 2.0, 1024).unwrap();
        let zs = g.point(600);
        let r = g.sample(|z| (z - zs).powi(2));
        let t = apply_t(&r, &model, zs).unwrap();
        let d2 = crate::grid::derivative(&t, 2).unwrap();
        assert_abs_diff_eq!(d2.values()[600], -1.0, epsilon = 1e-4);
    }

    #[test]
    fn spectral_table() {
        let model = SelectionModel::double_well(1.0, 0.3, 0.0).unwrap();
        for zs in [0.0, 0.95] {
            for k in 0..=3 {
                let want = if k == 0 { 0.0 } else { 2f64.powi(1 - k as i32) - 1.0 };
                let got = spectral_check_t(&model, zs, k).unwrap();
                assert!((got - want).abs() < 1e-6, "k={k}: {got}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn mass_conservation(
                a in 0.01f64..5.0, b in 0.0f64..5.0,
                mu1 in -1.0f64..0.0, mu2 in 0.0f64..1.0,
                w1 in 0.05f64..0.3, w2 in 0.05f64..0.3,
            ) {
                let g = make_grid(-3.0, 3.0, 512).unwrap();
                let f = g.sample(|z| {
                    a * (-(z - mu1).powi(2) / (2.0 * w1 * w1)).exp()
                        + b * (-(z - mu2).powi(2) / (2.0 * w2 * w2)).exp()
                });
                for backend in [Backend::Direct, Backend::Fft] {
                    let out = apply_once(&f, 0.1, backend).unwrap().field;
                    prop_assert!((out.mass() - f.mass()).abs() <= 1e-10 * f.mass());
                }
            }
        }
    }
}
