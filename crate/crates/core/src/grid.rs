//! Uniform trait lattice, sampled fields, finite differences and the
//! weight `(1 + |z - z*|)^alpha` used by the weighted norms.

use std::io::Write;

use crate::error::{Error, Result};

/// Upper bound (exclusive) on the weight exponent: `2 - ln 3 / ln 2`.
pub const ALPHA_MAX: f64 = 2.0 - 1.584_962_500_721_156_3;

/// Uniform grid `z_i = z_min + i h`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    z_min: f64,
    z_max: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(z_min: f64, z_max: f64, n: usize) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite()) {
            return Err(Error::Config(format!(
                "grid bounds must be finite, got [{z_min}, {z_max}]"
            )));
        }
        if z_min >= z_max {
            return Err(Error::Config(format!(
                "empty grid interval [{z_min}, {z_max}]"
            )));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid point count must be a power of two >= 16, got {n}"
            )));
        }
        Ok(Grid {
            z_min,
            z_max,
            n,
            h: (z_max - z_min) / (n - 1) as f64,
        })
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.h
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.point(i))
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_min && z <= self.z_max
    }

    /// Index of the grid point closest to `z`, clamped to the grid.
    pub fn nearest_index(&self, z: f64) -> usize {
        let i = ((z - self.z_min) / self.h).round();
        i.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Points `lo..=hi` as a grid of their own; the count need not be a
    /// power of two.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Grid> {
        if hi >= self.n || hi < lo + 4 {
            return Err(Error::Config(format!(
                "invalid sub-grid {lo}..={hi} of a {}-point grid",
                self.n
            )));
        }
        Ok(Grid {
            z_min: self.point(lo),
            z_max: self.point(hi),
            n: hi - lo + 1,
            h: self.h,
        })
    }

    /// Sample `f` at every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(*self, self.points().map(f).collect())
    }
}

/// Convenience constructor mirroring [`Grid::new`].
pub fn make_grid(z_min: f64, z_max: f64, n: usize) -> Result<Grid> {
    Grid::new(z_min, z_max, n)
}

/// A real function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    /// Panics if `values.len() != grid.len()`.
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            grid.len(),
            "field length does not match its grid"
        );
        Field { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Field::new(grid, vec![0.0; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Rectangle-rule integral `h * sum(values)`.
    pub fn mass(&self) -> f64 {
        self.grid.h * self.values.iter().sum::<f64>()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(self.grid.point(i), v))
            .collect();
        Field::new(self.grid, values)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|_, v| c * v)
    }

    /// Cubic (4-point Lagrange) interpolation; `None` outside the grid.
    pub fn interpolate(&self, z: f64) -> Option<f64> {
        self.interpolate_with_derivative(z).map(|(v, _)| v)
    }

    /// Value and first derivative of the local cubic interpolant at `z`.
    pub fn interpolate_with_derivative(&self, z: f64) -> Option<(f64, f64)> {
        let g = &self.grid;
        if !g.contains(z) {
            return None;
        }
        let s = (z - g.z_min) / g.h;
        let base = (s.floor() as isize - 1).clamp(0, g.n as isize - 4) as usize;
        let t = s - base as f64;
        let y = &self.values[base..base + 4];
        // Lagrange basis on nodes 0,1,2,3 in local coordinate t.
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        let d0 = -((t - 2.0) * (t - 3.0) + (t - 1.0) * (t - 3.0) + (t - 1.0) * (t - 2.0)) / 6.0;
        let d1 = ((t - 2.0) * (t - 3.0) + t * (t - 3.0) + t * (t - 2.0)) / 2.0;
        let d2 = -((t - 1.0) * (t - 3.0) + t * (t - 3.0) + t * (t - 1.0)) / 2.0;
        let d3 = ((t - 1.0) * (t - 2.0) + t * (t - 2.0) + t * (t - 1.0)) / 6.0;
        let v = l0 * y[0] + l1 * y[1] + l2 * y[2] + l3 * y[3];
        let dv = (d0 * y[0] + d1 * y[1] + d2 * y[2] + d3 * y[3]) / g.h;
        Some((v, dv))
    }

    /// Value and first derivative of the local quintic interpolant through
    /// the six nearest points.
    pub fn quintic(&self, z: f64) -> Option<(f64, f64)> {
        const M: usize = 6;
        let g = &self.grid;
        if !g.contains(z) || g.n < M {
            return None;
        }
        let s = (z - g.z_min) / g.h;
        let base = (s.floor() as isize - 2).clamp(0, (g.n - M) as isize) as usize;
        let t = s - base as f64;
        let y = &self.values[base..base + M];
        let mut v = 0.0;
        let mut dv = 0.0;
        for j in 0..M {
            let xj = j as f64;
            let mut denom = 1.0;
            let mut num = 1.0;
            let mut dnum = 0.0;
            for k in (0..M).filter(|&k| k != j) {
                let xk = k as f64;
                denom *= xj - xk;
                dnum = dnum * (t - xk) + num;
                num *= t - xk;
            }
            v += y[j] * num / denom;
            dv += y[j] * dnum / denom;
        }
        Some((v, dv / g.h))
    }

    /// Restriction to the points `lo..=hi`.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Field> {
        let g = self.grid.slice(lo, hi)?;
        Ok(Field::new(g, self.values[lo..=hi].to_vec()))
    }

    /// CSV with header `z,value`, 17 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "z,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.grid.point(i), v)?;
        }
        Ok(())
    }
}

/// Finite-difference derivative of order `k` in {1, 2, 3}.
///
/// Second-order central stencils in the interior, second-order one-sided
/// stencils at the two ends.
pub fn derivative(f: &Field, k: usize) -> Result<Field> {
    let y = f.values();
    let n = y.len();
    let h = f.grid().spacing();
    let mut d = vec![0.0; n];
    match k {
        1 => {
            for i in 1..n - 1 {
                d[i] = (y[i + 1] - y[i - 1]) / (2.0 * h);
            }
            d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
            d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
        }
        2 => {
            let h2 = h * h;
            for i in 1..n - 1 {
                d[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h2;
            }
            d[0] = (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / h2;
            d[n - 1] = (2.0 * y[n - 1] - 5.0 * y[n - 2] + 4.0 * y[n - 3] - y[n - 4]) / h2;
        }
        3 => {
            let h3 = 2.0 * h * h * h;
            for i in 2..n - 2 {
                d[i] = (y[i + 2] - 2.0 * y[i + 1] + 2.0 * y[i - 1] - y[i - 2]) / h3;
            }
            const FWD: [f64; 5] = [-5.0, 18.0, -24.0, 14.0, -3.0];
            for i in 0..2 {
                d[i] = (0..5).map(|j| FWD[j] * y[i + j]).sum::<f64>() / h3;
                let r = n - 1 - i;
                d[r] = -(0..5).map(|j| FWD[j] * y[r - j]).sum::<f64>() / h3;
            }
        }
        _ => return Err(Error::UnsupportedOrder(k)),
    }
    Ok(Field::new(*f.grid(), d))
}

/// Weight `(1 + |z - z*|)^alpha` sampled on the grid.
pub fn weight_phi(g: &Grid, z_star: f64, alpha: f64) -> Result<Field> {
    check_alpha(alpha)?;
    Ok(g.sample(|z| phi(z, z_star, alpha)))
}

#[inline]
pub fn phi(z: f64, z_star: f64, alpha: f64) -> f64 {
    (1.0 + (z - z_star).abs()).powf(alpha)
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < ALPHA_MAX {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha = {alpha} is outside the admissible range (0, {ALPHA_MAX:.5})"
        )))
    }
}

/// Central difference of order `k <= 5` at `x`, one Richardson step on
/// `h` and `h/2` (fourth-order accurate).
pub fn richardson_derivative(f: impl Fn(f64) -> f64, x: f64, k: usize, h: f64) -> Result<f64> {
    let central = |h: f64| -> Result<f64> {
        let v = |j: f64| f(x + j * h);
        Ok(match k {
            0 => v(0.0),
            1 => (v(1.0) - v(-1.0)) / (2.0 * h),
            2 => (v(1.0) - 2.0 * v(0.0) + v(-1.0)) / (h * h),
            3 => (v(2.0) - 2.0 * v(1.0) + 2.0 * v(-1.0) - v(-2.0)) / (2.0 * h.powi(3)),
            4 => (v(2.0) - 4.0 * v(1.0) + 6.0 * v(0.0) - 4.0 * v(-1.0) + v(-2.0)) / h.powi(4),
            5 => {
                (v(3.0) - 4.0 * v(2.0) + 5.0 * v(1.0) - 5.0 * v(-1.0) + 4.0 * v(-2.0) - v(-3.0))
                    / (2.0 * h.powi(5))
            }
            _ => return Err(Error::UnsupportedOrder(k)),
        })
    };
    if k == 0 {
        return central(h);
    }
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quintic_is_exact_on_quintics() {
        let g = make_grid(-1.0, 2.0, 32).unwrap();
        let p = |z: f64| 1.0 - 2.0 * z + 0.5 * z.powi(3) - 0.25 * z.powi(5);
        let dp = |z: f64| -2.0 + 1.5 * z * z - 1.25 * z.powi(4);
        let f = g.sample(p);
        for z in [-1.0, -0.987, 0.3333, 1.5, 1.999, 2.0] {
            let (v, d) = f.quintic(z).unwrap();
            assert!((v - p(z)).abs() < 1e-12);
            assert!((d - dp(z)).abs() < 1e-10);
        }
        assert!(f.quintic(2.1).is_none());
    }

    #[test]
    fn slices_keep_spacing_and_values() {
        let g = make_grid(0.0, 1.0, 64).unwrap();
        let f = g.sample(|z| z * z);
        let w = f.slice(10, 30).unwrap();
        assert_eq!(w.grid().len(), 21);
        assert_eq!(w.grid().spacing(), g.spacing());
        assert_eq!(w.grid().point(5), g.point(15));
        assert_eq!(w.values()[5], f.values()[15]);
        assert!(g.slice(10, 12).is_err());
        assert!(g.slice(10, 64).is_err());
    }

    #[test]
    fn grid_spacing_is_exact() {
        let g = make_grid(-8.0, 8.0, 1024).unwrap();
        assert_eq!(g.spacing(), 16.0 / 1023.0);
        let g = make_grid(0.0, 1.0, 16).unwrap();
        assert_eq!(g.point(0), 0.0);
        assert_abs_diff_eq!(g.point(15), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.point(1), 1.0 / 15.0, epsilon = 1e-15);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(make_grid(1.0, 1.0, 64), Err(Error::Config(_))));
        assert!(make_grid(0.0, 1.0, 100).is_err());
        assert!(make_grid(0.0, 1.0, 8).is_err());
        assert!(make_grid(2.0, 1.0, 64).is_err());
    }

    #[test]
    fn second_derivative_of_square() {
        let g = make_grid(-3.0, 2.0, 64).unwrap();
        let f = g.sample(|z| z * z);
        let d2 = derivative(&f, 2).unwrap();
        for v in d2.values() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivatives_of_constant_vanish() {
        let g = make_grid(0.0, 1.0, 32).unwrap();
        let f = g.sample(|_| 3.5);
        for k in 1..=3 {
            let d = derivative(&f, k).unwrap();
            assert!(d.values().iter().all(|v| v.abs() < 1e-9));
        }
        assert!(matches!(derivative(&f, 4), Err(Error::UnsupportedOrder(4))));
    }

    #[test]
    fn first_derivative_of_sine_is_second_order() {
        let errs: Vec<f64> = [128usize, 256, 512]
            .iter()
            .map(|&n| {
                let g = make_grid(0.0, 3.0, n).unwrap();
                let d = derivative(&g.sample(f64::sin), 1).unwrap();
                (3..n - 3)
                    .map(|i| (d.values()[i] - g.point(i).cos()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn boundary_stencils_are_second_order() {
        for k in 1..=3 {
            let err = |n: usize| {
                let g = make_grid(0.0, 1.0, n).unwrap();
                let d = derivative(&g.sample(f64::exp), k).unwrap();
                let e = 1f64.exp();
                (d.values()[0] - 1.0).abs().max((d.values()[n - 1] - e).abs())
            };
            let ratio = err(128) / err(256);
            assert!((3.0..5.0).contains(&ratio), "k={k} ratio {ratio}");
        }
    }

    #[test]
    fn repeated_first_derivative_matches_second() {
        let g = make_grid(-2.0, 2.0, 512).unwrap();
        let f = g.sample(|z| (z * 1.3).sin() + z * z * z / 5.0);
        let dd = derivative(&derivative(&f, 1).unwrap(), 1).unwrap();
        let d2 = derivative(&f, 2).unwrap();
        let h2 = g.spacing().powi(2);
        for i in 3..g.len() - 3 {
            assert!((dd.values()[i] - d2.values()[i]).abs() < 2.0 * h2);
        }
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let g = make_grid(-1.0, 1.0, 16).unwrap();
        let f = g.sample(|z| 1.0 - 2.0 * z + 0.5 * z * z * z);
        for &x in &[-1.0, -0.93, 0.0, 0.31, 0.999, 1.0] {
            let (v, d) = f.interpolate_with_derivative(x).unwrap();
            assert_abs_diff_eq!(v, 1.0 - 2.0 * x + 0.5 * x * x * x, epsilon = 1e-13);
            assert_abs_diff_eq!(d, -2.0 + 1.5 * x * x, epsilon = 1e-12);
        }
        assert!(f.interpolate(1.01).is_none());
    }

    #[test]
    fn weight_phi_values() {
        let g = make_grid(-2.0, 2.0, 64).unwrap();
        assert!(weight_phi(&g, 0.0, 0.5).is_err());
        assert!(weight_phi(&g, 0.0, 0.0).is_err());
        let w = weight_phi(&g, g.point(10), 0.4).unwrap();
        assert_eq!(w.values()[10], 1.0);
        assert!(w.values().iter().all(|&v| v >= 1.0));
        assert_abs_diff_eq!(phi(1.0, 0.0, 0.4), 2f64.powf(0.4), epsilon = 1e-15);
    }

    #[test]
    fn richardson_on_polynomial() {
        let f = |x: f64| x.powi(5) - 2.0 * x * x;
        assert_abs_diff_eq!(richardson_derivative(f, 1.0, 1, 1e-2).unwrap(), 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(richardson_derivative(f, 1.0, 3, 1e-2).unwrap(), 60.0, epsilon = 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn midpoint_weight_ratio_is_bounded(
                z in -50.0f64..50.0,
                z_star in -5.0f64..5.0,
                alpha in 0.01f64..0.415,
            ) {
                let zbar = 0.5 * (z + z_star);
                let ratio = phi(z, z_star, alpha) / phi(zbar, z_star, alpha);
                prop_assert!(ratio <= 2f64.powf(alpha) * (1.0 + 1e-14));
            }
        }
    }
}
