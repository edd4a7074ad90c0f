//! Gauss–Hermite rules for the Gaussian weights appearing in the residual
//! functional.
//!
//! The two-dimensional weight is `exp(-Q)` with
//! `Q(y1, y2) = y1 y2 / 2 + 3 (y1² + y2²) / 4`. The rotation
//! `u = (y1 + y2)/√2`, `v = (y1 - y2)/√2` diagonalizes it to `u² + v²/2`,
//! so a tensor rule in `(u, v)` mapped back to `(y1, y2)` is exact for
//! polynomials against this weight.

use std::f64::consts::{PI, SQRT_2};
use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 40;

/// Nodes and weights against `exp(-y²/2)`, weights normalized to sum 1.
#[derive(Debug, Clone)]
pub struct QuadratureRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule1D {
    pub fn new(order: usize) -> Result<Self> {
        let gh = hermite(order)?;
        let (nodes, weights) = gh
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (SQRT_2 * x, w / PI.sqrt()))
            .unzip();
        Ok(QuadratureRule1D { nodes, weights })
    }

    /// Expectation of `f` under the standard normal law.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&y, &w)| w * f(y))
            .sum()
    }
}

/// Tensor rule in `(y1, y2)` against `exp(-Q)`, weights normalized to sum 1
/// (i.e. divided by `√2 π`).
#[derive(Debug, Clone)]
pub struct QuadratureRule2D {
    pub nodes: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule2D {
    pub fn new(order: usize) -> Result<Self> {
        let gh = hermite(order)?;
        // u-axis weight exp(-u²): nodes x, weights w / √π.
        // v-axis weight exp(-v²/2): nodes √2 x, weights w / √π.
        let mut nodes = Vec::with_capacity(order * order);
        let mut weights = Vec::with_capacity(order * order);
        let pairs = gh.as_node_weight_pairs();
        for &(xu, wu) in pairs {
            for &(xv, wv) in pairs {
                let u = xu;
                let v = SQRT_2 * xv;
                nodes.push(((u + v) / SQRT_2, (u - v) / SQRT_2));
                weights.push(wu * wv / PI);
            }
        }
        Ok(QuadratureRule2D {
            nodes,
            weights,
            order,
        })
    }

    /// Expectation of `f` under the normalized `exp(-Q)` law.
    pub fn expectation(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&(a, b), &w)| w * f(a, b))
            .sum()
    }

    /// Largest `|y1|` or `|y2|` over the nodes.
    pub fn max_abs_node(&self) -> f64 {
        self.nodes
            .iter()
            .map(|&(a, b)| a.abs().max(b.abs()))
            .fold(0.0, f64::max)
    }
}

fn hermite(order: usize) -> Result<GaussHermite> {
    let deg = NonZeroUsize::new(order)
        .ok_or_else(|| Error::Config("quadrature order must be positive".into()))?;
    Ok(GaussHermite::new(deg))
}
