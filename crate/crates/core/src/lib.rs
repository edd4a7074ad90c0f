//! Numerical toolkit for the infinitesimal model of quantitative genetics
//! in the regime of small segregational variance.

pub mod cli;
pub mod error;
pub mod grid;
pub mod harness;
pub mod operator;
pub mod profiles;
pub mod selection;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{make_grid, Field, Grid};
