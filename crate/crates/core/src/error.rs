use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported derivative order {0}")]
    UnsupportedOrder(usize),

    #[error("degenerate density: total mass {0} is not positive")]
    DegenerateDensity(f64),

    #[error("quadrature node at z = {z} leaves the grid window [{z_min}, {z_max}]; pad the window by at least {padding}")]
    WindowOverflow {
        z: f64,
        z_min: f64,
        z_max: f64,
        padding: f64,
    },

    #[error("M(z) = {value} is not positive at z = {z}; the dyadic series for V* is undefined")]
    Domain { z: f64, value: f64 },

    #[error("non-finite state after t = {last_valid_t}")]
    Divergence { last_valid_t: f64 },

    #[error("time step {dt} exceeds the stability limit {dt_max}")]
    Stability { dt: f64, dt_max: f64 },

    #[error("time {t} outside the trajectory range [{t_min}, {t_max}]")]
    Range { t: f64, t_min: f64, t_max: f64 },

    #[error("insufficient support: {0}")]
    InsufficientSupport(String),

    #[error("affine part not removed: W(z*) = {value}, W'(z*) = {slope}")]
    PinningViolation { value: f64, slope: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
