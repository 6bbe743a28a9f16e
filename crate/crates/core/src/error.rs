//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point (t={t}, x={x}) lies on or outside the backward light cone |x| < T-t with T={t_max}")]
    OutsideCone { t: f64, x: f64, t_max: f64 },

    #[error("point (t={t}, x={x}) lies outside the cone domain (t in [0,{t_bar}], x in [0, delta*(T-t)])")]
    OutsideDomain { t: f64, x: f64, t_bar: f64 },

    #[error("state left the timelike regime (1 - u_t^2 + u_x^2 <= 0) near x={x}")]
    NonTimelike { x: f64 },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("time step {dt} exceeds the CFL bound {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("grid too coarse: operation needs {required} nodes, have {available}")]
    Resolution { required: usize, available: usize },

    #[error("singular linear system: pivot {pivot:e} in row {row}")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("iteration diverged: norm {norm:e} exceeded bound {bound:e}")]
    Diverged { norm: f64, bound: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
