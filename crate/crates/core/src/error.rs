use thiserror::Error;

/// Errors raised by the numerical pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature order {requested} exceeds the maximum supported order {max}")]
    OrderTooHigh { requested: usize, max: usize },

    #[error("time {t} lies outside the source validity window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("causality guard: source queried at t = {requested} but only data up to t = {limit} may be used")]
    Causality { requested: f64, limit: f64 },

    #[error("particle {0} has a non-finite state")]
    NonFinite(usize),

    #[error("slab {slab} did not converge after {iterations} Picard iterations (last contraction factor {contraction:.3e}); try a shorter slab")]
    NoConvergence {
        slab: usize,
        iterations: usize,
        contraction: f64,
    },

    #[error("quadrature cannot resolve the integration domain: {0}")]
    Resolution(String),

    #[error("extrapolation did not converge: {0}")]
    Extrapolation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
