use thiserror::Error;

/// Errors surfaced by the numerical engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown built-in model `{0}`")]
    UnknownModel(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite coefficient value at t={t}, x={x:?}")]
    NonFiniteCoefficient { t: f64, x: Vec<f64> },
    #[error("time interval must satisfy 0 <= t < s <= 1, got t={t}, s={s}")]
    BadTimeInterval { t: f64, s: f64 },
    #[error("chain index out of range: i={i}, j={j}, n={n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("covariance matrix is not positive definite (ellipticity violation)")]
    NotPositiveDefinite,
    #[error("grid too coarse: spacing {h} exceeds {max} required to resolve the innovation scale")]
    GridTooCoarse { h: f64, max: f64 },
    #[error("grid densities are supported for d <= 2, got d={0}")]
    DimensionTooLarge(usize),
    #[error("mass deficit {deficit:.4} exceeds tolerance {tol} at step {step}; widen the grid")]
    MassDeficit { deficit: f64, tol: f64, step: usize },
    #[error("derivative order |nu| = {0} exceeds 4")]
    DerivativeOrderTooLarge(usize),
    #[error("series truncation order {0} exceeds 4 (cost grows geometrically)")]
    SeriesOrderTooLarge(usize),
    #[error("discrete series order R={r} exceeds the step count j-i={gap}")]
    SeriesOrderExceedsSteps { r: usize, gap: usize },
    #[error("quadrature domain underflow: all mass outside the truncation radius")]
    QuadratureUnderflow,
    #[error("divergent tail-bound regime: term ratio stays >= 1")]
    DivergentTail,
    #[error("tail exponent S={s} must exceed {min} for d={d}")]
    TailExponentTooSmall { s: f64, min: f64, d: usize },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
