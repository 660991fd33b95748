use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient prehistory")]
    InsufficientPrehistory,
    #[error("singular mass matrix")]
    SingularMassMatrix,
    #[error("divergence at t = {0}")]
    Divergence(f64),
    #[error("insufficient samples for embedding")]
    InsufficientSamples,
    #[error("degenerate data: enrich trajectories")]
    Degenerate,
    #[error("rescale reduced coordinates")]
    IllConditioned,
    #[error("mixed-mode normal form not supported; fit polynomial model instead")]
    MixedMode,
    #[error("extrapolation not supported")]
    Extrapolation,
    #[error("no saddle pair")]
    NoSaddlePair,
    #[error("unbounded trajectory")]
    Unbounded,
    #[error("empty input")]
    Empty,
}

pub type Result<T> = std::result::Result<T, Error>;
