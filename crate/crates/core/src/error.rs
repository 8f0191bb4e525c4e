use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input has dimension {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("coordinate {coord} = {value} lies outside [{lo}, {hi}]")]
    Domain { coord: usize, value: f64, lo: f64, hi: f64 },
    #[error("network {network}, layer {layer}: {msg}")]
    InvalidLayer { network: usize, layer: usize, msg: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("feature {feature} is constant ({value}); it cannot be min-max scaled")]
    DegenerateFeature { feature: usize, value: f64 },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model build failed: {0}")]
    Build(String),
    #[error("{0}")]
    Precondition(String),
    #[error("pattern enumeration refused: {free} free neurons exceed the cap of {cap}")]
    OracleCap { free: usize, cap: usize },
    #[error("linear program: {0}")]
    Lp(#[from] ennopt_lp::LpError),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
