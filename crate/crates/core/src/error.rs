use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The plant violates |a_n*| - eps_n > 1 or has malformed coefficients.
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("parameter a_{index} = {value} lies outside [{lo}, {hi}]")]
    ParamOutOfBox {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// Quantizer input left [-1/2, 1/2]; the scaling law lost track of the output.
    #[error("quantizer saturated at step {step}: normalized input {value}")]
    Saturation { step: usize, value: f64 },

    #[error("symbol {symbol} outside alphabet of size {levels}")]
    SymbolOutOfRange { symbol: u64, levels: u64 },

    #[error("plant order {n} exceeds the dense model cap {cap}")]
    DimensionCap { n: usize, cap: usize },

    #[error("power iteration did not converge within {iterations} iterations")]
    IterationCap { iterations: usize },
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
