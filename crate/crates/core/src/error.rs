use thiserror::Error;

/// Errors surfaced by the verification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid sector at neuron {index}: alpha {alpha} > beta {beta}")]
    InvalidSector { index: usize, alpha: f64, beta: f64 },

    #[error("sector center mismatch at neuron {index}: w* = {w_star}, phi(v*) = {expected}")]
    SectorCenter {
        index: usize,
        w_star: f64,
        expected: f64,
    },

    #[error("multiplier entry {0} is negative")]
    NegativeMultiplier(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("data is not sufficiently exciting: {0}; collect more (or richer) samples")]
    Excitation(String),

    #[error("inconsistent linear system (residual {0:e})")]
    Inconsistent(f64),

    #[error("monomial {0} cannot be covered by the Gram basis")]
    UncoveredMonomial(String),

    #[error("controller is not centered at the origin: effective equilibrium bias {bias:e} exceeds {tol:e}")]
    EquilibriumBias { bias: f64, tol: f64 },

    #[error("fit residual {residual:e} exceeds {tol:e}; try a larger hidden layer")]
    FitResidual { residual: f64, tol: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidSector { .. } => "invalid_sector",
            Error::SectorCenter { .. } => "sector_center",
            Error::NegativeMultiplier(_) => "negative_multiplier",
            Error::Unsupported(_) => "unsupported",
            Error::Excitation(_) => "excitation",
            Error::Inconsistent(_) => "inconsistent",
            Error::UncoveredMonomial(_) => "uncovered_monomial",
            Error::EquilibriumBias { .. } => "equilibrium_bias",
            Error::FitResidual { .. } => "fit_residual",
            Error::NotApplicable(_) => "not_applicable",
            Error::Invalid(_) => "invalid_input",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
