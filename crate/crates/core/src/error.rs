use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cloud geometry infeasible: atom {atom} needed more than {max_redraws} redraws to respect min pair separation {min_pair_separation}")]
    GeometryInfeasible {
        atom: usize,
        max_redraws: usize,
        min_pair_separation: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("step size underflow at t = {t}: dt = {dt:e} (worst atom {atom}, nearest neighbour {neighbour:?})")]
    Stiffness {
        t: f64,
        dt: f64,
        atom: usize,
        neighbour: Option<usize>,
    },

    #[error("integration diverged at t = {t}: atom {atom} {reason}")]
    Diverged { t: f64, atom: usize, reason: String },

    #[error("cannot normalize series `{series}`: switch-off value is {value}")]
    Normalization { series: String, value: f64 },

    #[error("fit domain error: {0}")]
    FitDomain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
