use cirl_nn::NnError;
use cirl_sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CirlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("expert left the route by {deviation:.2} m")]
    ExpertAbort { deviation: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CirlError>;

impl CirlError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CirlError::Config(_) => 2,
            CirlError::Sim(SimError::InvalidSpec(_) | SimError::InvalidMap(_) | SimError::MapFormat(_)) => 2,
            CirlError::Numeric(_) | CirlError::Nn(NnError::NonFiniteGrad { .. }) => 4,
            _ => 3,
        }
    }
}
