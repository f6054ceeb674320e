use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite action component {0}")]
    NonFiniteAction(&'static str),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("map file: {0}")]
    MapFormat(String),
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
    #[error("goal unreachable from lane {from} to lane {to}")]
    Unreachable { from: usize, to: usize },
    #[error("episode already terminated with status {0:?}")]
    Terminated(crate::EpisodeStatus),
    #[error("no episode in progress; call reset first")]
    NotStarted,
    #[error("could not sample a {0:?} episode after {1} attempts")]
    TaskSampling(crate::TaskKind, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
