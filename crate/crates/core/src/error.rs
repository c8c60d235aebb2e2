use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("control gain is singular: speed {speed} below floor {floor}")]
    SingularGain { speed: f64, floor: f64 },
    #[error("closed-loop error matrix is not Hurwitz (max real eigenvalue part {max_real})")]
    NotHurwitz { max_real: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailed(String),
    #[error("state is outside the barrier's safe set (denominator {denominator})")]
    OutsideSafeSet { denominator: f64 },
    #[error("vehicle position coincides with obstacle center")]
    DegenerateCenter,
    #[error("kernel Gram matrix is ill-conditioned after jitter {jitter}")]
    IllConditioned { jitter: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("simulation state became non-finite at t = {t}")]
    Diverged { t: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("trainer error: {0}")]
    Trainer(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
