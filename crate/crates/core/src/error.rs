use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("point outside the problem domain: {0}")]
    Domain(String),

    #[error("protocol error at round {round}: delay {delay} exceeds {limit}")]
    Protocol {
        round: usize,
        delay: usize,
        limit: usize,
    },

    #[error("algorithm needs {requested} rounds but the delay sequence has {available}")]
    Budget { requested: usize, available: usize },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("stepsize {eta} is not above {threshold}; use the small-stepsize construction instead")]
    StepsizeTooSmall { eta: f64, threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg()))
    }
}
