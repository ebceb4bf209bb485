use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("infinite episode: ramp flow is zero")]
    InfiniteEpisode,
    #[error("undefined shockwave: both states have the same density")]
    UndefinedWave,
    #[error("shockwave lines are parallel")]
    Parallel,
    #[error("no intersection within episode (t = {t:.3} s precedes both origins)")]
    NoIntersectionWithinEpisode { t: f64 },
    #[error("over-saturated episode: theta = {0:.4} >= 1")]
    OverSaturated(f64),
    #[error("collision: net gap {0:.3} m")]
    Collision(f64),
    #[error("invalid config `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Model-level infeasibility (as opposed to bad input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::OverSaturated(_) | Error::Infeasible(_) | Error::InfiniteEpisode
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
