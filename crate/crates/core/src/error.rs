use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CcError {
    #[error("min RTT is zero; the RTT filter has not been seeded")]
    UnseededMinRtt,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scenario file could not be parsed: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario has no flows")]
    NoFlows,
    #[error("flow {flow}: {reason}")]
    Flow { flow: usize, reason: String },
    #[error("link: {0}")]
    Link(String),
    #[error("aqm: {0}")]
    Aqm(String),
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("bad axis value `{value}` for `{axis}`")]
    AxisValue { axis: String, value: String },
    #[error("sweep axis is empty")]
    EmptyAxis,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
