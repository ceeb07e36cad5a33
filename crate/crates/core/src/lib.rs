//! Discrete-event simulator for BBR-family congestion control on a shared
//! bottleneck, with BBR, a strict-drain BBR variant and BBQ.

pub mod cc;
pub mod endpoint;
pub mod engine;
pub mod error;
pub mod net;
pub mod scenarios;

pub use engine::SimTime;
pub use error::{Error, Result};
