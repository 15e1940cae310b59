//! Remote state estimation over a lossy network link.
//!
//! A sensor samples a dynamic system (a planar vehicle or a cartpole) once per
//! time slot and pushes the measurement into a discrete-time FCFS queue with
//! Bernoulli admission and geometric service. The receiver sees stale data and
//! tracks its age. Three estimators reconstruct the state from whatever
//! arrives: an LSTM regressor that takes the age as an input feature
//! ([`laa`]), a time-varying Kalman filter that rewinds and replays late
//! measurements ([`baselines::tvkf`]), and an unscented filter for the
//! nonlinear plant ([`baselines::ukf`]). The [`harness`] module wires the
//! pieces into reproducible experiments and CSV reports.

pub mod baselines;
pub mod dynamics;
pub mod harness;
pub mod laa;
pub mod network;
pub mod nn;
pub mod rng;
pub mod sim;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
