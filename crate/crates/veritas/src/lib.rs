//! Observation, sealing, attestation and verification of experiment
//! sessions on a Unix host.

pub mod bundle;
pub mod cli;
pub mod client;
pub mod config;
pub mod fingerprint;
pub mod observer;
pub mod sealer;
pub mod service;
pub mod session_dir;
pub mod snapshot;
pub mod telemetry;
pub mod verifier;
pub mod wire;

use std::time::{SystemTime, UNIX_EPOCH};

use veritas_core::Timestamp;

pub fn now() -> Timestamp {
    let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0);
    Timestamp::from_unix_millis(ms)
}
