//! Data model, canonical encoding and verification for experiment
//! attestations.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO. Observing
//! processes, talking to the attestation service and reading bundle files
//! live in the `veritas` crate; everything a verifier must agree on bit for
//! bit lives here:
//!
//! * [`canon`]: the sorted-key, whitespace-free text encoding
//! * [`codec`]: session records to and from canonical bytes, and the session
//!   digest that gets signed
//! * [`metrics`]: the metric grammar applied to process output
//! * [`hmc`]: hardware-metric consistency scoring
//! * [`report`]: the deterministic `report.txt`
//! * [`verify`]: bundle verification and claims checking

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attestation;
pub mod canon;
pub mod claims;
pub mod codec;
pub mod digest;
pub mod hmc;
pub mod metrics;
pub mod model;
pub mod report;
pub mod time;
pub mod verify;

pub use attestation::Attestation;
pub use codec::{canonicalize, decode_session, session_digest};
pub use digest::Digest;
pub use hmc::{evaluate as evaluate_hmc, HmcReport, Thresholds};
pub use model::{RunRecord, SessionId, SessionRecord};
pub use time::Timestamp;
pub use verify::{verify_bundle, verify_claims, Verdict};
