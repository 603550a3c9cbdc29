//! Verifying bundle files: container checks, then the core checks.

use std::path::{Path, PathBuf};

use thiserror::Error;
use veritas_core::claims::ClaimsManifest;
use veritas_core::verify::{self, FailureCode, KeySource, Verdict, VerifyError};

use crate::bundle;

#[derive(Debug, Error)]
pub enum VerifyFileError {
    #[error("cannot read bundle {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

fn run(bytes: &[u8], keys: &dyn KeySource, claims: Option<&ClaimsManifest>) -> Result<Verdict, VerifyError> {
    let entries = match bundle::read_bundle(bytes) {
        Ok(e) => e,
        Err(e) => {
            let mut v = Verdict::default();
            v.fail(FailureCode::BundleNoncanonical, e.to_string());
            return Ok(v);
        }
    };
    let mut v = match claims {
        Some(c) => verify::verify_claims(&entries, keys, c)?,
        None => verify::verify_bundle(&entries, keys)?,
    };
    if !bundle::is_canonical(bytes, &entries) {
        v.failures.insert(
            0,
            verify::Failure {
                code: FailureCode::BundleNoncanonical,
                detail: "archive layout differs from the canonical encoding of its entries".into(),
            },
        );
    }
    Ok(v)
}

pub fn verify_bundle_bytes(bytes: &[u8], keys: &dyn KeySource) -> Result<Verdict, VerifyError> {
    run(bytes, keys, None)
}

/// Bundle checks, then the claims when the bundle passes.
pub fn verify_claims_bytes(bytes: &[u8], keys: &dyn KeySource, claims: &ClaimsManifest) -> Result<Verdict, VerifyError> {
    run(bytes, keys, Some(claims))
}

fn read(path: &Path) -> Result<Vec<u8>, VerifyFileError> {
    std::fs::read(path).map_err(|source| VerifyFileError::Unreadable { path: path.into(), source })
}

pub fn verify_bundle_file(path: &Path, keys: &dyn KeySource) -> Result<Verdict, VerifyFileError> {
    Ok(verify_bundle_bytes(&read(path)?, keys)?)
}

pub fn verify_claims_file(path: &Path, keys: &dyn KeySource, claims: &ClaimsManifest) -> Result<Verdict, VerifyFileError> {
    Ok(verify_claims_bytes(&read(path)?, keys, claims)?)
}
