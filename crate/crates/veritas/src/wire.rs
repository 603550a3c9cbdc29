//! JSON bodies exchanged with the attestation service.

use serde::{Deserialize, Serialize};

/// The only request body the author ever sends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestRequest {
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestResponse {
    pub signature: String,
    pub algorithm: String,
    pub key_bits: u64,
    pub key_id: String,
    pub service_id: String,
    pub signed_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyInfo {
    pub key_id: String,
    /// PEM SubjectPublicKeyInfo.
    pub public_key: String,
    /// `active` or `retired`.
    pub status: String,
    pub created_at: String,
    pub service_id: String,
}

/// Every key a service has published. Also the `--key-file` format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySet {
    pub service_id: String,
    pub keys: Vec<KeyInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issuance {
    pub key_id: String,
    pub signed_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLookup {
    pub digest: String,
    pub issuances: Vec<Issuance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}
