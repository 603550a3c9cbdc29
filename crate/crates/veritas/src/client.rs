//! Talking to the attestation service: requesting attestations and
//! resolving published keys.

use std::path::Path;
use std::time::Duration;

use thiserror::Error;
use ureq::Agent;
use veritas_core::attestation::{key_fingerprint, Attestation, ALGORITHM, KEY_BITS};
use veritas_core::digest::Digest;
use veritas_core::model::SessionId;
use veritas_core::time::Precision;
use veritas_core::verify::{Issuance, KeyLookupError, KeySource, PublishedKey};
use veritas_core::Timestamp;

use crate::wire::{AttestRequest, AttestResponse, AuditLookup, KeyInfo, KeySet};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("attestation service unreachable at {url}: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("service rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed service response: {0}")]
    MalformedResponse(String),
    #[error("service returned a signature that does not verify: {0}")]
    SignatureInvalid(String),
}

fn agent() -> Agent {
    Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(60)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

fn unreachable(url: &str, e: impl ToString) -> ClientError {
    ClientError::Unreachable { url: url.into(), reason: e.to_string() }
}

fn read_body(resp: &mut ureq::http::Response<ureq::Body>) -> Result<String, String> {
    resp.body_mut().with_config().limit(1 << 20).read_to_string().map_err(|e| e.to_string())
}

fn fetch_key(agent: &Agent, base: &str, key_id: &str) -> Result<Option<KeyInfo>, ClientError> {
    if key_id.is_empty() || !key_id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
        return Ok(None);
    }
    let url = endpoint(base, &format!("/v1/keys/{key_id}"));
    let mut resp = agent.get(&url).call().map_err(|e| unreachable(&url, e))?;
    let status = resp.status().as_u16();
    let body = read_body(&mut resp).map_err(|e| unreachable(&url, e))?;
    match status {
        200 => serde_json::from_str(&body).map(Some).map_err(|e| ClientError::MalformedResponse(e.to_string())),
        404 => Ok(None),
        _ => Err(ClientError::Rejected { status, body }),
    }
}

/// Sends the digest (and nothing else but the optional session id) and
/// returns the attestation, after checking its signature against the key
/// the service publishes.
pub fn request_attestation(
    base_url: &str,
    digest: &Digest,
    session_id: Option<SessionId>,
) -> Result<Attestation, ClientError> {
    let agent = agent();
    let url = endpoint(base_url, "/v1/attest");
    let req = AttestRequest { digest: digest.hex(), session_id: session_id.map(|s| s.to_string()) };
    let mut resp = agent.post(&url).send_json(&req).map_err(|e| unreachable(&url, e))?;
    let status = resp.status().as_u16();
    let body = read_body(&mut resp).map_err(|e| unreachable(&url, e))?;
    if status != 200 {
        return Err(ClientError::Rejected { status, body });
    }
    let r: AttestResponse = serde_json::from_str(&body).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
    let signed_at = Timestamp::parse(&r.signed_at, Precision::Millis)
        .map_err(|e| ClientError::MalformedResponse(format!("signed_at: {e}")))?;
    if r.algorithm != ALGORITHM || r.key_bits != KEY_BITS {
        return Err(ClientError::MalformedResponse(format!("unexpected {} / {} bits", r.algorithm, r.key_bits)));
    }
    let att = Attestation {
        session_digest: *digest,
        signature: r.signature,
        algorithm: r.algorithm,
        key_bits: r.key_bits,
        key_id: r.key_id,
        service_id: r.service_id,
        signed_at,
    };
    let key = fetch_key(&agent, base_url, &att.key_id)?
        .ok_or_else(|| ClientError::SignatureInvalid(format!("service does not publish key `{}`", att.key_id)))?;
    match key_fingerprint(&key.public_key) {
        Ok(fp) if fp == att.key_id => {}
        _ => return Err(ClientError::SignatureInvalid("published key does not match its id".into())),
    }
    att.verify_signature(&key.public_key).map_err(|e| ClientError::SignatureInvalid(e.to_string()))?;
    Ok(att)
}

fn published(k: KeyInfo) -> PublishedKey {
    PublishedKey { retired: k.status != "active", key_id: k.key_id, public_key_pem: k.public_key, service_id: k.service_id }
}

/// Keys and issuance records from a live service.
pub struct HttpKeySource {
    base: String,
    agent: Agent,
}

impl HttpKeySource {
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into(), agent: agent() }
    }
}

impl KeySource for HttpKeySource {
    fn resolve(&self, key_id: &str) -> Result<PublishedKey, KeyLookupError> {
        match fetch_key(&self.agent, &self.base, key_id) {
            Ok(Some(k)) => Ok(published(k)),
            Ok(None) => Err(KeyLookupError::Unknown(key_id.into())),
            Err(e) => Err(KeyLookupError::Unavailable(e.to_string())),
        }
    }

    fn confirm_issuance(&self, att: &Attestation) -> Result<Issuance, KeyLookupError> {
        let url = endpoint(&self.base, &format!("/v1/audit/{}", att.session_digest.hex()));
        let unavailable = |e: String| KeyLookupError::Unavailable(format!("{url}: {e}"));
        let mut resp = self.agent.get(&url).call().map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = read_body(&mut resp).map_err(unavailable)?;
        if status != 200 {
            return Err(unavailable(format!("status {status}")));
        }
        let lookup: AuditLookup = serde_json::from_str(&body).map_err(|e| unavailable(e.to_string()))?;
        let signed_at = att.signed_at.to_rfc3339_millis();
        if lookup.issuances.iter().any(|i| i.key_id == att.key_id && i.signed_at == signed_at) {
            Ok(Issuance::Confirmed)
        } else {
            Ok(Issuance::Denied(format!(
                "service audit log has no issuance of {} with key {} at {signed_at}",
                att.session_digest, att.key_id
            )))
        }
    }
}

/// Keys from an exported key set file.
pub struct FileKeySource {
    keys: KeySet,
}

impl FileKeySource {
    pub fn load(path: &Path) -> Result<Self, KeyLookupError> {
        let text = std::fs::read_to_string(path).map_err(|e| KeyLookupError::Unavailable(format!("{}: {e}", path.display())))?;
        let keys = serde_json::from_str(&text)
            .map_err(|e| KeyLookupError::Unavailable(format!("{}: not a key set: {e}", path.display())))?;
        Ok(Self { keys })
    }

    pub fn from_key_set(keys: KeySet) -> Self {
        Self { keys }
    }
}

impl KeySource for FileKeySource {
    fn resolve(&self, key_id: &str) -> Result<PublishedKey, KeyLookupError> {
        self.keys
            .keys
            .iter()
            .find(|k| k.key_id == key_id)
            .cloned()
            .map(published)
            .ok_or_else(|| KeyLookupError::Unknown(key_id.into()))
    }
}
