//! The signed statement returned by the attestation service.
//!
//! The signature is RSA-PSS (SHA-256, MGF1-SHA-256, salt length 32) over the
//! 64 lowercase hex characters of the session digest, taken as ASCII bytes.
//! Not over the raw 32 digest bytes, and not over the `sha256:` prefix.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rsa::pkcs8::{DecodePublicKey, EncodePublicKey};
use rsa::pss::{Signature, VerifyingKey};
use rsa::signature::Verifier as _;
use rsa::traits::PublicKeyParts;
use rsa::RsaPublicKey;
use sha2::Sha256;
use thiserror::Error;

use crate::canon::{self, Fields, Object, Value};
use crate::codec::CodecError;
use crate::digest::Digest;
use crate::time::{Precision, Timestamp};

pub const ALGORITHM: &str = "RSA-PSS-SHA256";
pub const KEY_BITS: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attestation {
    pub session_digest: Digest,
    /// Base64 (standard alphabet, padded).
    pub signature: String,
    pub algorithm: String,
    pub key_bits: u64,
    pub key_id: String,
    pub service_id: String,
    pub signed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignatureError {
    #[error("public key is not a valid PEM-encoded RSA SubjectPublicKeyInfo")]
    PublicKey,
    #[error("signature is not valid base64")]
    Encoding,
    #[error("signature does not verify")]
    Invalid,
}

impl Attestation {
    /// The exact bytes the service signs.
    pub fn preimage(&self) -> String {
        self.session_digest.hex()
    }

    pub fn to_value(&self) -> Value {
        Object::new()
            .with("algorithm", self.algorithm.as_str())
            .with("key_bits", self.key_bits)
            .with("key_id", self.key_id.as_str())
            .with("service_id", self.service_id.as_str())
            .with("session_digest", Value::Str(self.session_digest.to_string()))
            .with("signature", self.signature.as_str())
            .with("signed_at", Value::Str(self.signed_at.to_rfc3339_millis()))
            .build()
    }

    /// Canonical bytes, as stored in `attestation.json`.
    pub fn encode(&self) -> Vec<u8> {
        canon::encode(&self.to_value())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut f = Fields::new(canon::parse(bytes)?, "attestation")?;
        let digest_text = f.string("session_digest")?;
        let signed_at_text = f.string("signed_at")?;
        let a = Self {
            session_digest: digest_text
                .parse()
                .map_err(|e: crate::digest::DigestParseError| CodecError::Value { field: "session_digest", reason: e.to_string() })?,
            signature: f.string("signature")?,
            algorithm: f.string("algorithm")?,
            key_bits: f.u64("key_bits")?,
            key_id: f.string("key_id")?,
            service_id: f.string("service_id")?,
            signed_at: Timestamp::parse(&signed_at_text, Precision::Millis)
                .map_err(|e| CodecError::Value { field: "signed_at", reason: e.to_string() })?,
        };
        f.finish()?;
        Ok(a)
    }

    /// Checks the signature against a PEM public key.
    pub fn verify_signature(&self, public_key_pem: &str) -> Result<(), SignatureError> {
        verify_digest_signature(public_key_pem, &self.preimage(), &self.signature)
    }
}

/// Verifies a base64 RSA-PSS-SHA256 signature over `digest_hex`.
pub fn verify_digest_signature(public_key_pem: &str, digest_hex: &str, signature_b64: &str) -> Result<(), SignatureError> {
    let key = RsaPublicKey::from_public_key_pem(public_key_pem).map_err(|_| SignatureError::PublicKey)?;
    let raw = BASE64.decode(signature_b64.as_bytes()).map_err(|_| SignatureError::Encoding)?;
    // Canonical base64 only: decoding then re-encoding must give the input back.
    if BASE64.encode(&raw) != signature_b64 {
        return Err(SignatureError::Encoding);
    }
    let sig = Signature::try_from(raw.as_slice()).map_err(|_| SignatureError::Invalid)?;
    VerifyingKey::<Sha256>::new(key)
        .verify(digest_hex.as_bytes(), &sig)
        .map_err(|_| SignatureError::Invalid)
}

/// Modulus size of a PEM public key.
pub fn public_key_bits(public_key_pem: &str) -> Result<u64, SignatureError> {
    let key = RsaPublicKey::from_public_key_pem(public_key_pem).map_err(|_| SignatureError::PublicKey)?;
    Ok(key.size() as u64 * 8)
}

/// Key identifier: the first 16 bytes of SHA-256 over the DER
/// SubjectPublicKeyInfo, as 32 lowercase hex characters.
pub fn key_fingerprint(public_key_pem: &str) -> Result<String, SignatureError> {
    let key = RsaPublicKey::from_public_key_pem(public_key_pem).map_err(|_| SignatureError::PublicKey)?;
    let der = key.to_public_key_der().map_err(|_| SignatureError::PublicKey)?;
    let mut id = Digest::of(der.as_bytes()).hex();
    id.truncate(32);
    Ok(id)
}
