//! Encrypted on-disk keystore.
//!
//! One JSON file holding every key the service has ever used. Private keys
//! are PKCS#8 PEM encrypted with AES-256-CBC under the passphrase; public
//! keys are stored in the clear. Exactly one key is active.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use openssl::hash::MessageDigest;
use openssl::pkey::{PKey, Private};
use openssl::rsa::{Padding, Rsa};
use openssl::sign::{RsaPssSaltlen, Signer};
use openssl::symm::Cipher;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use veritas_core::attestation::{key_fingerprint, KEY_BITS};
use veritas_core::time::Precision;
use veritas_core::Timestamp;

use crate::now;
use crate::session_dir::write_atomic;
use crate::wire::{KeyInfo, KeySet};

pub const PASSPHRASE_ENV: &str = "VERITAS_KEYSTORE_PASSPHRASE";
const FORMAT: &str = "veritas-keystore-1";

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("keystore {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("keystore already exists at {0}")]
    Exists(PathBuf),
    #[error("keystore is malformed: {0}")]
    Malformed(String),
    #[error("cannot decrypt keystore: wrong passphrase?")]
    Passphrase,
    #[error("keystore has no active key")]
    NoActiveKey,
    #[error("crypto: {0}")]
    Crypto(#[from] openssl::error::ErrorStack),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyStatus {
    Active,
    Retired,
}

impl KeyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Active => "active",
            Self::Retired => "retired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRecord {
    pub key_id: String,
    pub public_key_pem: String,
    pub created_at: Timestamp,
    pub status: KeyStatus,
}

#[derive(Serialize, Deserialize)]
struct StoredKey {
    key_id: String,
    created_at: String,
    status: String,
    public_key: String,
    encrypted_private_key: String,
}

#[derive(Serialize, Deserialize)]
struct StoredKeystore {
    format: String,
    service_id: String,
    keys: Vec<StoredKey>,
}

pub struct Keystore {
    path: PathBuf,
    passphrase: Vec<u8>,
    service_id: String,
    stored: Vec<StoredKey>,
    records: Vec<KeyRecord>,
    active: PKey<Private>,
}

struct NewKey {
    stored: StoredKey,
    record: KeyRecord,
    key: PKey<Private>,
}

fn generate(passphrase: &[u8]) -> Result<NewKey, KeystoreError> {
    let key = PKey::from_rsa(Rsa::generate(KEY_BITS as u32)?)?;
    let public_key = String::from_utf8(key.public_key_to_pem()?).expect("PEM is ASCII");
    let key_id = key_fingerprint(&public_key).map_err(|e| KeystoreError::Malformed(e.to_string()))?;
    let encrypted = key.private_key_to_pem_pkcs8_passphrase(Cipher::aes_256_cbc(), passphrase)?;
    let created_at = now().truncate_to_seconds();
    let record = KeyRecord { key_id: key_id.clone(), public_key_pem: public_key.clone(), created_at, status: KeyStatus::Active };
    let stored = StoredKey {
        key_id,
        created_at: created_at.to_rfc3339_seconds(),
        status: "active".into(),
        public_key,
        encrypted_private_key: String::from_utf8(encrypted).expect("PEM is ASCII"),
    };
    Ok(NewKey { stored, record, key })
}

impl Keystore {
    /// Creates a keystore with one fresh active key.
    pub fn create(path: &Path, service_id: &str, passphrase: &[u8]) -> Result<Self, KeystoreError> {
        if path.exists() {
            return Err(KeystoreError::Exists(path.to_path_buf()));
        }
        let k = generate(passphrase)?;
        let ks = Self {
            path: path.to_path_buf(),
            passphrase: passphrase.to_vec(),
            service_id: service_id.into(),
            stored: vec![k.stored],
            records: vec![k.record],
            active: k.key,
        };
        ks.persist()?;
        Ok(ks)
    }

    pub fn open(path: &Path, passphrase: &[u8]) -> Result<Self, KeystoreError> {
        let text = fs::read_to_string(path).map_err(|source| KeystoreError::Io { path: path.into(), source })?;
        let file: StoredKeystore = serde_json::from_str(&text).map_err(|e| KeystoreError::Malformed(e.to_string()))?;
        if file.format != FORMAT {
            return Err(KeystoreError::Malformed(format!("unknown format `{}`", file.format)));
        }
        let mut records = Vec::new();
        let mut active = None;
        for k in &file.keys {
            let status = match k.status.as_str() {
                "active" => KeyStatus::Active,
                "retired" => KeyStatus::Retired,
                other => return Err(KeystoreError::Malformed(format!("unknown key status `{other}`"))),
            };
            let created_at = Timestamp::parse(&k.created_at, Precision::Seconds)
                .map_err(|e| KeystoreError::Malformed(e.to_string()))?;
            let fp = key_fingerprint(&k.public_key).map_err(|e| KeystoreError::Malformed(e.to_string()))?;
            if fp != k.key_id {
                return Err(KeystoreError::Malformed(format!("key {} does not match its public key", k.key_id)));
            }
            if status == KeyStatus::Active {
                if active.is_some() {
                    return Err(KeystoreError::Malformed("more than one active key".into()));
                }
                let key = PKey::private_key_from_pem_passphrase(k.encrypted_private_key.as_bytes(), passphrase)
                    .map_err(|_| KeystoreError::Passphrase)?;
                let public = String::from_utf8(key.public_key_to_pem()?).expect("PEM is ASCII");
                if public != k.public_key {
                    return Err(KeystoreError::Malformed("active private key does not match its public key".into()));
                }
                active = Some(key);
            }
            records.push(KeyRecord { key_id: k.key_id.clone(), public_key_pem: k.public_key.clone(), created_at, status });
        }
        Ok(Self {
            path: path.to_path_buf(),
            passphrase: passphrase.to_vec(),
            service_id: file.service_id,
            stored: file.keys,
            records,
            active: active.ok_or(KeystoreError::NoActiveKey)?,
        })
    }

    fn persist(&self) -> Result<(), KeystoreError> {
        let file = StoredKeystore {
            format: FORMAT.into(),
            service_id: self.service_id.clone(),
            keys: self
                .stored
                .iter()
                .map(|k| StoredKey {
                    key_id: k.key_id.clone(),
                    created_at: k.created_at.clone(),
                    status: k.status.clone(),
                    public_key: k.public_key.clone(),
                    encrypted_private_key: k.encrypted_private_key.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("serializable");
        write_atomic(&self.path, text.as_bytes()).map_err(|source| KeystoreError::Io { path: self.path.clone(), source })
    }

    pub fn service_id(&self) -> &str {
        &self.service_id
    }

    pub fn keys(&self) -> &[KeyRecord] {
        &self.records
    }

    pub fn key(&self, key_id: &str) -> Option<&KeyRecord> {
        self.records.iter().find(|k| k.key_id == key_id)
    }

    pub fn active(&self) -> &KeyRecord {
        self.records.iter().find(|k| k.status == KeyStatus::Active).expect("one active key")
    }

    /// Generates the replacement key without touching the store, so the
    /// slow part of a rotation can happen outside any lock.
    pub fn prepare_rotation(&self) -> Result<PreparedKey, KeystoreError> {
        generate(&self.passphrase).map(PreparedKey)
    }

    /// Makes `next` the active key and retires the current one. The file is
    /// rewritten before the in-memory state changes.
    pub fn commit_rotation(&mut self, next: PreparedKey) -> Result<KeyRecord, KeystoreError> {
        let NewKey { stored, record, key } = next.0;
        let old_stored: Vec<String> = self.stored.iter().map(|k| k.status.clone()).collect();
        for k in &mut self.stored {
            k.status = "retired".into();
        }
        self.stored.push(stored);
        if let Err(e) = self.persist() {
            self.stored.pop();
            for (k, s) in self.stored.iter_mut().zip(old_stored) {
                k.status = s;
            }
            return Err(e);
        }
        for r in &mut self.records {
            r.status = KeyStatus::Retired;
        }
        self.records.push(record.clone());
        self.active = key;
        Ok(record)
    }

    pub fn rotate(&mut self) -> Result<KeyRecord, KeystoreError> {
        let next = self.prepare_rotation()?;
        self.commit_rotation(next)
    }

    /// RSA-PSS (SHA-256, MGF1-SHA-256, 32-byte salt) over the ASCII digest
    /// hex, with the active key. Returns the key id and raw signature.
    pub fn sign(&self, digest_hex: &str) -> Result<(String, Vec<u8>), KeystoreError> {
        let mut signer = Signer::new(MessageDigest::sha256(), &self.active)?;
        signer.set_rsa_padding(Padding::PKCS1_PSS)?;
        signer.set_rsa_pss_saltlen(RsaPssSaltlen::DIGEST_LENGTH)?;
        signer.set_rsa_mgf1_md(MessageDigest::sha256())?;
        let sig = signer.sign_oneshot_to_vec(digest_hex.as_bytes())?;
        Ok((self.active().key_id.clone(), sig))
    }

    pub fn key_info(&self, k: &KeyRecord) -> KeyInfo {
        KeyInfo {
            key_id: k.key_id.clone(),
            public_key: k.public_key_pem.clone(),
            status: k.status.as_str().into(),
            created_at: k.created_at.to_rfc3339_seconds(),
            service_id: self.service_id.clone(),
        }
    }

    /// Public half of the keystore, for verifiers without network access.
    pub fn published(&self) -> KeySet {
        KeySet { service_id: self.service_id.clone(), keys: self.records.iter().map(|k| self.key_info(k)).collect() }
    }
}

pub struct PreparedKey(NewKey);

/// Reads the public key set without the passphrase.
pub fn read_published(path: &Path) -> Result<KeySet, KeystoreError> {
    let text = fs::read_to_string(path).map_err(|source| KeystoreError::Io { path: path.into(), source })?;
    let file: StoredKeystore = serde_json::from_str(&text).map_err(|e| KeystoreError::Malformed(e.to_string()))?;
    if file.format != FORMAT {
        return Err(KeystoreError::Malformed(format!("unknown format `{}`", file.format)));
    }
    let mut keys = Vec::with_capacity(file.keys.len());
    for k in file.keys {
        let fp = key_fingerprint(&k.public_key).map_err(|e| KeystoreError::Malformed(e.to_string()))?;
        if fp != k.key_id {
            return Err(KeystoreError::Malformed(format!("key {} does not match its public key", k.key_id)));
        }
        keys.push(KeyInfo {
            key_id: k.key_id,
            public_key: k.public_key,
            status: k.status,
            created_at: k.created_at,
            service_id: file.service_id.clone(),
        });
    }
    Ok(KeySet { service_id: file.service_id, keys })
}
