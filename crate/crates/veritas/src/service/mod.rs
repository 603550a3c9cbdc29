//! The attestation service: holds the signing key, signs 64-hex digests,
//! publishes public keys, and records every issuance in the audit log.

pub mod audit;
pub mod keystore;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;
use tokio::sync::oneshot;
use veritas_core::attestation::{ALGORITHM, KEY_BITS};
use veritas_core::digest::is_digest_hex;
use veritas_core::model::SessionId;

use crate::now;
use crate::wire::{AttestRequest, AttestResponse, AuditLookup, ErrorBody, Issuance, KeySet};
use audit::{AuditError, AuditLog, Event};
use keystore::{KeyRecord, Keystore, KeystoreError};

/// Largest request body accepted. A digest request is under 200 bytes.
pub const MAX_BODY_BYTES: usize = 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed digest: expected 64 lowercase hex characters")]
    MalformedDigest,
    #[error("malformed session id: expected 32 lowercase hex characters")]
    MalformedSessionId,
    #[error(transparent)]
    Keystore(#[from] KeystoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// Shared service state. Signing holds the key read lock; rotation takes
/// the write lock only to swap keys, so requests briefly queue.
pub struct Service {
    keystore: RwLock<Keystore>,
    audit: Mutex<AuditLog>,
}

impl Service {
    pub fn new(keystore: Keystore, mut audit: AuditLog) -> Result<Self, ServiceError> {
        if audit.is_empty() {
            for k in keystore.keys() {
                audit.append(k.created_at, &k.key_id, Event::KeyCreated)?;
            }
        }
        Ok(Self { keystore: RwLock::new(keystore), audit: Mutex::new(audit) })
    }

    /// Opens the keystore at `path` (creating it if missing) and the audit
    /// log next to it.
    pub fn open(path: &Path, service_id: &str, passphrase: &[u8]) -> Result<Self, ServiceError> {
        let keystore =
            if path.exists() { Keystore::open(path, passphrase)? } else { Keystore::create(path, service_id, passphrase)? };
        let audit = AuditLog::open(&audit_path(path))?;
        Self::new(keystore, audit)
    }

    pub fn service_id(&self) -> String {
        self.keystore.read().unwrap().service_id().to_string()
    }

    pub fn sign_digest(&self, digest_hex: &str, session_id: Option<&str>) -> Result<AttestResponse, ServiceError> {
        if !is_digest_hex(digest_hex) {
            return Err(ServiceError::MalformedDigest);
        }
        if session_id.is_some_and(|s| s.parse::<SessionId>().is_err()) {
            return Err(ServiceError::MalformedSessionId);
        }
        let ks = self.keystore.read().unwrap();
        let (key_id, sig) = ks.sign(digest_hex)?;
        // The signature is released only once the issuance is on record.
        let signed_at = now();
        self.audit.lock().unwrap().append(
            signed_at,
            &key_id,
            Event::Sign { digest: digest_hex.into(), session_id: session_id.map(str::to_string) },
        )?;
        Ok(AttestResponse {
            signature: BASE64.encode(sig),
            algorithm: ALGORITHM.into(),
            key_bits: KEY_BITS,
            key_id,
            service_id: ks.service_id().into(),
            signed_at: signed_at.to_rfc3339_millis(),
        })
    }

    pub fn public_key(&self, key_id: &str) -> Option<KeyRecord> {
        self.keystore.read().unwrap().key(key_id).cloned()
    }

    pub fn active_key(&self) -> KeyRecord {
        self.keystore.read().unwrap().active().clone()
    }

    pub fn published(&self) -> KeySet {
        self.keystore.read().unwrap().published()
    }

    pub fn rotate_key(&self) -> Result<KeyRecord, ServiceError> {
        let next = self.keystore.read().unwrap().prepare_rotation()?;
        let mut ks = self.keystore.write().unwrap();
        let record = ks.commit_rotation(next)?;
        self.audit.lock().unwrap().append(record.created_at.max(now()), &record.key_id, Event::KeyRotated)?;
        Ok(record)
    }

    pub fn issuances(&self, digest_hex: &str) -> Vec<Issuance> {
        self.audit
            .lock()
            .unwrap()
            .issuances(digest_hex)
            .iter()
            .map(|(k, at)| Issuance { key_id: k.clone(), signed_at: at.to_rfc3339_millis() })
            .collect()
    }
}

pub fn audit_path(keystore: &Path) -> std::path::PathBuf {
    let mut name = keystore.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".audit.log");
    keystore.with_file_name(name)
}

fn error(status: StatusCode, code: &str, detail: impl ToString) -> Response {
    (status, Json(ErrorBody { error: code.into(), detail: detail.to_string() })).into_response()
}

async fn attest(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let req: AttestRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed-request", e),
    };
    let result = tokio::task::spawn_blocking(move || svc.sign_digest(&req.digest, req.session_id.as_deref())).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ (ServiceError::MalformedDigest | ServiceError::MalformedSessionId))) => {
            error(StatusCode::BAD_REQUEST, "malformed-digest", e)
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e),
    }
}

async fn key(State(svc): State<Arc<Service>>, UrlPath(key_id): UrlPath<String>) -> Response {
    let ks = svc.keystore.read().unwrap();
    match ks.key(&key_id) {
        Some(k) => Json(ks.key_info(k)).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown-key", format!("no key `{key_id}`")),
    }
}

async fn keys(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.published()).into_response()
}

async fn audit_lookup(State(svc): State<Arc<Service>>, UrlPath(digest): UrlPath<String>) -> Response {
    if !is_digest_hex(&digest) {
        return error(StatusCode::BAD_REQUEST, "malformed-digest", "expected 64 lowercase hex characters");
    }
    let issuances = svc.issuances(&digest);
    Json(AuditLookup { digest, issuances }).into_response()
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/attest", post(attest))
        .route("/v1/keys", get(keys))
        .route("/v1/keys/{key_id}", get(key))
        .route("/v1/audit/{digest}", get(audit_lookup))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(svc)
}

/// A service running on a background thread.
pub struct RunningService {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl RunningService {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` and serves on a background thread.
pub fn spawn(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<RunningService> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(service.clone());
    let thread = thread::Builder::new().name("veritas-service".into()).spawn(move || {
        rt.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    })?;
    Ok(RunningService { addr, service, shutdown: Some(tx), thread: Some(thread) })
}

/// Serves until interrupted. SIGHUP rotates the signing key.
pub fn serve_forever(service: Arc<Service>, addr: SocketAddr, ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        ready(listener.local_addr()?);
        let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
        let rotating = service.clone();
        tokio::spawn(async move {
            while hup.recv().await.is_some() {
                let svc = rotating.clone();
                match tokio::task::spawn_blocking(move || svc.rotate_key()).await {
                    Ok(Ok(k)) => eprintln!("veritas: rotated signing key, new key {}", k.key_id),
                    Ok(Err(e)) => eprintln!("veritas: key rotation failed: {e}"),
                    Err(e) => eprintln!("veritas: key rotation failed: {e}"),
                }
            }
        });
        axum::serve(listener, router(service))
            .with_graceful_shutdown(async {
                let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).ok();
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = async { match term.as_mut() { Some(t) => { t.recv().await; } None => std::future::pending().await } } => {}
                }
            })
            .await
    })
}
