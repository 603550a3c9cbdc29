mod common;

use std::fs;
use std::sync::Arc;
use std::thread;

use common::*;
use serde_json::{json, Value};
use veritas::client::{self, HttpKeySource};
use veritas::service::audit::{verify_chain, Event};
use veritas::service::keystore::{Keystore, KeystoreError};
use veritas::service::{audit_path, Service};
use veritas_core::attestation::{key_fingerprint, verify_digest_signature, Attestation};
use veritas_core::digest::Digest;
use veritas_core::verify::{Issuance, KeySource};

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn post(url: &str, body: &str) -> (u16, Value) {
    let mut r = agent()
        .post(&format!("{url}/v1/attest"))
        .header("content-type", "application/json")
        .send(body)
        .unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

fn get(url: &str) -> (u16, Value) {
    let mut r = agent().get(url).call().unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

fn digest(tag: &str) -> String {
    Digest::of(tag.as_bytes()).hex()
}

#[test]
fn signs_digests_with_published_keys() {
    let svc = shared_service();
    let d = digest("signs_digests_with_published_keys");
    let (status, body) = post(&svc.url(), &json!({ "digest": d }).to_string());
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["algorithm"], "RSA-PSS-SHA256");
    assert_eq!(body["key_bits"], 4096);
    let key_id = body["key_id"].as_str().unwrap();
    let (status, key) = get(&format!("{}/v1/keys/{key_id}", svc.url()));
    assert_eq!(status, 200);
    let pem = key["public_key"].as_str().unwrap();
    assert_eq!(key_fingerprint(pem).unwrap(), key_id);
    verify_digest_signature(pem, &d, body["signature"].as_str().unwrap()).unwrap();
    assert!(verify_digest_signature(pem, &digest("other"), body["signature"].as_str().unwrap()).is_err());
}

#[test]
fn rejects_anything_but_a_digest() {
    let url = shared_service().url();
    let d = digest("x");
    let bad = [
        json!({ "digest": d.to_uppercase() }).to_string(),
        json!({ "digest": &d[..63] }).to_string(),
        json!({ "digest": format!("sha256:{d}") }).to_string(),
        json!({ "digest": d, "session_id": "not-hex" }).to_string(),
        json!({ "digest": d, "metrics": { "acc": 0.9 } }).to_string(),
        json!({ "digest": d, "source": "print(1)" }).to_string(),
        json!({}).to_string(),
        "not json".to_string(),
    ];
    for body in bad {
        let (status, resp) = post(&url, &body);
        assert_eq!(status, 400, "{body} -> {resp}");
        assert!(resp["error"].is_string(), "{resp}");
    }
    let huge = json!({ "digest": d, "session_id": "a".repeat(2000) }).to_string();
    assert_eq!(post(&url, &huge).0, 413);
    let (status, _) = post(&url, &json!({ "digest": d, "session_id": "5f0c0ffee0ddf00d5f0c0ffee0ddf00d" }).to_string());
    assert_eq!(status, 200);
}

#[test]
fn key_and_audit_endpoints() {
    let svc = shared_service();
    let (status, set) = get(&format!("{}/v1/keys", svc.url()));
    assert_eq!(status, 200);
    assert_eq!(set["service_id"], "test-service");
    assert!(set["keys"].as_array().unwrap().iter().any(|k| k["status"] == "active"));
    assert_eq!(get(&format!("{}/v1/keys/0000", svc.url())).0, 404);
    assert_eq!(get(&format!("{}/v1/audit/nothex", svc.url())).0, 400);

    let d = Digest::of(b"key_and_audit_endpoints");
    let (_, unseen) = get(&format!("{}/v1/audit/{}", svc.url(), d.hex()));
    assert_eq!(unseen["issuances"], json!([]));
    let att = client::request_attestation(&svc.url(), &d, None).unwrap();
    let (_, seen) = get(&format!("{}/v1/audit/{}", svc.url(), d.hex()));
    assert_eq!(seen["issuances"][0]["key_id"], att.key_id.as_str());
    assert_eq!(seen["issuances"][0]["signed_at"], att.signed_at.to_rfc3339_millis().as_str());

    let keys = HttpKeySource::new(svc.url());
    assert_eq!(keys.confirm_issuance(&att).unwrap(), Issuance::Confirmed);
    let mut forged = att.clone();
    forged.signed_at = veritas_core::Timestamp::from_unix_millis(att.signed_at.unix_millis() - 86_400_000);
    assert!(matches!(keys.confirm_issuance(&forged).unwrap(), Issuance::Denied(_)));
}

#[test]
fn unreachable_service_is_an_error() {
    let err = client::request_attestation("http://127.0.0.1:9", &Digest::of(b"x"), None).unwrap_err();
    assert!(matches!(err, client::ClientError::Unreachable { .. }), "{err}");
}

#[test]
fn rotation_keeps_old_attestations_verifiable() {
    let svc = TestService::start();
    let before = client::request_attestation(&svc.url(), &Digest::of(b"before"), None).unwrap();
    let old = svc.service().active_key();

    let shared = Arc::new(svc);
    let signer = {
        let s = shared.clone();
        thread::spawn(move || {
            (0..20)
                .map(|i| client::request_attestation(&s.url(), &Digest::of(format!("during {i}").as_bytes()), None).unwrap())
                .collect::<Vec<Attestation>>()
        })
    };
    let new = shared.service().rotate_key().unwrap();
    let during = signer.join().unwrap();
    let svc = Arc::try_unwrap(shared).ok().unwrap();

    assert_ne!(new.key_id, old.key_id);
    let after = client::request_attestation(&svc.url(), &Digest::of(b"after"), None).unwrap();
    assert_eq!(after.key_id, new.key_id);

    let keys = HttpKeySource::new(svc.url());
    for att in during.iter().chain([&before, &after]) {
        let k = keys.resolve(&att.key_id).unwrap();
        att.verify_signature(&k.public_key_pem).unwrap();
        assert_eq!(keys.confirm_issuance(att).unwrap(), Issuance::Confirmed);
    }
    assert!(keys.resolve(&old.key_id).unwrap().retired);
    assert!(!keys.resolve(&new.key_id).unwrap().retired);

    let log = fs::read_to_string(audit_path(&svc.keystore_path())).unwrap();
    let chain = verify_chain(&log).unwrap();
    assert_eq!(chain.iter().filter(|e| e.event == Event::KeyRotated).count(), 1);
    assert_eq!(chain.iter().filter(|e| matches!(e.event, Event::Sign { .. })).count(), 22);

    let path = svc.keystore_path();
    let TestService { running, dir: _dir } = svc;
    running.stop();
    let reopened = Service::open(&path, "ignored", PASSPHRASE).unwrap();
    assert_eq!(reopened.active_key().key_id, new.key_id);
    assert_eq!(reopened.published().keys.len(), 2);
}

#[test]
fn keystore_is_encrypted_at_rest() {
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("ks.json");
    Keystore::create(&path, "svc", PASSPHRASE).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("BEGIN ENCRYPTED PRIVATE KEY"));
    assert!(!text.contains("BEGIN PRIVATE KEY"));
    assert!(!text.contains("BEGIN RSA PRIVATE KEY"));
    assert!(matches!(Keystore::open(&path, b"wrong"), Err(KeystoreError::Passphrase)));
    assert!(matches!(Keystore::create(&path, "svc", PASSPHRASE), Err(KeystoreError::Exists(_))));
}

#[test]
fn audit_tampering_is_refused_on_open() {
    let svc = TestService::start();
    client::request_attestation(&svc.url(), &Digest::of(b"one"), None).unwrap();
    let path = svc.keystore_path();
    let log_path = audit_path(&path);
    let TestService { running, dir: _dir } = svc;
    running.stop();
    let log = fs::read_to_string(&log_path).unwrap();
    let edited = log.replacen("\"sign\"", "\"key-rotated\"", 1);
    assert_ne!(edited, log);
    fs::write(&log_path, edited).unwrap();
    assert!(Service::open(&path, "x", PASSPHRASE).is_err());
}
