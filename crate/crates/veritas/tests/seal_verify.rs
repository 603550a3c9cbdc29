mod common;

use std::fs;

use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use veritas::client::FileKeySource;
use veritas::sealer::{self, SealError};
use veritas::session_dir::SessionDirError;
use veritas::verifier;
use veritas_core::attestation::Attestation;
use veritas_core::verify::FailureCode;

#[test]
fn sealed_bundle_verifies() {
    let svc = shared_service();
    let (_p, bytes) = sealed_bundle(svc, TWO_METRICS);
    let v = verify(&bytes, svc);
    assert!(v.is_pass(), "{v:?}");
    assert!(v.notes.is_empty(), "{:?}", v.notes);
    let e = entries(&bytes);
    let names: Vec<&str> = e.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "attestation.json",
            "manifest.txt",
            "report.txt",
            "session.cnf",
            "sources/train.py",
            "transcripts/run-0.stderr",
            "transcripts/run-0.stdout"
        ]
    );
    let report = String::from_utf8(e["report.txt"].clone()).unwrap();
    assert!(report.contains("1 linked run\n"), "{report}");
    assert!(report.contains("val_accuracy = 0.9132"), "{report}");
}

#[test]
fn key_file_verifies_with_note() {
    let svc = shared_service();
    let (_p, bytes) = sealed_bundle(svc, TWO_METRICS);
    let keys = FileKeySource::from_key_set(svc.service().published());
    let v = verifier::verify_bundle_bytes(&bytes, &keys).unwrap();
    assert!(v.is_pass(), "{v:?}");
    assert_eq!(v.notes.len(), 1);
}

#[test]
fn foreign_service_keys_do_not_verify() {
    let svc = shared_service();
    let (_p, bytes) = sealed_bundle(svc, TWO_METRICS);
    let other = TestService::start();
    let v = verify(&bytes, &other);
    assert!(v.has(FailureCode::KeyUnknown), "{v:?}");
}

#[test]
fn entry_tampering_is_named() {
    let svc = shared_service();
    let (_p, bytes) = sealed_bundle(svc, TWO_METRICS);
    let cases: Vec<(&str, Vec<u8>, FailureCode)> = vec![
        (
            "stdout byte",
            rezip(&bytes, |e| {
                let t = e.get_mut("transcripts/run-0.stdout").unwrap();
                t[0] ^= 0x20;
            }),
            FailureCode::TranscriptDigestMismatch,
        ),
        (
            "missing stderr",
            rezip(&bytes, |e| {
                e.remove("transcripts/run-0.stderr");
            }),
            FailureCode::TranscriptMissing,
        ),
        (
            "extra entry",
            rezip(&bytes, |e| {
                e.insert("notes.txt".into(), b"trust me".to_vec());
            }),
            FailureCode::UnexpectedEntry,
        ),
        (
            "manifest",
            rezip(&bytes, |e| {
                let m = e.get_mut("manifest.txt").unwrap();
                m[0] = if m[0] == b'0' { b'1' } else { b'0' };
            }),
            FailureCode::ManifestMismatch,
        ),
        (
            "report",
            rezip(&bytes, |e| {
                let r = e.get_mut("report.txt").unwrap();
                *r = replace_once(r, "val_accuracy = 0.9132", "val_accuracy = 0.9932");
            }),
            FailureCode::ReportMismatch,
        ),
        (
            "session",
            rezip(&bytes, |e| {
                let s = e.get_mut("session.cnf").unwrap();
                *s = replace_once(s, "\"0.9132\"", "\"0.9932\"");
            }),
            FailureCode::SignatureDigestMismatch,
        ),
        (
            "source",
            rezip(&bytes, |e| {
                let s = e.get_mut("sources/train.py").unwrap();
                *s = replace_once(s, "0.4213", "0.1213");
            }),
            FailureCode::SourceDigestMismatch,
        ),
        (
            "signature",
            rezip(&bytes, |e| {
                let a = e.get_mut("attestation.json").unwrap();
                let mut att = Attestation::decode(a).unwrap();
                let flip = if att.signature.starts_with('A') { "B" } else { "A" };
                att.signature.replace_range(0..1, flip);
                *a = att.encode();
            }),
            FailureCode::SignatureInvalid,
        ),
    ];
    for (what, tampered, code) in cases {
        let v = verify(&tampered, svc);
        assert!(v.has(code), "{what}: expected {code}, got {:?}", v.failures);
    }
}

#[test]
fn non_canonical_container_fails() {
    let svc = shared_service();
    let (_p, bytes) = sealed_bundle(svc, TWO_METRICS);
    let v = verify(b"PK\x03\x04 definitely not a bundle", svc);
    assert_eq!(codes(&v), ["bundle-noncanonical"]);
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(b"\0");
    let v = verify(&trailing, svc);
    assert!(v.has(FailureCode::BundleNoncanonical), "{v:?}");
}

#[test]
fn random_byte_mutations_fail() {
    let svc = shared_service();
    let (_p, bytes) = sealed_bundle(svc, TWO_METRICS);
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..200 {
        let i = rng.random_range(0..bytes.len());
        let mut m = bytes.clone();
        m[i] ^= rng.random_range(1..=255u8);
        let v = verify(&m, svc);
        assert!(!v.is_pass(), "mutation at byte {i} escaped");
    }
}

#[test]
fn failed_seal_leaves_session_open() {
    let p = Project::new();
    p.init(&[]);
    p.write("train.py", TWO_METRICS);
    assert!(p.run_python("train.py").status.success());
    let before = fs::read(p.dir().state_path()).unwrap();
    let out = p.outside("never.bundle");
    let err = sealer::seal(&p.dir(), "http://127.0.0.1:9", &out).unwrap_err();
    assert!(matches!(err, SealError::Service(_)), "{err}");
    assert!(!out.exists());
    assert_eq!(fs::read(p.dir().state_path()).unwrap(), before);
    assert!(!p.dir().load().unwrap().is_sealed());
    assert!(p.run_python("train.py").status.success());
    assert_eq!(p.dir().load().unwrap().run_count(), 2);
}

#[test]
fn empty_session_cannot_be_sealed() {
    let p = Project::new();
    p.init(&[]);
    let err = sealer::seal(&p.dir(), &shared_service().url(), &p.outside("x.bundle")).unwrap_err();
    assert!(matches!(err, SealError::EmptySession), "{err}");
}

#[test]
fn sealed_session_rejects_runs_and_reseal() {
    let svc = shared_service();
    let (p, _) = sealed_bundle(svc, TWO_METRICS);
    let out = p.run_python("train.py");
    assert_eq!(out.status.code(), Some(125));
    assert!(stderr(&out).contains("sealed"), "{}", stderr(&out));
    let err = sealer::seal(&p.dir(), &svc.url(), &p.outside("again.bundle")).unwrap_err();
    assert!(matches!(err, SealError::Sealed), "{err}");
    let att = Attestation::decode(&fs::read(p.dir().attestation_path()).unwrap()).unwrap();
    let e = entries(&fs::read(p.outside("session.bundle")).unwrap());
    assert_eq!(Attestation::decode(&e["attestation.json"]).unwrap(), att);
}

#[test]
fn state_edits_are_caught_before_sealing() {
    let p = Project::new();
    p.init(&[]);
    p.write("train.py", TWO_METRICS);
    assert!(p.run_python("train.py").status.success());
    let state = p.dir().state_path();
    let text = fs::read(&state).unwrap();
    fs::write(&state, replace_once(&text, "\"0.9132\"", "\"0.9932\"")).unwrap();
    let err = sealer::seal(&p.dir(), &shared_service().url(), &p.outside("x.bundle")).unwrap_err();
    assert!(matches!(err, SealError::Dir(SessionDirError::StateDigestMismatch { .. })), "{err}");
}

#[test]
fn transcript_edits_are_caught_before_sealing() {
    let p = Project::new();
    p.init(&[]);
    p.write("train.py", TWO_METRICS);
    assert!(p.run_python("train.py").status.success());
    let t = p.dir().transcript_dir().join("run-0.stdout");
    let text = fs::read(&t).unwrap();
    fs::write(&t, replace_once(&text, "0.9132", "0.9932")).unwrap();
    let err = sealer::seal(&p.dir(), &shared_service().url(), &p.outside("x.bundle")).unwrap_err();
    assert!(matches!(err, SealError::StateTampered(_)), "{err}");
}
