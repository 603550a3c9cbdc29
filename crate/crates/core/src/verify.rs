//! Independent verification of a sealed bundle.
//!
//! Verification needs only the bundle entries and a way to look up the
//! service's published keys. Every check is attempted even after an earlier
//! one fails, so the verdict lists everything that is wrong.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::attestation::{self, Attestation, ALGORITHM, KEY_BITS};
use crate::claims::{check_claim, ClaimOutcome, ClaimsManifest};
use crate::codec::decode_session;
use crate::digest::Digest;
use crate::hmc::evaluate;
use crate::metrics::{parse_metrics, MetricPattern};
use crate::model::{labelled_enum, SessionRecord, Stream};
use crate::report;

pub const SESSION_ENTRY: &str = "session.cnf";
pub const ATTESTATION_ENTRY: &str = "attestation.json";
pub const REPORT_ENTRY: &str = "report.txt";
pub const MANIFEST_ENTRY: &str = "manifest.txt";
pub const SOURCES_PREFIX: &str = "sources/";

pub fn transcript_entry(run_index: u32, stream: Stream) -> String {
    format!("transcripts/run-{run_index}.{stream}")
}

pub fn source_entry(path: &str) -> String {
    format!("{SOURCES_PREFIX}{path}")
}

/// Bundle contents keyed by entry path.
pub type BundleEntries = BTreeMap<String, Vec<u8>>;

/// `manifest.txt`: one `<hex>  <path>` line per entry (sha256sum format),
/// sorted by path, covering every entry except the manifest itself.
pub fn build_manifest(entries: &BundleEntries) -> String {
    let mut out = String::new();
    for (path, data) in entries {
        if path == MANIFEST_ENTRY {
            continue;
        }
        out.push_str(&Digest::of(data).hex());
        out.push_str("  ");
        out.push_str(path);
        out.push('\n');
    }
    out
}

labelled_enum!(FailureCode {
    BundleNoncanonical => "bundle-noncanonical",
    AttestationMalformed => "attestation-malformed",
    KeyUnknown => "attestation-key-unknown",
    KeyIdMismatch => "key-id-mismatch",
    KeyParametersMismatch => "key-parameters-mismatch",
    SignatureInvalid => "signature-invalid",
    IssuanceUnconfirmed => "issuance-unconfirmed",
    SignatureDigestMismatch => "signature-digest-mismatch",
    SessionMalformed => "session-malformed",
    TranscriptMissing => "transcript-missing",
    TranscriptDigestMismatch => "transcript-digest-mismatch",
    MetricTranscriptMismatch => "metric-transcript-mismatch",
    SourceMissing => "source-missing",
    SourceDigestMismatch => "source-digest-mismatch",
    UnexpectedEntry => "unexpected-entry",
    ManifestMismatch => "manifest-mismatch",
    HmcRecomputeMismatch => "hmc-recompute-mismatch",
    ReportMismatch => "report-mismatch",
    ClaimMismatch => "claim-mismatch",
    ClaimMetricAbsent => "claim-metric-absent",
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: FailureCode,
    pub detail: String,
}

labelled_enum!(Status { Pass => "PASS", Fail => "FAIL" });

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verdict {
    pub failures: Vec<Failure>,
    /// Observations that do not affect the verdict.
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn status(&self) -> Status {
        if self.failures.is_empty() {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn is_pass(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn has(&self, code: FailureCode) -> bool {
        self.failures.iter().any(|f| f.code == code)
    }

    pub fn fail(&mut self, code: FailureCode, detail: impl Into<String>) {
        self.failures.push(Failure { code, detail: detail.into() });
    }
}

/// A key as published by the attestation service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishedKey {
    pub key_id: String,
    pub public_key_pem: String,
    pub service_id: String,
    pub retired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyLookupError {
    /// The source answered and does not know this key.
    #[error("key `{0}` is not published by this source")]
    Unknown(String),
    /// The source could not be consulted.
    #[error("key source unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issuance {
    /// The service's audit log records this exact issuance.
    Confirmed,
    /// The service has no record matching the attestation.
    Denied(String),
    /// The key source cannot answer (e.g. a local key file).
    NotSupported,
}

/// Where public keys come from: the live service or an exported key file.
pub trait KeySource {
    fn resolve(&self, key_id: &str) -> Result<PublishedKey, KeyLookupError>;

    /// Asks whether the service issued this attestation (digest, key id and
    /// signing time). Sources without an audit trail return `NotSupported`.
    fn confirm_issuance(&self, _attestation: &Attestation) -> Result<Issuance, KeyLookupError> {
        Ok(Issuance::NotSupported)
    }
}

/// Verification could not be carried out. Distinct from a failed verdict.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("public key unavailable: {0}")]
    KeyUnavailable(String),
}

/// Runs every bundle check and returns the verdict, plus the decoded
/// session when it could be parsed.
pub fn verify_entries(
    entries: &BundleEntries,
    keys: &dyn KeySource,
) -> Result<(Verdict, Option<SessionRecord>), VerifyError> {
    let mut v = Verdict::default();

    // 1. attestation
    let att = match entries.get(ATTESTATION_ENTRY) {
        None => {
            v.fail(FailureCode::AttestationMalformed, "attestation.json missing");
            None
        }
        Some(bytes) => match Attestation::decode(bytes) {
            Ok(a) if a.encode() != *bytes => {
                v.fail(FailureCode::AttestationMalformed, "attestation.json is not in canonical form");
                None
            }
            Ok(a) => Some(a),
            Err(e) => {
                v.fail(FailureCode::AttestationMalformed, e.to_string());
                None
            }
        },
    };

    if let Some(att) = &att {
        check_attestation(att, keys, &mut v)?;
    }

    // 4. signed digest vs session.cnf
    let cnf = entries.get(SESSION_ENTRY);
    match (cnf, &att) {
        (None, _) => v.fail(FailureCode::SessionMalformed, "session.cnf missing"),
        (Some(bytes), Some(att)) => {
            let actual = Digest::of(bytes);
            if actual != att.session_digest {
                v.fail(
                    FailureCode::SignatureDigestMismatch,
                    format!("session.cnf hashes to {actual}, attestation signs {}", att.session_digest),
                );
            }
        }
        (Some(_), None) => {}
    }

    // 5. structure
    let session = cnf.and_then(|bytes| match decode_session(bytes) {
        Ok(s) if s.is_sealed() => Some(s),
        Ok(_) => {
            v.fail(FailureCode::SessionMalformed, "session is not sealed");
            None
        }
        Err(e) => {
            v.fail(FailureCode::SessionMalformed, e.to_string());
            None
        }
    });

    if let Some(session) = &session {
        check_contents(session, entries, &mut v);
        check_derived(session, entries, &mut v);
    }

    // Entries and manifest can be checked without a session, but the
    // expected-entry set needs one.
    let manifest = build_manifest(entries);
    match entries.get(MANIFEST_ENTRY) {
        Some(m) if m == manifest.as_bytes() => {}
        Some(_) => v.fail(FailureCode::ManifestMismatch, "manifest.txt does not match bundle entries"),
        None => v.fail(FailureCode::ManifestMismatch, "manifest.txt missing"),
    }

    Ok((v, session))
}

/// Verifies a bundle.
pub fn verify_bundle(entries: &BundleEntries, keys: &dyn KeySource) -> Result<Verdict, VerifyError> {
    verify_entries(entries, keys).map(|(v, _)| v)
}

/// Verifies a bundle, then, if it passes, each claim in `claims`.
pub fn verify_claims(
    entries: &BundleEntries,
    keys: &dyn KeySource,
    claims: &ClaimsManifest,
) -> Result<Verdict, VerifyError> {
    let (mut v, session) = verify_entries(entries, keys)?;
    let (true, Some(session)) = (v.is_pass(), session) else {
        return Ok(v);
    };
    for claim in &claims.claims {
        match check_claim(&session, claim) {
            ClaimOutcome::Match => {}
            ClaimOutcome::Mismatch(detail) => v.fail(FailureCode::ClaimMismatch, detail),
            ClaimOutcome::Absent => {
                v.fail(FailureCode::ClaimMetricAbsent, format!("`{}` was never printed", claim.name))
            }
        }
    }
    Ok(v)
}

fn check_attestation(att: &Attestation, keys: &dyn KeySource, v: &mut Verdict) -> Result<(), VerifyError> {
    if att.algorithm != ALGORITHM || att.key_bits != KEY_BITS {
        v.fail(
            FailureCode::KeyParametersMismatch,
            format!("unsupported algorithm {} / {} bits", att.algorithm, att.key_bits),
        );
    }

    // 2. key lookup
    let key = match keys.resolve(&att.key_id) {
        Ok(k) => k,
        Err(KeyLookupError::Unavailable(e)) => return Err(VerifyError::KeyUnavailable(e)),
        Err(KeyLookupError::Unknown(id)) => {
            v.fail(FailureCode::KeyUnknown, format!("no published key `{id}`"));
            return Ok(());
        }
    };
    match attestation::key_fingerprint(&key.public_key_pem) {
        Ok(fp) if fp == att.key_id && fp == key.key_id => {}
        Ok(fp) => v.fail(FailureCode::KeyIdMismatch, format!("key fingerprint {fp} does not match `{}`", att.key_id)),
        Err(e) => v.fail(FailureCode::KeyIdMismatch, e.to_string()),
    }
    match attestation::public_key_bits(&key.public_key_pem) {
        Ok(KEY_BITS) => {}
        Ok(bits) => v.fail(FailureCode::KeyParametersMismatch, format!("published key has {bits} bits")),
        Err(e) => v.fail(FailureCode::KeyParametersMismatch, e.to_string()),
    }
    if key.service_id != att.service_id {
        v.fail(
            FailureCode::KeyParametersMismatch,
            format!("attestation names service `{}`, key belongs to `{}`", att.service_id, key.service_id),
        );
    }

    // 3. signature over the ASCII hex digest
    if let Err(e) = att.verify_signature(&key.public_key_pem) {
        v.fail(FailureCode::SignatureInvalid, e.to_string());
    }

    match keys.confirm_issuance(att) {
        Ok(Issuance::Confirmed) => {}
        Ok(Issuance::Denied(why)) => v.fail(FailureCode::IssuanceUnconfirmed, why),
        Ok(Issuance::NotSupported) => {
            v.notes.push("signing time not confirmed: key source keeps no issuance log".into())
        }
        Err(KeyLookupError::Unavailable(e)) => return Err(VerifyError::KeyUnavailable(e)),
        Err(KeyLookupError::Unknown(id)) => v.fail(FailureCode::KeyUnknown, format!("no published key `{id}`")),
    }
    if key.retired {
        v.notes.push(format!("signed with retired key {}", key.key_id));
    }
    Ok(())
}

// 6. transcripts and sources against the digests inside the session
fn check_contents(session: &SessionRecord, entries: &BundleEntries, v: &mut Verdict) {
    let mut expected: BTreeSet<String> =
        [SESSION_ENTRY, ATTESTATION_ENTRY, REPORT_ENTRY, MANIFEST_ENTRY].iter().map(|s| s.to_string()).collect();

    for run in session.runs() {
        let patterns: Result<Vec<MetricPattern>, _> = run.metric_patterns.iter().map(|p| p.parse()).collect();
        let patterns = match patterns {
            Ok(p) => Some(p),
            Err(e) => {
                v.fail(FailureCode::MetricTranscriptMismatch, format!("run {}: bad metric pattern: {e}", run.run_index));
                None
            }
        };
        for stream in [Stream::Stdout, Stream::Stderr] {
            let name = transcript_entry(run.run_index, stream);
            let summary = run.stream(stream);
            let Some(data) = entries.get(&name) else {
                v.fail(FailureCode::TranscriptMissing, name.clone());
                expected.insert(name);
                continue;
            };
            let actual = Digest::of(data);
            if actual != summary.digest || data.len() as u64 != summary.bytes {
                v.fail(
                    FailureCode::TranscriptDigestMismatch,
                    format!("{name}: {actual} ({} bytes), recorded {} ({} bytes)", data.len(), summary.digest, summary.bytes),
                );
            } else if let Some(patterns) = &patterns {
                let found: Vec<(String, String, u64)> = parse_metrics(data, patterns)
                    .into_iter()
                    .map(|m| (m.name, m.lexical_value, m.line_offset))
                    .collect();
                let mut recorded: Vec<(String, String, u64)> = run
                    .metrics
                    .iter()
                    .filter(|m| m.stream == stream)
                    .map(|m| (m.name.clone(), m.lexical_value.clone(), m.byte_offset))
                    .collect();
                recorded.sort_by_key(|m| m.2);
                if found != recorded {
                    v.fail(
                        FailureCode::MetricTranscriptMismatch,
                        format!("{name}: recorded metrics differ from those printed"),
                    );
                }
            }
            expected.insert(name);
        }
    }

    if let Some(last) = session.runs().last() {
        for f in last.sources_after.files() {
            let Some(recorded) = f.digest else { continue };
            let name = source_entry(&f.path);
            match entries.get(&name) {
                None => v.fail(FailureCode::SourceMissing, name.clone()),
                Some(data) => {
                    let actual = Digest::of(data);
                    if actual != recorded {
                        v.fail(FailureCode::SourceDigestMismatch, format!("{name}: {actual}, recorded {recorded}"));
                    }
                }
            }
            expected.insert(name);
        }
    }

    for name in entries.keys() {
        if !expected.contains(name) {
            v.fail(FailureCode::UnexpectedEntry, name.clone());
        }
    }

    let irregular: usize = session.runs().iter().map(|r| r.telemetry.irregular_gaps()).sum();
    if irregular > 0 {
        v.notes.push(format!("{irregular} telemetry gap(s) outside [t/2, 3t]"));
    }
}

// 7-8. derived artefacts
fn check_derived(session: &SessionRecord, entries: &BundleEntries, v: &mut Verdict) {
    let Some(embedded) = session.hmc() else { return };
    match evaluate(session, &embedded.thresholds) {
        Ok(recomputed) if &recomputed == embedded => {}
        Ok(recomputed) => v.fail(
            FailureCode::HmcRecomputeMismatch,
            format!("embedded {embedded}, recomputed {recomputed}"),
        ),
        Err(e) => v.fail(FailureCode::HmcRecomputeMismatch, e.to_string()),
    }
    match (report::render(session), entries.get(REPORT_ENTRY)) {
        (Ok(text), Some(stored)) if text.as_bytes() == stored.as_slice() => {}
        (Ok(_), Some(_)) => v.fail(FailureCode::ReportMismatch, "report.txt differs from regenerated report"),
        (Ok(_), None) => v.fail(FailureCode::ReportMismatch, "report.txt missing"),
        (Err(e), _) => v.fail(FailureCode::ReportMismatch, e.to_string()),
    }
}
