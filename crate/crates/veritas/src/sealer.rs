//! Sealing: score, canonicalize, obtain the attestation, write the bundle.
//! All or nothing: on any failure the session stays open and unchanged.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use veritas_core::codec::{self, CodecError};
use veritas_core::digest::Digest;
use veritas_core::hmc::{self, HmcError, HmcReport, Thresholds};
use veritas_core::model::{ModelError, Stream};
use veritas_core::report;
use veritas_core::verify::{
    build_manifest, source_entry, transcript_entry, BundleEntries, ATTESTATION_ENTRY, MANIFEST_ENTRY, REPORT_ENTRY,
    SESSION_ENTRY,
};
use veritas_core::{Attestation, SessionRecord};

use crate::bundle::{self, BundleError};
use crate::client::{self, ClientError};
use crate::observer::{transcript_digest, transcript_path};
use crate::session_dir::{write_atomic, SessionDir, SessionDirError};
use crate::snapshot::BlobStore;

#[derive(Debug, Error)]
pub enum SealError {
    #[error(transparent)]
    Dir(#[from] SessionDirError),
    #[error("session is already sealed")]
    Sealed,
    #[error("session has no runs to seal")]
    EmptySession,
    #[error("session state does not match the recorded transcripts: {0}")]
    StateTampered(String),
    #[error(transparent)]
    Service(#[from] ClientError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("bundle written to {0} does not read back identically")]
    ReadbackMismatch(PathBuf),
    #[error(transparent)]
    Hmc(#[from] HmcError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct SealOutcome {
    pub output: PathBuf,
    pub digest: Digest,
    pub attestation: Attestation,
    pub hmc: HmcReport,
    pub run_count: u64,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SealError + '_ {
    move |source| SealError::Io { path: path.to_path_buf(), source }
}

/// Checks the session against the transcripts on disk: every run's
/// transcripts must be present and match, and no transcript may exist for a
/// run the session does not list.
pub fn cross_check(session: &SessionRecord, transcripts: &Path) -> Result<(), SealError> {
    for run in session.runs() {
        for stream in [Stream::Stdout, Stream::Stderr] {
            let path = transcript_path(transcripts, run.run_index, stream);
            let (digest, bytes) = transcript_digest(&path)
                .map_err(|e| SealError::StateTampered(format!("{}: {e}", path.display())))?;
            let s = run.stream(stream);
            if digest != s.digest || bytes != s.bytes {
                return Err(SealError::StateTampered(format!("{} differs from the recorded digest", path.display())));
            }
        }
    }
    let listed = session.run_count();
    if let Ok(dir) = fs::read_dir(transcripts) {
        for e in dir.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            let index = name.strip_prefix("run-").and_then(|r| r.split('.').next()).and_then(|i| i.parse::<u64>().ok());
            if let Some(i) = index.filter(|i| *i >= listed) {
                return Err(SealError::StateTampered(format!(
                    "transcript {name} belongs to run {i}, but the session lists {listed} run(s)"
                )));
            }
        }
    }
    Ok(())
}

/// Assembles every bundle entry, including the manifest.
pub fn build_entries(
    sealed: &SessionRecord,
    attestation: &Attestation,
    transcripts: &Path,
    blobs: &BlobStore,
) -> Result<BundleEntries, SealError> {
    let mut entries = BundleEntries::new();
    entries.insert(SESSION_ENTRY.into(), codec::canonicalize(sealed)?);
    entries.insert(ATTESTATION_ENTRY.into(), attestation.encode());
    entries.insert(REPORT_ENTRY.into(), report::render(sealed)?.into_bytes());
    for run in sealed.runs() {
        for stream in [Stream::Stdout, Stream::Stderr] {
            let path = transcript_path(transcripts, run.run_index, stream);
            let data = fs::read(&path).map_err(io_err(&path))?;
            if Digest::of(&data) != run.stream(stream).digest {
                return Err(SealError::StateTampered(format!("{} changed during sealing", path.display())));
            }
            entries.insert(transcript_entry(run.run_index, stream), data);
        }
    }
    if let Some(last) = sealed.runs().last() {
        for f in last.sources_after.files() {
            let Some(d) = f.digest else { continue };
            let data = blobs.get(&d).map_err(io_err(&blobs.path(&d)))?;
            entries.insert(source_entry(&f.path), data);
        }
    }
    let manifest = build_manifest(&entries);
    entries.insert(MANIFEST_ENTRY.into(), manifest.into_bytes());
    Ok(entries)
}

/// Seals the session in `dir`, writing the bundle to `output`.
pub fn seal(dir: &SessionDir, service_url: &str, output: &Path) -> Result<SealOutcome, SealError> {
    let _lock = dir.lock()?;
    let config = dir.config()?;
    let session = dir.load()?;
    seal_session(dir, &session, &config.thresholds, service_url, output)
}

fn seal_session(
    dir: &SessionDir,
    session: &SessionRecord,
    thresholds: &Thresholds,
    service_url: &str,
    output: &Path,
) -> Result<SealOutcome, SealError> {
    if session.is_sealed() {
        return Err(SealError::Sealed);
    }
    if session.runs().is_empty() {
        return Err(SealError::EmptySession);
    }
    cross_check(session, &dir.transcript_dir())?;

    let report = hmc::evaluate(session, thresholds)?;
    let sealed = session.sealed_with(report.clone())?;
    let digest = codec::session_digest(&sealed)?;
    let attestation = client::request_attestation(service_url, &digest, Some(session.session_id()))?;

    let entries = build_entries(&sealed, &attestation, &dir.transcript_dir(), &dir.blobs())?;
    let bytes = bundle::write_bundle(&entries)?;
    let tmp = output.with_file_name(format!(
        ".{}.tmp-{}",
        output.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into()),
        rand::random::<u32>()
    ));
    write_atomic(&tmp, &bytes).map_err(io_err(&tmp))?;
    let readback = fs::read(&tmp).map_err(io_err(&tmp));
    let verified = readback.and_then(|r| {
        let ok = Digest::of(&r) == Digest::of(&bytes)
            && bundle::read_bundle(&r)
                .ok()
                .and_then(|e| e.get(SESSION_ENTRY).map(|s| Digest::of(s) == attestation.session_digest))
                .unwrap_or(false);
        if ok {
            Ok(())
        } else {
            Err(SealError::ReadbackMismatch(output.to_path_buf()))
        }
    });
    if let Err(e) = verified {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    if let Err(e) = fs::rename(&tmp, output) {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(output)(e));
    }

    let att_path = dir.attestation_path();
    write_atomic(&att_path, &attestation.encode()).map_err(io_err(&att_path))?;
    dir.save(&sealed)?;
    Ok(SealOutcome { output: output.to_path_buf(), digest, attestation, hmc: report, run_count: sealed.run_count() })
}
