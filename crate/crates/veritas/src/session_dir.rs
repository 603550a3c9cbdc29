//! The `.veritas/` session directory: one session per working directory.
//!
//! ```text
//! .veritas/
//!   config              flat key = value settings
//!   session.cnf         session state (canonical form once sealed)
//!   session.sha256      digest of session.cnf, checked on every load
//!   attestation.json    present once sealed
//!   transcripts/        run-<i>.stdout, run-<i>.stderr
//!   blobs/              content-addressed source files
//!   lock                held for the duration of each command
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;
use veritas_core::codec::{self, CodecError};
use veritas_core::digest::Digest;
use veritas_core::model::SessionId;
use veritas_core::SessionRecord;

use crate::config::{Config, ConfigError};
use crate::fingerprint;
use crate::now;
use crate::observer::ObserverConfig;
use crate::snapshot::{BlobStore, SourceFilter};
use crate::telemetry::GpuProbe;

pub const DIR_NAME: &str = ".veritas";

#[derive(Debug, Error)]
pub enum SessionDirError {
    #[error("no session here: run `veritas init` first")]
    NotInitialized,
    #[error("a session already exists in {0}")]
    AlreadyInitialized(PathBuf),
    #[error("another veritas command is using this session")]
    Busy,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("bad pattern in config: {0}")]
    Pattern(#[from] globset::Error),
    #[error("session state was modified outside veritas (digest {found}, expected {expected})")]
    StateDigestMismatch { expected: String, found: String },
    #[error("session state is corrupt: {0}")]
    Corrupt(#[from] CodecError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SessionDirError + '_ {
    move |source| SessionDirError::Io { path: path.to_path_buf(), source }
}

/// Writes `data` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, data: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", rand::random::<u32>()));
    let mut f = File::create(&tmp)?;
    f.write_all(data)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

/// Exclusive lock on the session directory, released on drop.
#[derive(Debug)]
pub struct Lock {
    _file: File,
}

#[derive(Debug, Clone)]
pub struct SessionDir {
    project: PathBuf,
    dot: PathBuf,
}

impl SessionDir {
    pub fn at(project: impl Into<PathBuf>) -> Self {
        let project = project.into();
        let dot = project.join(DIR_NAME);
        Self { project, dot }
    }

    pub fn project(&self) -> &Path {
        &self.project
    }
    pub fn path(&self) -> &Path {
        &self.dot
    }
    pub fn exists(&self) -> bool {
        self.dot.join("session.cnf").is_file()
    }
    pub fn config_path(&self) -> PathBuf {
        self.dot.join("config")
    }
    pub fn state_path(&self) -> PathBuf {
        self.dot.join("session.cnf")
    }
    fn state_digest_path(&self) -> PathBuf {
        self.dot.join("session.sha256")
    }
    pub fn attestation_path(&self) -> PathBuf {
        self.dot.join("attestation.json")
    }
    pub fn transcript_dir(&self) -> PathBuf {
        self.dot.join("transcripts")
    }
    pub fn blobs(&self) -> BlobStore {
        BlobStore::new(self.dot.join("blobs"))
    }

    /// Creates the directory with a new open session.
    pub fn init(&self, config: &Config, gpu: Option<&GpuProbe>) -> Result<SessionRecord, SessionDirError> {
        match fs::create_dir(&self.dot) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(SessionDirError::AlreadyInitialized(self.project.clone()))
            }
            Err(e) => return Err(io_err(&self.dot)(e)),
        }
        let _lock = self.lock()?;
        let result = (|| {
            fs::create_dir_all(self.transcript_dir()).map_err(io_err(&self.dot))?;
            let config_path = self.config_path();
            fs::write(&config_path, config.render()).map_err(io_err(&config_path))?;
            let session = SessionRecord::new(
                SessionId::from_bytes(rand::random()),
                now(),
                fingerprint::capture(config, gpu),
            );
            self.save(&session)?;
            Ok(session)
        })();
        if result.is_err() {
            let _ = fs::remove_dir_all(&self.dot);
        }
        result
    }

    /// Takes the session lock, failing fast if it is held.
    pub fn lock(&self) -> Result<Lock, SessionDirError> {
        if !self.dot.is_dir() {
            return Err(SessionDirError::NotInitialized);
        }
        let path = self.dot.join("lock");
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io_err(&path))?;
        // SAFETY: flock on a descriptor we own.
        let r = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
        if r != 0 {
            return Err(SessionDirError::Busy);
        }
        Ok(Lock { _file: file })
    }

    /// Like [`lock`](Self::lock), retrying for up to `wait`.
    pub fn lock_wait(&self, wait: Duration) -> Result<Lock, SessionDirError> {
        let deadline = std::time::Instant::now() + wait;
        loop {
            match self.lock() {
                Err(SessionDirError::Busy) if std::time::Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(20))
                }
                other => return other,
            }
        }
    }

    pub fn config(&self) -> Result<Config, SessionDirError> {
        let path = self.config_path();
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                SessionDirError::NotInitialized
            } else {
                io_err(&path)(e)
            }
        })?;
        text.parse().map_err(|source| SessionDirError::Config { path, source })
    }

    /// Loads the session, checking the state file against its digest.
    pub fn load(&self) -> Result<SessionRecord, SessionDirError> {
        let path = self.state_path();
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                SessionDirError::NotInitialized
            } else {
                io_err(&path)(e)
            }
        })?;
        let digest_path = self.state_digest_path();
        let expected = fs::read_to_string(&digest_path).map_err(io_err(&digest_path))?;
        let found = Digest::of(&bytes).hex();
        if expected.trim() != found {
            return Err(SessionDirError::StateDigestMismatch { expected: expected.trim().into(), found });
        }
        Ok(codec::decode_session(&bytes)?)
    }

    /// Persists the session: working state while open, canonical bytes once
    /// sealed.
    pub fn save(&self, session: &SessionRecord) -> Result<(), SessionDirError> {
        let bytes = if session.is_sealed() { codec::canonicalize(session)? } else { codec::encode_state(session) };
        let path = self.state_path();
        let digest_path = self.state_digest_path();
        write_atomic(&digest_path, format!("{}\n", Digest::of(&bytes).hex()).as_bytes()).map_err(io_err(&digest_path))?;
        write_atomic(&path, &bytes).map_err(io_err(&path))
    }

    pub fn observer_config(&self, config: &Config, gpu: Option<GpuProbe>) -> Result<ObserverConfig, SessionDirError> {
        Ok(ObserverConfig {
            source_root: self.project.join(&config.source_root),
            source_label: config.source_root.clone(),
            filter: SourceFilter::new(&config.include, &config.exclude, config.max_file_bytes)?,
            metric_patterns: config.metric_patterns.clone(),
            telemetry_interval: Duration::from_millis(config.telemetry_interval_ms),
            gpu,
            transcript_dir: self.transcript_dir(),
            blobs: Some(self.blobs()),
        })
    }
}
