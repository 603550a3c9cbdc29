//! Append-only, hash-chained audit log.
//!
//! One canonical JSON object per line. Each entry carries the hash of the
//! previous entry (`prev`) and its own hash over every other field, so
//! editing, dropping or reordering lines breaks the chain.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use veritas_core::canon::{self, Fields, Object, Value};
use veritas_core::digest::Digest;
use veritas_core::time::Precision;
use veritas_core::Timestamp;

pub const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    KeyCreated,
    KeyRotated,
    Sign { digest: String, session_id: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub seq: u64,
    pub prev: String,
    pub at: Timestamp,
    pub key_id: String,
    pub event: Event,
    pub hash: String,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("audit log line {line}: {reason}")]
    Broken { line: usize, reason: String },
}

fn body(seq: u64, prev: &str, at: Timestamp, key_id: &str, event: &Event) -> Object {
    let (name, digest, session) = match event {
        Event::KeyCreated => ("key-created", None, None),
        Event::KeyRotated => ("key-rotated", None, None),
        Event::Sign { digest, session_id } => ("sign", Some(digest.as_str()), session_id.as_deref()),
    };
    Object::new()
        .with("at", Value::Str(at.to_rfc3339_millis()))
        .with("digest", Value::opt(digest, Value::from))
        .with("event", name)
        .with("key_id", key_id)
        .with("prev", prev)
        .with("seq", seq)
        .with("session_id", Value::opt(session, Value::from))
}

fn entry_hash(o: &Object) -> String {
    Digest::of(&canon::encode(&o.clone().build())).hex()
}

fn parse_line(line: &str) -> Result<Entry, String> {
    let v = canon::parse(line.as_bytes()).map_err(|e| e.to_string())?;
    let mut f = Fields::new(v, "audit entry").map_err(|e| e.to_string())?;
    let e = (|| {
        let at = f.string("at")?;
        let digest = f.opt_string("digest")?;
        let event = f.string("event")?;
        let hash = f.string("hash")?;
        let key_id = f.string("key_id")?;
        let prev = f.string("prev")?;
        let seq = f.u64("seq")?;
        let session_id = f.opt_string("session_id")?;
        Ok::<_, canon::FieldError>((at, digest, event, hash, key_id, prev, seq, session_id))
    })()
    .map_err(|e| e.to_string())?;
    f.finish().map_err(|e| e.to_string())?;
    let (at, digest, event, hash, key_id, prev, seq, session_id) = e;
    let at = Timestamp::parse(&at, Precision::Millis).map_err(|e| e.to_string())?;
    let event = match (event.as_str(), digest) {
        ("key-created", None) if session_id.is_none() => Event::KeyCreated,
        ("key-rotated", None) if session_id.is_none() => Event::KeyRotated,
        ("sign", Some(digest)) => Event::Sign { digest, session_id },
        (other, _) => return Err(format!("unexpected event `{other}`")),
    };
    Ok(Entry { seq, prev, at, key_id, event, hash })
}

/// Parses a whole log and checks the chain.
pub fn verify_chain(text: &str) -> Result<Vec<Entry>, AuditError> {
    let mut prev = GENESIS.to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let broken = |reason: String| AuditError::Broken { line: i + 1, reason };
        let e = parse_line(line).map_err(broken)?;
        if e.seq != i as u64 {
            return Err(broken(format!("sequence {} out of order", e.seq)));
        }
        if e.prev != prev {
            return Err(broken("previous-entry hash does not match".into()));
        }
        if entry_hash(&body(e.seq, &e.prev, e.at, &e.key_id, &e.event)) != e.hash {
            return Err(broken("entry hash does not match contents".into()));
        }
        prev = e.hash.clone();
        out.push(e);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(AuditError::Broken { line: out.len(), reason: "truncated final line".into() });
    }
    Ok(out)
}

pub struct AuditLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
    last_hash: String,
    /// Issuances by digest hex: (key id, signing time).
    issued: HashMap<String, Vec<(String, Timestamp)>>,
}

impl AuditLog {
    /// Opens (or creates) the log, verifying the existing chain.
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let io = |source| AuditError::Io { path: path.into(), source };
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let entries = verify_chain(&text)?;
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let mut issued: HashMap<String, Vec<(String, Timestamp)>> = HashMap::new();
        for e in &entries {
            if let Event::Sign { digest, .. } = &e.event {
                issued.entry(digest.clone()).or_default().push((e.key_id.clone(), e.at));
            }
        }
        Ok(Self {
            path: path.into(),
            file,
            next_seq: entries.len() as u64,
            last_hash: entries.last().map_or_else(|| GENESIS.to_string(), |e| e.hash.clone()),
            issued,
        })
    }

    pub fn append(&mut self, at: Timestamp, key_id: &str, event: Event) -> Result<Entry, AuditError> {
        let o = body(self.next_seq, &self.last_hash, at, key_id, &event);
        let hash = entry_hash(&o);
        let mut line = canon::encode(&o.with("hash", hash.as_str()).build());
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|source| AuditError::Io { path: self.path.clone(), source })?;
        let entry = Entry { seq: self.next_seq, prev: self.last_hash.clone(), at, key_id: key_id.into(), event, hash };
        if let Event::Sign { digest, .. } = &entry.event {
            self.issued.entry(digest.clone()).or_default().push((key_id.into(), at));
        }
        self.next_seq += 1;
        self.last_hash = entry.hash.clone();
        Ok(entry)
    }

    pub fn issuances(&self, digest_hex: &str) -> &[(String, Timestamp)] {
        self.issued.get(digest_hex).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }
}
