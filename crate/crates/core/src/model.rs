//! Session, run and telemetry records.
//!
//! Value types here are plain data. [`SessionRecord`] is the exception: its
//! fields are private so that the append/seal rules cannot be bypassed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::digest::Digest;
use crate::hmc::HmcReport;
use crate::time::Timestamp;

pub const FORMAT_VERSION: u64 = 1;

/// 128-bit session identifier, rendered as 32 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId([u8; 16]);

impl SessionId {
    pub const fn from_bytes(b: [u8; 16]) -> Self {
        Self(b)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("session id must be 32 lowercase hex characters")]
pub struct SessionIdError;

impl FromStr for SessionId {
    type Err = SessionIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        if b.len() != 32 || !b.iter().all(|c| matches!(c, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(SessionIdError);
        }
        let mut out = [0u8; 16];
        for (i, pair) in b.chunks_exact(2).enumerate() {
            let hi = hexval(pair[0]);
            let lo = hexval(pair[1]);
            out[i] = (hi << 4) | lo;
        }
        Ok(Self(out))
    }
}

fn hexval(c: u8) -> u8 {
    match c {
        b'0'..=b'9' => c - b'0',
        _ => c - b'a' + 10,
    }
}

macro_rules! labelled_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $label),+ }
            }

            pub fn from_label(s: &str) -> Option<Self> {
                match s { $($label => Some(Self::$variant),)+ _ => None }
            }
        }

        impl ::core::fmt::Display for $name {
            fn fmt(&self, f: &mut ::core::fmt::Formatter<'_>) -> ::core::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}
pub(crate) use labelled_enum;

labelled_enum!(
    /// How much environment detail a session discloses.
    Tier { Minimal => "minimal", Full => "full" }
);

labelled_enum!(SessionState { Open => "open", Sealed => "sealed" });

labelled_enum!(Stream { Stdout => "stdout", Stderr => "stderr" });

labelled_enum!(EntryKind { File => "file", Symlink => "symlink" });

/// One metric as printed by the observed process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRecord {
    pub name: String,
    /// The exact characters printed. This, not a parsed float, is what the
    /// canonical form carries.
    pub lexical_value: String,
    pub stream: Stream,
    /// Offset of the start of the line the metric was found on.
    pub byte_offset: u64,
    pub observed_at: Timestamp,
}

impl MetricRecord {
    pub fn numeric_value(&self) -> f64 {
        // lexical_value is produced by the metric grammar, which only admits
        // lexemes that `f64::from_str` accepts.
        self.lexical_value.parse().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDigest {
    pub path: String,
    pub kind: EntryKind,
    pub size_bytes: u64,
    /// `None` when the file could not be read; `error` says why.
    pub digest: Option<Digest>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSnapshot {
    pub root: String,
    files: Vec<FileDigest>,
}

impl SourceSnapshot {
    /// Sorts `files` by path. Fails on duplicate or malformed paths.
    pub fn new(root: impl Into<String>, mut files: Vec<FileDigest>) -> Result<Self, ModelError> {
        files.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
        let snap = Self { root: root.into(), files };
        snap.check()?;
        Ok(snap)
    }

    pub fn files(&self) -> &[FileDigest] {
        &self.files
    }

    pub fn total_files(&self) -> u64 {
        self.files.len() as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.size_bytes).sum()
    }

    pub fn get(&self, path: &str) -> Option<&FileDigest> {
        self.files
            .binary_search_by(|f| f.path.as_bytes().cmp(path.as_bytes()))
            .ok()
            .map(|i| &self.files[i])
    }

    fn check(&self) -> Result<(), ModelError> {
        for w in self.files.windows(2) {
            if w[0].path.as_bytes() >= w[1].path.as_bytes() {
                return Err(ModelError::invariant(format!(
                    "snapshot paths not strictly sorted at `{}`",
                    w[1].path
                )));
            }
        }
        for f in &self.files {
            check_relative_path(&f.path)?;
            if f.digest.is_some() == f.error.is_some() {
                return Err(ModelError::invariant(format!(
                    "`{}` must carry exactly one of digest or error",
                    f.path
                )));
            }
        }
        Ok(())
    }
}

/// Rejects absolute paths, empty segments, `.`, `..` and control characters.
pub fn check_relative_path(path: &str) -> Result<(), ModelError> {
    let ok = !path.is_empty()
        && !path.chars().any(char::is_control)
        && path.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..");
    if ok {
        Ok(())
    } else {
        Err(ModelError::invariant(format!("invalid relative path `{path}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetrySample {
    pub at: Timestamp,
    /// Cumulative CPU time of the whole process tree.
    pub cpu_time_ms: u64,
    pub rss_bytes: u64,
    /// Absent when no accelerator was observed (never reported as zero).
    pub gpu_util_pct: Option<u8>,
    pub gpu_mem_bytes: Option<u64>,
    pub disk_read_bytes: u64,
    pub disk_write_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetryTrace {
    pub interval_ms: u64,
    pub samples: Vec<TelemetrySample>,
}

impl TelemetryTrace {
    pub fn empty(interval_ms: u64) -> Self {
        Self { interval_ms, samples: Vec::new() }
    }

    pub fn interval_seconds(&self) -> f64 {
        self.interval_ms as f64 / 1000.0
    }

    /// Structural checks only: positive interval, strictly increasing
    /// timestamps, GPU utilisation within 0..=100. Counter monotonicity is
    /// judged by the consistency score, not here.
    pub fn check(&self) -> Result<(), ModelError> {
        if self.interval_ms == 0 {
            return Err(ModelError::invariant("telemetry interval must be positive".into()));
        }
        for w in self.samples.windows(2) {
            if w[1].at <= w[0].at {
                return Err(ModelError::invariant("telemetry timestamps not increasing".into()));
            }
        }
        if self.samples.iter().any(|s| s.gpu_util_pct.is_some_and(|g| g > 100)) {
            return Err(ModelError::invariant("gpu utilisation above 100%".into()));
        }
        Ok(())
    }

    /// True when any cumulative counter decreases between samples.
    pub fn has_counter_regression(&self) -> bool {
        self.samples.windows(2).any(|w| {
            w[1].cpu_time_ms < w[0].cpu_time_ms
                || w[1].disk_read_bytes < w[0].disk_read_bytes
                || w[1].disk_write_bytes < w[0].disk_write_bytes
        })
    }

    /// Gaps between consecutive samples that fall outside
    /// `[interval/2, 3*interval]`, ignoring the final gap.
    pub fn irregular_gaps(&self) -> usize {
        let n = self.samples.len();
        if n < 3 {
            return 0;
        }
        let lo = (self.interval_ms / 2) as i64;
        let hi = (self.interval_ms * 3) as i64;
        self.samples[..n - 1]
            .windows(2)
            .filter(|w| {
                let gap = w[1].at.millis_since(w[0].at);
                gap < lo || gap > hi
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSummary {
    pub digest: Digest,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub run_index: u32,
    pub session_id: SessionId,
    pub command: Vec<String>,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub exit_code: i32,
    pub stdout: StreamSummary,
    pub stderr: StreamSummary,
    /// Metric patterns in force for this run, in their textual form, so a
    /// verifier can re-derive `metrics` from the transcripts.
    pub metric_patterns: Vec<String>,
    pub metrics: Vec<MetricRecord>,
    pub sources_before: SourceSnapshot,
    pub sources_after: SourceSnapshot,
    pub telemetry: TelemetryTrace,
}

impl RunRecord {
    pub fn wall_ms(&self) -> i64 {
        self.ended_at.millis_since(self.started_at)
    }

    pub fn stream(&self, s: Stream) -> &StreamSummary {
        match s {
            Stream::Stdout => &self.stdout,
            Stream::Stderr => &self.stderr,
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.ended_at < self.started_at {
            return Err(ModelError::invariant(format!("run {}: ends before it starts", self.run_index)));
        }
        if self.command.is_empty() {
            return Err(ModelError::invariant(format!("run {}: empty command", self.run_index)));
        }
        for m in &self.metrics {
            if m.name.is_empty() || m.lexical_value.is_empty() {
                return Err(ModelError::invariant(format!("run {}: empty metric", self.run_index)));
            }
            if m.byte_offset >= self.stream(m.stream).bytes {
                return Err(ModelError::invariant(format!(
                    "run {}: metric `{}` offset {} outside {} stream",
                    self.run_index, m.name, m.byte_offset, m.stream
                )));
            }
        }
        self.sources_before.check()?;
        self.sources_after.check()?;
        self.telemetry.check()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameworkVersion {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomSeed {
    pub name: String,
    pub value: i128,
}

/// Full-tier host details.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostInfo {
    pub os_name_version: String,
    pub cpu_model: String,
    pub cpu_cores: u64,
    /// `None` when no accelerator is present.
    pub gpu_model: Option<String>,
    pub total_ram_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvironmentFingerprint {
    pub framework_versions: Vec<FrameworkVersion>,
    pub random_seeds: Vec<RandomSeed>,
    host: Option<HostInfo>,
}

impl EnvironmentFingerprint {
    pub fn minimal(framework_versions: Vec<FrameworkVersion>, random_seeds: Vec<RandomSeed>) -> Self {
        Self { framework_versions, random_seeds, host: None }
    }

    pub fn full(
        framework_versions: Vec<FrameworkVersion>,
        random_seeds: Vec<RandomSeed>,
        host: HostInfo,
    ) -> Self {
        Self { framework_versions, random_seeds, host: Some(host) }
    }

    pub fn tier(&self) -> Tier {
        if self.host.is_some() {
            Tier::Full
        } else {
            Tier::Minimal
        }
    }

    pub fn host(&self) -> Option<&HostInfo> {
        self.host.as_ref()
    }

    /// True when the fingerprint claims an accelerator.
    pub fn claims_gpu(&self) -> bool {
        self.host.as_ref().is_some_and(|h| h.gpu_model.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("session is sealed")]
    Sealed,
    #[error("session is still open")]
    Open,
    #[error("run belongs to session {found}, expected {expected}")]
    ForeignRun { expected: SessionId, found: SessionId },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl ModelError {
    pub(crate) fn invariant(msg: String) -> Self {
        Self::Invariant(msg)
    }
}

/// The attested object: an ordered set of linked runs plus the environment.
///
/// A sealed record is immutable: every mutating method returns
/// [`ModelError::Sealed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    session_id: SessionId,
    created_at: Timestamp,
    runs: Vec<RunRecord>,
    environment: EnvironmentFingerprint,
    state: SessionState,
    hmc: Option<HmcReport>,
}

impl SessionRecord {
    pub fn new(session_id: SessionId, created_at: Timestamp, environment: EnvironmentFingerprint) -> Self {
        Self {
            session_id,
            created_at: created_at.truncate_to_seconds(),
            runs: Vec::new(),
            environment,
            state: SessionState::Open,
            hmc: None,
        }
    }

    /// Reassembles a record from decoded parts, checking every invariant.
    pub fn from_parts(
        session_id: SessionId,
        created_at: Timestamp,
        runs: Vec<RunRecord>,
        environment: EnvironmentFingerprint,
        state: SessionState,
        hmc: Option<HmcReport>,
    ) -> Result<Self, ModelError> {
        let s = Self { session_id, created_at, runs, environment, state, hmc };
        s.check()?;
        Ok(s)
    }

    pub fn session_id(&self) -> SessionId {
        self.session_id
    }
    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }
    pub fn runs(&self) -> &[RunRecord] {
        &self.runs
    }
    pub fn run_count(&self) -> u64 {
        self.runs.len() as u64
    }
    pub fn environment(&self) -> &EnvironmentFingerprint {
        &self.environment
    }
    pub fn tier(&self) -> Tier {
        self.environment.tier()
    }
    pub fn state(&self) -> SessionState {
        self.state
    }
    pub fn is_sealed(&self) -> bool {
        self.state == SessionState::Sealed
    }
    pub fn hmc(&self) -> Option<&HmcReport> {
        self.hmc.as_ref()
    }

    pub fn next_run_index(&self) -> u32 {
        self.runs.len() as u32
    }

    fn ensure_open(&self) -> Result<(), ModelError> {
        if self.is_sealed() {
            Err(ModelError::Sealed)
        } else {
            Ok(())
        }
    }

    pub fn append_run(&mut self, run: RunRecord) -> Result<(), ModelError> {
        self.ensure_open()?;
        if run.session_id != self.session_id {
            return Err(ModelError::ForeignRun { expected: self.session_id, found: run.session_id });
        }
        if run.run_index != self.next_run_index() {
            return Err(ModelError::invariant(format!(
                "run index {} does not follow {}",
                run.run_index,
                self.runs.len()
            )));
        }
        if self.runs.last().is_some_and(|prev| run.started_at < prev.started_at) {
            return Err(ModelError::invariant("runs must be appended in start order".into()));
        }
        run.check()?;
        self.runs.push(run);
        Ok(())
    }

    /// Replaces the author-declared parts of the fingerprint.
    pub fn declare(
        &mut self,
        framework_versions: Vec<FrameworkVersion>,
        random_seeds: Vec<RandomSeed>,
    ) -> Result<(), ModelError> {
        self.ensure_open()?;
        self.environment.framework_versions = framework_versions;
        self.environment.random_seeds = random_seeds;
        Ok(())
    }

    /// Returns the sealed counterpart of this open session. `self` is left
    /// untouched so that a failed seal leaves nothing half-done.
    pub fn sealed_with(&self, hmc: HmcReport) -> Result<SessionRecord, ModelError> {
        self.ensure_open()?;
        let mut sealed = self.clone();
        sealed.state = SessionState::Sealed;
        sealed.hmc = Some(hmc);
        Ok(sealed)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.created_at != self.created_at.truncate_to_seconds() {
            return Err(ModelError::invariant("created_at must have second precision".into()));
        }
        if self.is_sealed() != self.hmc.is_some() {
            return Err(ModelError::invariant("hmc report present iff sealed".into()));
        }
        for (i, run) in self.runs.iter().enumerate() {
            if run.run_index as usize != i {
                return Err(ModelError::invariant(format!("run {} has index {}", i, run.run_index)));
            }
            if run.session_id != self.session_id {
                return Err(ModelError::ForeignRun { expected: self.session_id, found: run.session_id });
            }
            run.check()?;
        }
        if self.runs.windows(2).any(|w| w[1].started_at < w[0].started_at) {
            return Err(ModelError::invariant("runs not ordered by start time".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    pub const SID: &str = "0123456789abcdef0123456789abcdef";

    pub fn sid() -> SessionId {
        SID.parse().unwrap()
    }

    pub fn t(ms: i64) -> Timestamp {
        // 2026-01-01T00:00:00Z
        Timestamp::from_unix_millis(1_767_225_600_000 + ms)
    }

    pub fn snapshot() -> SourceSnapshot {
        SourceSnapshot::new(
            ".",
            vec![
                FileDigest {
                    path: "train.py".into(),
                    kind: EntryKind::File,
                    size_bytes: 5,
                    digest: Some(Digest::of(b"print")),
                    error: None,
                },
                FileDigest {
                    path: "conf/lr.txt".into(),
                    kind: EntryKind::File,
                    size_bytes: 4,
                    digest: Some(Digest::of(b"0.01")),
                    error: None,
                },
            ],
        )
        .unwrap()
    }

    pub fn sample(at: i64, cpu: u64) -> TelemetrySample {
        TelemetrySample {
            at: t(at),
            cpu_time_ms: cpu,
            rss_bytes: 1 << 20,
            gpu_util_pct: None,
            gpu_mem_bytes: None,
            disk_read_bytes: 0,
            disk_write_bytes: 0,
        }
    }

    /// A run starting at `start` ms lasting `wall` ms, with samples at every
    /// second and `cpu` ms of CPU at the end. Prints `metrics`.
    pub fn run(index: u32, start: i64, wall: i64, cpu: u64, metrics: &[(&str, &str)]) -> RunRecord {
        let stdout: String = metrics.iter().map(|(n, v)| alloc::format!("{n}: {v}\n")).collect();
        let mut offset = 0u64;
        let metrics = metrics
            .iter()
            .map(|(n, v)| {
                let m = MetricRecord {
                    name: n.to_string(),
                    lexical_value: v.to_string(),
                    stream: Stream::Stdout,
                    byte_offset: offset,
                    observed_at: t(start + wall / 2),
                };
                offset += (n.len() + v.len() + 3) as u64;
                m
            })
            .collect();
        let samples = (1..=wall / 1000)
            .map(|s| sample(start + s * 1000, cpu * (s as u64) / (wall as u64 / 1000)))
            .collect();
        RunRecord {
            run_index: index,
            session_id: sid(),
            command: vec!["python".into(), "train.py".into()],
            started_at: t(start),
            ended_at: t(start + wall),
            exit_code: 0,
            stdout: StreamSummary { digest: Digest::of(stdout.as_bytes()), bytes: stdout.len() as u64 },
            stderr: StreamSummary { digest: Digest::of(b""), bytes: 0 },
            metric_patterns: vec!["default".into()],
            metrics,
            sources_before: snapshot(),
            sources_after: snapshot(),
            telemetry: TelemetryTrace { interval_ms: 1000, samples },
        }
    }

    pub fn host(gpu: Option<&str>) -> HostInfo {
        HostInfo {
            os_name_version: "Linux 6.1".into(),
            cpu_model: "Test CPU @ 3.70GHz".into(),
            cpu_cores: 16,
            gpu_model: gpu.map(Into::into),
            total_ram_bytes: 64 << 30,
        }
    }

    pub fn session(runs: Vec<RunRecord>) -> SessionRecord {
        let env = EnvironmentFingerprint::full(
            vec![FrameworkVersion { name: "torch".into(), version: "2.3.0".into() }],
            vec![RandomSeed { name: "seed".into(), value: 42 }],
            host(None),
        );
        let mut s = SessionRecord::new(sid(), t(-5000), env);
        for r in runs {
            s.append_run(r).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::hmc::{evaluate, Thresholds};
    use alloc::vec;

    #[test]
    fn snapshot_orders_and_totals() {
        let f = |p: &str, n: u64| FileDigest {
            path: p.into(),
            kind: EntryKind::File,
            size_bytes: n,
            digest: Some(Digest::of(b"")),
            error: None,
        };
        let s = SourceSnapshot::new(".", vec![f("b/c.py", 5), f("a.py", 3)]).unwrap();
        let paths: Vec<_> = s.files().iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["a.py", "b/c.py"]);
        assert_eq!((s.total_files(), s.total_bytes()), (2, 8));
        assert!(SourceSnapshot::new(".", vec![f("a", 1), f("a", 1)]).is_err());
        for bad in ["/abs", "a/../b", "./a", "a//b", "a/", ""] {
            assert!(SourceSnapshot::new(".", vec![f(bad, 1)]).is_err(), "{bad}");
        }
    }

    #[test]
    fn sealed_session_rejects_mutation() {
        let open = session(vec![run(0, 0, 2000, 500, &[("loss", "0.5")])]);
        let hmc = evaluate(&open, &Thresholds::default()).unwrap();
        let mut sealed = open.sealed_with(hmc.clone()).unwrap();
        assert!(!open.is_sealed());
        assert_eq!(sealed.append_run(run(1, 3000, 2000, 500, &[])), Err(ModelError::Sealed));
        assert_eq!(sealed.declare(vec![], vec![]), Err(ModelError::Sealed));
        assert_eq!(sealed.sealed_with(hmc).unwrap_err(), ModelError::Sealed);
        assert_eq!(sealed.run_count(), 1);
    }

    #[test]
    fn append_enforces_linking_and_order() {
        let mut s = session(vec![run(0, 5000, 1000, 200, &[])]);
        assert!(matches!(s.append_run(run(2, 9000, 1000, 200, &[])), Err(ModelError::Invariant(_))));
        assert!(matches!(s.append_run(run(1, 1000, 1000, 200, &[])), Err(ModelError::Invariant(_))));
        let mut foreign = run(1, 9000, 1000, 200, &[]);
        foreign.session_id = SessionId::from_bytes([7; 16]);
        assert!(matches!(s.append_run(foreign), Err(ModelError::ForeignRun { .. })));
        s.append_run(run(1, 9000, 1000, 200, &[])).unwrap();
        assert_eq!(s.run_count(), 2);
    }

    #[test]
    fn metric_offsets_must_lie_inside_stream() {
        let mut r = run(0, 0, 1000, 100, &[("acc", "0.9")]);
        r.metrics[0].byte_offset = r.stdout.bytes;
        assert!(r.check().is_err());
    }

    #[test]
    fn telemetry_structure() {
        let mut tr = TelemetryTrace { interval_ms: 1000, samples: vec![sample(0, 1), sample(1000, 2)] };
        assert!(tr.check().is_ok());
        tr.samples[1].at = tr.samples[0].at;
        assert!(tr.check().is_err());
        tr.samples[1] = sample(1000, 0);
        assert!(tr.check().is_ok());
        assert!(tr.has_counter_regression());
    }

    #[test]
    fn gap_check_ignores_final_partial_gap() {
        let tr = TelemetryTrace {
            interval_ms: 1000,
            samples: vec![sample(0, 0), sample(1000, 0), sample(2000, 0), sample(2010, 0)],
        };
        assert_eq!(tr.irregular_gaps(), 0);
        let tr = TelemetryTrace {
            interval_ms: 1000,
            samples: vec![sample(0, 0), sample(4000, 0), sample(5000, 0)],
        };
        assert_eq!(tr.irregular_gaps(), 1);
    }
}
