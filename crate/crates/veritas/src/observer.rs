//! Runs the author's command unmodified and records what it did.
//!
//! Per stream, a pump thread reads the child's pipe, writes the bytes to the
//! transcript spool, hashes them and scans them for metrics, then hands them
//! to a forwarder thread that copies them to our own stream. Capture never
//! waits on forwarding, so a slow terminal cannot stall the record.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStderr, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use veritas_core::digest::{Digest, StreamHasher};
use veritas_core::metrics::{LineScanner, MetricPattern};
use veritas_core::model::{MetricRecord, ModelError, RunRecord, SourceSnapshot, Stream, StreamSummary};
use veritas_core::{SessionRecord, Timestamp};

use crate::now;
use crate::snapshot::{snapshot_sources, BlobStore, SourceFilter};
use crate::telemetry::{start_sampler, GpuProbe};

/// In-memory transcript size beyond which the spool moves to disk.
pub const SPOOL_MEMORY_LIMIT: usize = 16 << 20;
/// How long to keep draining output after the child exits, for grandchildren
/// that still hold the pipes.
pub const DRAIN_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct ObserverConfig {
    pub source_root: PathBuf,
    /// Relative path of the source root as recorded in snapshots.
    pub source_label: String,
    pub filter: SourceFilter,
    pub metric_patterns: Vec<MetricPattern>,
    pub telemetry_interval: Duration,
    pub gpu: Option<GpuProbe>,
    pub transcript_dir: PathBuf,
    /// Where post-run source contents are kept for the bundle.
    pub blobs: Option<BlobStore>,
}

/// Where forwarded output goes.
pub enum Forward {
    /// Our own stdout and stderr.
    Std,
    Discard,
    Writers(Box<dyn Write + Send>, Box<dyn Write + Send>),
}

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("session is sealed")]
    SessionSealed,
    #[error("empty command")]
    EmptyCommand,
    #[error("cannot start `{program}`: {source}")]
    Spawn { program: String, source: io::Error },
    #[error("transcript store failed: {0}")]
    TranscriptStore(io::Error),
    #[error("cannot snapshot sources under {path}: {source}")]
    Snapshot { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn transcript_path(dir: &Path, run_index: u32, stream: Stream) -> PathBuf {
    dir.join(format!("run-{run_index}.{stream}"))
}

/// Transcript buffer: memory first, a file once it outgrows the limit.
struct Spool {
    mem: Vec<u8>,
    file: Option<(File, PathBuf)>,
    partial: PathBuf,
    limit: usize,
}

impl Spool {
    fn new(partial: PathBuf, limit: usize) -> Self {
        Self { mem: Vec::new(), file: None, partial, limit }
    }

    fn write(&mut self, data: &[u8]) -> io::Result<()> {
        if self.file.is_none() && self.mem.len() + data.len() > self.limit {
            let mut f = File::create(&self.partial)?;
            f.write_all(&self.mem)?;
            self.mem = Vec::new();
            self.file = Some((f, self.partial.clone()));
        }
        match &mut self.file {
            Some((f, _)) => f.write_all(data),
            None => {
                self.mem.extend_from_slice(data);
                Ok(())
            }
        }
    }

    fn persist(self, target: &Path) -> io::Result<()> {
        match self.file {
            Some((f, partial)) => {
                f.sync_all()?;
                drop(f);
                fs::rename(partial, target)
            }
            None => {
                let mut f = File::create(&self.partial)?;
                f.write_all(&self.mem)?;
                f.sync_all()?;
                drop(f);
                fs::rename(&self.partial, target)
            }
        }
    }

    fn discard(self) {
        let _ = fs::remove_file(&self.partial);
    }
}

struct Captured {
    summary: StreamSummary,
    metrics: Vec<MetricRecord>,
    spool: Spool,
    failure: Option<io::Error>,
}

fn wait_readable(fd: i32, timeout_ms: i32) -> bool {
    let mut pfd = libc::pollfd { fd, events: libc::POLLIN, revents: 0 };
    // SAFETY: `pfd` is a valid pollfd for the duration of the call.
    let r = unsafe { libc::poll(&mut pfd, 1, timeout_ms) };
    r > 0
}

fn pump<R: Read + AsRawFd>(
    mut src: R,
    stream: Stream,
    patterns: &[MetricPattern],
    mut spool: Spool,
    sink: mpsc::Sender<Vec<u8>>,
    exited: &AtomicBool,
    exit_deadline: &std::sync::Mutex<Option<Instant>>,
) -> Captured {
    let mut hasher = StreamHasher::new();
    let mut scanner = LineScanner::new(patterns);
    let mut metrics = Vec::new();
    let mut failure = None;
    let mut buf = vec![0u8; 64 * 1024];
    let fd = src.as_raw_fd();
    let record = |found: Vec<veritas_core::metrics::MetricMatch>, metrics: &mut Vec<MetricRecord>, at: Timestamp| {
        metrics.extend(found.into_iter().map(|m| MetricRecord {
            name: m.name,
            lexical_value: m.lexical_value,
            stream,
            byte_offset: m.line_offset,
            observed_at: at,
        }))
    };
    loop {
        if !wait_readable(fd, 100) {
            if exited.load(Ordering::Acquire)
                && exit_deadline.lock().unwrap().is_some_and(|d| Instant::now() >= d)
            {
                break;
            }
            continue;
        }
        let n = match src.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => {
                failure.get_or_insert(e);
                break;
            }
        };
        let chunk = &buf[..n];
        hasher.update(chunk);
        if failure.is_none() {
            if let Err(e) = spool.write(chunk) {
                failure = Some(e);
            }
        }
        let found = scanner.feed(chunk);
        record(found, &mut metrics, now());
        let _ = sink.send(chunk.to_vec());
    }
    record(scanner.finish(), &mut metrics, now());
    let (digest, bytes) = hasher.finish();
    Captured { summary: StreamSummary { digest, bytes }, metrics, spool, failure }
}

fn forwarder(rx: mpsc::Receiver<Vec<u8>>, mut out: Box<dyn Write + Send>) {
    let mut broken = false;
    for chunk in rx {
        if !broken && (out.write_all(&chunk).is_err() || out.flush().is_err()) {
            // The reader went away; keep draining so capture continues.
            broken = true;
        }
    }
}

fn sinks(forward: Forward) -> (Box<dyn Write + Send>, Box<dyn Write + Send>) {
    match forward {
        Forward::Std => (Box::new(io::stdout()), Box::new(io::stderr())),
        Forward::Discard => (Box::new(io::sink()), Box::new(io::sink())),
        Forward::Writers(o, e) => (o, e),
    }
}

/// Blocks until the child has exited, without reaping it, so the final
/// telemetry sample still sees its accounting.
fn wait_exit_unreaped(child: &Child) {
    loop {
        // SAFETY: siginfo_t is plain data; waitid only writes into it.
        let mut info: libc::siginfo_t = unsafe { std::mem::zeroed() };
        let r = unsafe { libc::waitid(libc::P_PID, child.id() as libc::id_t, &mut info, libc::WEXITED | libc::WNOWAIT) };
        if r == 0 || io::Error::last_os_error().kind() != io::ErrorKind::Interrupted {
            return;
        }
    }
}

fn exit_code(status: ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status.code().or_else(|| status.signal().map(|s| 128 + s)).unwrap_or(1)
}

/// What a run produced, beyond the record appended to the session.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
}

fn snapshot(config: &ObserverConfig, store: Option<&BlobStore>) -> Result<SourceSnapshot, ObserverError> {
    snapshot_sources(&config.source_root, &config.source_label, &config.filter, store)
        .map_err(|source| ObserverError::Snapshot { path: config.source_root.clone(), source })
}

/// Runs `argv`, observes it, and appends the resulting run to `session`.
/// A non-zero exit still yields a complete run.
pub fn run_command(
    session: &mut SessionRecord,
    config: &ObserverConfig,
    argv: &[OsString],
    forward: Forward,
) -> Result<RunOutcome, ObserverError> {
    if session.is_sealed() {
        return Err(ObserverError::SessionSealed);
    }
    let Some(program) = argv.first() else {
        return Err(ObserverError::EmptyCommand);
    };
    let run_index = session.next_run_index();
    fs::create_dir_all(&config.transcript_dir).map_err(ObserverError::TranscriptStore)?;
    let sources_before = snapshot(config, None)?;

    let partial = |s: Stream| config.transcript_dir.join(format!(".run-{run_index}.{s}.partial"));
    let started_at = now();
    let mut child = Command::new(program)
        .args(&argv[1..])
        .stdin(Stdio::inherit())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ObserverError::Spawn { program: program.to_string_lossy().into_owned(), source })?;

    let sampler = start_sampler(child.id(), config.telemetry_interval, config.gpu.clone()).ok();
    let exited = Arc::new(AtomicBool::new(false));
    let deadline = Arc::new(std::sync::Mutex::new(None));
    let (out_sink, err_sink) = sinks(forward);

    let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
    let stderr: ChildStderr = child.stderr.take().expect("piped stderr");
    let spawn_pump = |name: &str, stream: Stream, sink: Box<dyn Write + Send>| {
        let (tx, rx) = mpsc::channel();
        let fwd = thread::Builder::new().name(format!("veritas-fwd-{name}")).spawn(move || forwarder(rx, sink));
        let patterns = config.metric_patterns.clone();
        let spool = Spool::new(partial(stream), SPOOL_MEMORY_LIMIT);
        (tx, fwd.expect("spawn forwarder"), patterns, spool)
    };
    let (out_tx, out_fwd, out_pat, out_spool) = spawn_pump("stdout", Stream::Stdout, out_sink);
    let (err_tx, err_fwd, err_pat, err_spool) = spawn_pump("stderr", Stream::Stderr, err_sink);

    let out_pump = {
        let (exited, deadline) = (exited.clone(), deadline.clone());
        thread::spawn(move || pump(stdout, Stream::Stdout, &out_pat, out_spool, out_tx, &exited, &deadline))
    };
    let err_pump = {
        let (exited, deadline) = (exited.clone(), deadline.clone());
        thread::spawn(move || pump(stderr, Stream::Stderr, &err_pat, err_spool, err_tx, &exited, &deadline))
    };

    wait_exit_unreaped(&child);
    let ended_at = now();
    let telemetry = match sampler {
        Some(s) => s.stop(),
        None => veritas_core::model::TelemetryTrace::empty(config.telemetry_interval.as_millis().max(1) as u64),
    };
    let status = child.wait().map_err(ObserverError::TranscriptStore)?;
    *deadline.lock().unwrap() = Some(Instant::now() + DRAIN_GRACE);
    exited.store(true, Ordering::Release);

    let out = out_pump.join().expect("stdout pump panicked");
    let err = err_pump.join().expect("stderr pump panicked");
    let _ = out_fwd.join();
    let _ = err_fwd.join();

    let stdout_path = transcript_path(&config.transcript_dir, run_index, Stream::Stdout);
    let stderr_path = transcript_path(&config.transcript_dir, run_index, Stream::Stderr);
    if let Some(e) = out.failure.or(err.failure) {
        out.spool.discard();
        err.spool.discard();
        return Err(ObserverError::TranscriptStore(e));
    }

    let sources_after = snapshot(config, config.blobs.as_ref())?;

    let mut metrics = out.metrics;
    metrics.extend(err.metrics);
    metrics.sort_by(|a, b| (a.observed_at, a.stream, a.byte_offset).cmp(&(b.observed_at, b.stream, b.byte_offset)));

    let record = RunRecord {
        run_index,
        session_id: session.session_id(),
        command: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        started_at,
        ended_at: ended_at.max(started_at),
        exit_code: exit_code(status),
        stdout: out.summary,
        stderr: err.summary,
        metric_patterns: config.metric_patterns.iter().map(|p| p.as_str().to_string()).collect(),
        metrics,
        sources_before,
        sources_after,
        telemetry,
    };
    record.check()?;

    let persisted = out.spool.persist(&stdout_path).and_then(|_| err.spool.persist(&stderr_path));
    if let Err(e) = persisted {
        let _ = fs::remove_file(&stdout_path);
        let _ = fs::remove_file(&stderr_path);
        return Err(ObserverError::TranscriptStore(e));
    }
    session.append_run(record.clone())?;
    Ok(RunOutcome { record, stdout_path, stderr_path })
}

/// Digest and length of a stored transcript.
pub fn transcript_digest(path: &Path) -> io::Result<(Digest, u64)> {
    let mut f = File::open(path)?;
    let mut h = StreamHasher::new();
    let mut buf = vec![0u8; 256 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            return Ok(h.finish());
        }
        h.update(&buf[..n]);
    }
}
