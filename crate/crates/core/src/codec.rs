//! Canonical byte form of a session and the session digest.
//!
//! The same encoding serves two purposes: the sealed form (`session.cnf`,
//! whose SHA-256 is what gets signed) and the working state of an open
//! session on disk.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::canon::{self, FieldError, Fields, Object, Value};
use crate::digest::Digest;
use crate::hmc::{HmcError, HmcFlag, HmcFlagCode, HmcReport, HmcVerdict, Thresholds};
use crate::model::*;
use crate::time::{Precision, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("session is still open; seal it before canonicalizing")]
    SessionStillOpen,
    #[error(transparent)]
    Syntax(#[from] canon::ParseError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid value for `{field}`: {reason}")]
    Value { field: &'static str, reason: String },
    #[error("unsupported format_version {0}")]
    Version(i128),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hmc(#[from] HmcError),
}

fn bad(field: &'static str, reason: impl ToString) -> CodecError {
    CodecError::Value { field, reason: reason.to_string() }
}

/// Canonical bytes of a sealed session.
pub fn canonicalize(session: &SessionRecord) -> Result<Vec<u8>, CodecError> {
    if !session.is_sealed() {
        return Err(CodecError::SessionStillOpen);
    }
    Ok(canon::encode(&session_value(session)))
}

/// SHA-256 over [`canonicalize`].
pub fn session_digest(session: &SessionRecord) -> Result<Digest, CodecError> {
    canonicalize(session).map(|b| Digest::of(&b))
}

/// Encodes a session in any state, for working storage.
pub fn encode_state(session: &SessionRecord) -> Vec<u8> {
    canon::encode(&session_value(session))
}

/// Parses canonical bytes back into a session, checking every structural
/// invariant.
pub fn decode_session(bytes: &[u8]) -> Result<SessionRecord, CodecError> {
    let value = canon::parse(bytes)?;
    session_from(value)
}

fn ts_millis(t: Timestamp) -> Value {
    Value::Str(t.to_rfc3339_millis())
}

fn digest_value(d: &Digest) -> Value {
    Value::Str(d.to_string())
}

fn session_value(s: &SessionRecord) -> Value {
    Object::new()
        .with("created_at", Value::Str(s.created_at().to_rfc3339_seconds()))
        .with("environment", environment_value(s.environment()))
        .with("format_version", FORMAT_VERSION)
        .with("hmc", Value::opt(s.hmc(), hmc_value))
        .with("run_count", s.run_count())
        .with("runs", Value::Array(s.runs().iter().map(run_value).collect()))
        .with("session_id", Value::Str(s.session_id().to_string()))
        .with("state", s.state().as_str())
        .with("tier", s.tier().as_str())
        .build()
}

fn environment_value(e: &EnvironmentFingerprint) -> Value {
    let fw = e
        .framework_versions
        .iter()
        .map(|f| Object::new().with("name", f.name.as_str()).with("version", f.version.as_str()).build())
        .collect();
    let seeds = e
        .random_seeds
        .iter()
        .map(|s| Object::new().with("name", s.name.as_str()).with("value", Value::Int(s.value)).build())
        .collect();
    let mut o = Object::new()
        .with("framework_versions", Value::Array(fw))
        .with("random_seeds", Value::Array(seeds))
        .with("tier", e.tier().as_str());
    if let Some(h) = e.host() {
        o = o
            .with("cpu_cores", h.cpu_cores)
            .with("cpu_model", h.cpu_model.as_str())
            .with("gpu_model", Value::opt(h.gpu_model.as_deref(), Value::from))
            .with("os_name_version", h.os_name_version.as_str())
            .with("total_ram_bytes", h.total_ram_bytes);
    }
    o.build()
}

fn run_value(r: &RunRecord) -> Value {
    Object::new()
        .with("command", Value::Array(r.command.iter().map(|a| Value::from(a.as_str())).collect()))
        .with("ended_at", ts_millis(r.ended_at))
        .with("exit_code", i64::from(r.exit_code))
        .with("metric_patterns", Value::Array(r.metric_patterns.iter().map(|p| Value::from(p.as_str())).collect()))
        .with("metrics", Value::Array(r.metrics.iter().map(metric_value).collect()))
        .with("run_index", u64::from(r.run_index))
        .with("session_id", Value::Str(r.session_id.to_string()))
        .with("sources_after", snapshot_value(&r.sources_after))
        .with("sources_before", snapshot_value(&r.sources_before))
        .with("started_at", ts_millis(r.started_at))
        .with("stderr_bytes", r.stderr.bytes)
        .with("stderr_digest", digest_value(&r.stderr.digest))
        .with("stdout_bytes", r.stdout.bytes)
        .with("stdout_digest", digest_value(&r.stdout.digest))
        .with("telemetry", telemetry_value(&r.telemetry))
        .build()
}

fn metric_value(m: &MetricRecord) -> Value {
    Object::new()
        .with("byte_offset", m.byte_offset)
        .with("lexical_value", m.lexical_value.as_str())
        .with("name", m.name.as_str())
        .with("observed_at", ts_millis(m.observed_at))
        .with("stream", m.stream.as_str())
        .build()
}

pub(crate) fn snapshot_value(s: &SourceSnapshot) -> Value {
    let files = s
        .files()
        .iter()
        .map(|f| {
            Object::new()
                .with("digest", Value::opt(f.digest.as_ref(), digest_value))
                .with("error", Value::opt(f.error.as_deref(), Value::from))
                .with("kind", f.kind.as_str())
                .with("path", f.path.as_str())
                .with("size_bytes", f.size_bytes)
                .build()
        })
        .collect();
    Object::new()
        .with("files", Value::Array(files))
        .with("root", s.root.as_str())
        .with("total_bytes", s.total_bytes())
        .with("total_files", s.total_files())
        .build()
}

fn telemetry_value(t: &TelemetryTrace) -> Value {
    let samples = t
        .samples
        .iter()
        .map(|s| {
            Object::new()
                .with("at", ts_millis(s.at))
                .with("cpu_time_ms", s.cpu_time_ms)
                .with("disk_read_bytes", s.disk_read_bytes)
                .with("disk_write_bytes", s.disk_write_bytes)
                .with("gpu_mem_bytes", Value::opt(s.gpu_mem_bytes, Value::from))
                .with("gpu_util_pct", Value::opt(s.gpu_util_pct, |g| Value::from(u64::from(g))))
                .with("rss_bytes", s.rss_bytes)
                .build()
        })
        .collect();
    Object::new().with("interval_ms", t.interval_ms).with("samples", Value::Array(samples)).build()
}

pub(crate) fn hmc_value(h: &HmcReport) -> Value {
    let flags = h
        .flags
        .iter()
        .map(|f| {
            Object::new()
                .with("code", f.code.as_str())
                .with("detail", f.detail.as_str())
                .with("run_index", u64::from(f.run_index))
                .build()
        })
        .collect();
    let th = &h.thresholds;
    Object::new()
        .with("flags", Value::Array(flags))
        .with("score", Value::Str(h.score_text()))
        .with(
            "thresholds",
            Object::new()
                .with("gpu_min_duration_ms", th.gpu_min_duration_ms)
                .with("min_cpu_ms", th.min_cpu_ms)
                .with("min_gpu_util_pct", u64::from(th.min_gpu_util_pct))
                .with("min_wall_ms", th.min_wall_ms),
        )
        .with("verdict", h.verdict().as_str())
        .build()
}

// --- decoding -------------------------------------------------------------

fn objects(items: Vec<Value>, context: &'static str) -> Result<Vec<Fields>, CodecError> {
    items.into_iter().map(|v| Fields::new(v, context).map_err(Into::into)).collect()
}

fn timestamp(f: &mut Fields, field: &'static str, p: Precision) -> Result<Timestamp, CodecError> {
    let s = f.string(field)?;
    Timestamp::parse(&s, p).map_err(|e| bad(field, e))
}

fn digest(f: &mut Fields, field: &'static str) -> Result<Digest, CodecError> {
    f.string(field)?.parse().map_err(|e| bad(field, e))
}

fn label<T>(f: &mut Fields, field: &'static str, parse: fn(&str) -> Option<T>) -> Result<T, CodecError> {
    let s = f.string(field)?;
    parse(&s).ok_or_else(|| bad(field, alloc::format!("unknown label `{s}`")))
}

fn session_id(f: &mut Fields) -> Result<SessionId, CodecError> {
    f.string("session_id")?.parse().map_err(|e| bad("session_id", e))
}

fn session_from(value: Value) -> Result<SessionRecord, CodecError> {
    let mut f = Fields::new(value, "session")?;
    let version = f.int("format_version")?;
    if version != i128::from(FORMAT_VERSION) {
        return Err(CodecError::Version(version));
    }
    let id = session_id(&mut f)?;
    let created_at = timestamp(&mut f, "created_at", Precision::Seconds)?;
    let environment = environment_from(f.take("environment")?)?;
    let tier = label(&mut f, "tier", Tier::from_label)?;
    if tier != environment.tier() {
        return Err(bad("tier", "does not match environment tier"));
    }
    let state = label(&mut f, "state", SessionState::from_label)?;
    let hmc = match f.take("hmc")? {
        Value::Null => None,
        v => Some(hmc_from(v)?),
    };
    let runs = objects(f.array("runs")?, "run")?.into_iter().map(run_from).collect::<Result<Vec<_>, _>>()?;
    let run_count = f.u64("run_count")?;
    if run_count != runs.len() as u64 {
        return Err(bad("run_count", "does not equal the number of runs"));
    }
    f.finish()?;
    Ok(SessionRecord::from_parts(id, created_at, runs, environment, state, hmc)?)
}

fn environment_from(v: Value) -> Result<EnvironmentFingerprint, CodecError> {
    let mut f = Fields::new(v, "environment")?;
    let framework_versions = objects(f.array("framework_versions")?, "framework_version")?
        .into_iter()
        .map(|mut o| {
            let fv = FrameworkVersion { name: o.string("name")?, version: o.string("version")? };
            o.finish()?;
            Ok::<_, CodecError>(fv)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let random_seeds = objects(f.array("random_seeds")?, "random_seed")?
        .into_iter()
        .map(|mut o| {
            let s = RandomSeed { name: o.string("name")?, value: o.int("value")? };
            o.finish()?;
            Ok::<_, CodecError>(s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let env = match label(&mut f, "tier", Tier::from_label)? {
        Tier::Minimal => EnvironmentFingerprint::minimal(framework_versions, random_seeds),
        Tier::Full => {
            let host = HostInfo {
                os_name_version: f.string("os_name_version")?,
                cpu_model: f.string("cpu_model")?,
                cpu_cores: f.u64("cpu_cores")?,
                gpu_model: f.opt_string("gpu_model")?,
                total_ram_bytes: f.u64("total_ram_bytes")?,
            };
            EnvironmentFingerprint::full(framework_versions, random_seeds, host)
        }
    };
    f.finish()?;
    Ok(env)
}

fn run_from(mut f: Fields) -> Result<RunRecord, CodecError> {
    let run_index = u32::try_from(f.u64("run_index")?).map_err(|e| bad("run_index", e))?;
    let exit_code = i32::try_from(f.i64("exit_code")?).map_err(|e| bad("exit_code", e))?;
    let metrics = objects(f.array("metrics")?, "metric")?
        .into_iter()
        .map(metric_from)
        .collect::<Result<Vec<_>, _>>()?;
    let run = RunRecord {
        run_index,
        session_id: session_id(&mut f)?,
        command: f.strings("command")?,
        started_at: timestamp(&mut f, "started_at", Precision::Millis)?,
        ended_at: timestamp(&mut f, "ended_at", Precision::Millis)?,
        exit_code,
        stdout: StreamSummary { digest: digest(&mut f, "stdout_digest")?, bytes: f.u64("stdout_bytes")? },
        stderr: StreamSummary { digest: digest(&mut f, "stderr_digest")?, bytes: f.u64("stderr_bytes")? },
        metric_patterns: f.strings("metric_patterns")?,
        metrics,
        sources_before: snapshot_from(f.take("sources_before")?)?,
        sources_after: snapshot_from(f.take("sources_after")?)?,
        telemetry: telemetry_from(f.take("telemetry")?)?,
    };
    f.finish()?;
    Ok(run)
}

fn metric_from(mut f: Fields) -> Result<MetricRecord, CodecError> {
    let m = MetricRecord {
        name: f.string("name")?,
        lexical_value: f.string("lexical_value")?,
        stream: label(&mut f, "stream", Stream::from_label)?,
        byte_offset: f.u64("byte_offset")?,
        observed_at: timestamp(&mut f, "observed_at", Precision::Millis)?,
    };
    f.finish()?;
    if !crate::metrics::is_number_lexeme(&m.lexical_value) {
        return Err(bad("lexical_value", "not a number lexeme"));
    }
    Ok(m)
}

fn snapshot_from(v: Value) -> Result<SourceSnapshot, CodecError> {
    let mut f = Fields::new(v, "source_snapshot")?;
    let files = objects(f.array("files")?, "file")?
        .into_iter()
        .map(|mut o| {
            let digest = match o.opt_string("digest")? {
                Some(s) => Some(s.parse().map_err(|e| bad("digest", e))?),
                None => None,
            };
            let fd = FileDigest {
                path: o.string("path")?,
                kind: label(&mut o, "kind", EntryKind::from_label)?,
                size_bytes: o.u64("size_bytes")?,
                digest,
                error: o.opt_string("error")?,
            };
            o.finish()?;
            Ok::<_, CodecError>(fd)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let root = f.string("root")?;
    let total_files = f.u64("total_files")?;
    let total_bytes = f.u64("total_bytes")?;
    f.finish()?;
    let declared_order: Vec<String> = files.iter().map(|f| f.path.clone()).collect();
    let snap = SourceSnapshot::new(root, files)?;
    if snap.files().iter().map(|f| &f.path).ne(declared_order.iter()) {
        return Err(bad("files", "not sorted by path"));
    }
    if snap.total_files() != total_files || snap.total_bytes() != total_bytes {
        return Err(bad("total_files", "totals do not match the file list"));
    }
    Ok(snap)
}

fn telemetry_from(v: Value) -> Result<TelemetryTrace, CodecError> {
    let mut f = Fields::new(v, "telemetry")?;
    let interval_ms = f.u64("interval_ms")?;
    let samples = objects(f.array("samples")?, "sample")?
        .into_iter()
        .map(|mut o| {
            let gpu_util_pct = match o.opt_u64("gpu_util_pct")? {
                Some(g) => Some(u8::try_from(g).map_err(|e| bad("gpu_util_pct", e))?),
                None => None,
            };
            let s = TelemetrySample {
                at: timestamp(&mut o, "at", Precision::Millis)?,
                cpu_time_ms: o.u64("cpu_time_ms")?,
                rss_bytes: o.u64("rss_bytes")?,
                gpu_util_pct,
                gpu_mem_bytes: o.opt_u64("gpu_mem_bytes")?,
                disk_read_bytes: o.u64("disk_read_bytes")?,
                disk_write_bytes: o.u64("disk_write_bytes")?,
            };
            o.finish()?;
            Ok::<_, CodecError>(s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    f.finish()?;
    Ok(TelemetryTrace { interval_ms, samples })
}

fn hmc_from(v: Value) -> Result<HmcReport, CodecError> {
    let mut f = Fields::new(v, "hmc")?;
    let flags = objects(f.array("flags")?, "hmc_flag")?
        .into_iter()
        .map(|mut o| {
            let flag = HmcFlag {
                code: label(&mut o, "code", HmcFlagCode::from_label)?,
                detail: o.string("detail")?,
                run_index: u32::try_from(o.u64("run_index")?).map_err(|e| bad("run_index", e))?,
            };
            o.finish()?;
            Ok::<_, CodecError>(flag)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut th = Fields::new(f.take("thresholds")?, "thresholds")?;
    let thresholds = Thresholds {
        min_wall_ms: th.u64("min_wall_ms")?,
        min_cpu_ms: th.u64("min_cpu_ms")?,
        min_gpu_util_pct: u8::try_from(th.u64("min_gpu_util_pct")?).map_err(|e| bad("min_gpu_util_pct", e))?,
        gpu_min_duration_ms: th.u64("gpu_min_duration_ms")?,
    };
    th.finish()?;
    let score = f.string("score")?;
    let verdict = label(&mut f, "verdict", HmcVerdict::from_label)?;
    f.finish()?;
    Ok(HmcReport::from_parts(&score, verdict, flags, thresholds)?)
}
