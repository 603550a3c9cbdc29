//! Session configuration: flat `key = value` text in `.veritas/config`.
//!
//! Blank lines and lines starting with `#` are ignored. `include`,
//! `exclude` and `metric_pattern` may repeat; every other key may appear
//! once. `framework.<name>` and `seed.<name>` declare framework versions and
//! random seeds.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;
use veritas_core::hmc::Thresholds;
use veritas_core::metrics::MetricPattern;
use veritas_core::model::{FrameworkVersion, RandomSeed, Tier};

pub const DEFAULT_MAX_FILE_BYTES: u64 = 64 << 20;
pub const DEFAULT_INTERVAL_MS: u64 = 1000;

pub const DEFAULT_EXCLUDES: &[&str] = &[
    ".git",
    ".hg",
    ".svn",
    ".veritas",
    "**/__pycache__",
    "**/.ipynb_checkpoints",
    "**/.venv",
    "**/venv",
    "**/node_modules",
    "**/checkpoints",
    "**/wandb",
    "**/mlruns",
    "**/*.bundle",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub tier: Tier,
    pub source_root: String,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
    pub max_file_bytes: u64,
    pub telemetry_interval_ms: u64,
    pub metric_patterns: Vec<MetricPattern>,
    pub frameworks: Vec<FrameworkVersion>,
    pub seeds: Vec<RandomSeed>,
    pub service: Option<String>,
    /// Accelerator declared by the author when none is visible to the
    /// management interface.
    pub gpu_model: Option<String>,
    pub thresholds: Thresholds,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            tier: Tier::Full,
            source_root: ".".into(),
            include: vec!["**".into()],
            exclude: DEFAULT_EXCLUDES.iter().map(|s| s.to_string()).collect(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            telemetry_interval_ms: DEFAULT_INTERVAL_MS,
            metric_patterns: vec![MetricPattern::default_grammar()],
            frameworks: Vec::new(),
            seeds: Vec::new(),
            service: None,
            gpu_model: None,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

/// Decimal seconds to whole milliseconds, e.g. `0.5` -> 500.
pub fn parse_seconds(s: &str) -> Option<u64> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 3 {
        return None;
    }
    let whole: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let mut ms = 0u64;
    for (i, b) in frac.bytes().enumerate() {
        ms += u64::from(b - b'0') * 10u64.pow(2 - i as u32);
    }
    whole.checked_mul(1000)?.checked_add(ms).filter(|&v| v > 0)
}

fn format_seconds(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000).trim_end_matches('0').trim_end_matches('.').to_string()
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut c = Config { include: vec![], exclude: vec![], metric_patterns: vec![], ..Config::default() };
        let mut seen = std::collections::BTreeSet::new();
        let (mut saw_include, mut saw_exclude, mut saw_pattern) = (false, false, false);

        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError { line: i + 1, reason };
            let Some((key, value)) = line.split_once('=') else {
                return Err(err("expected `key = value`".into()));
            };
            let (key, value) = (key.trim(), value.trim());
            let repeatable = matches!(key, "include" | "exclude" | "metric_pattern");
            if !repeatable && !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            match key {
                "tier" => c.tier = Tier::from_label(value).ok_or_else(|| err(format!("unknown tier `{value}`")))?,
                "source_root" => c.source_root = value.into(),
                "include" => {
                    saw_include = true;
                    c.include.push(value.into());
                }
                "exclude" => {
                    saw_exclude = true;
                    if !value.is_empty() {
                        c.exclude.push(value.into());
                    }
                }
                "metric_pattern" => {
                    saw_pattern = true;
                    c.metric_patterns.push(value.parse().map_err(|e| err(format!("metric_pattern: {e}")))?);
                }
                "max_file_bytes" => c.max_file_bytes = value.parse().map_err(|_| err("not an integer".into()))?,
                "telemetry_interval" => {
                    c.telemetry_interval_ms =
                        parse_seconds(value).ok_or_else(|| err("interval must be positive seconds, ms precision".into()))?
                }
                "service" => c.service = Some(value.into()).filter(|v: &String| !v.is_empty()),
                "gpu_model" => c.gpu_model = Some(value.into()).filter(|v: &String| !v.is_empty()),
                "hmc.min_wall_ms" => c.thresholds.min_wall_ms = value.parse().map_err(|_| err("not an integer".into()))?,
                "hmc.min_cpu_ms" => c.thresholds.min_cpu_ms = value.parse().map_err(|_| err("not an integer".into()))?,
                "hmc.min_gpu_util_pct" => {
                    c.thresholds.min_gpu_util_pct =
                        value.parse().ok().filter(|v| *v <= 100).ok_or_else(|| err("expected 0-100".into()))?
                }
                "hmc.gpu_min_duration_ms" => {
                    c.thresholds.gpu_min_duration_ms = value.parse().map_err(|_| err("not an integer".into()))?
                }
                _ => {
                    if let Some(name) = key.strip_prefix("framework.").filter(|n| !n.is_empty()) {
                        c.frameworks.push(FrameworkVersion { name: name.into(), version: value.into() });
                    } else if let Some(name) = key.strip_prefix("seed.").filter(|n| !n.is_empty()) {
                        let value = value.parse().map_err(|_| err(format!("seed `{name}` is not an integer")))?;
                        c.seeds.push(RandomSeed { name: name.into(), value });
                    } else {
                        return Err(err(format!("unknown key `{key}`")));
                    }
                }
            }
        }

        let d = Config::default();
        if !saw_include {
            c.include = d.include;
        }
        if !saw_exclude {
            c.exclude = d.exclude;
        }
        if !saw_pattern {
            c.metric_patterns = d.metric_patterns;
        }
        Ok(c)
    }
}

impl Config {
    pub fn render(&self) -> String {
        let mut out = String::from("# veritas session configuration\n");
        let _ = writeln!(out, "tier = {}", self.tier);
        let _ = writeln!(out, "source_root = {}", self.source_root);
        for p in &self.include {
            let _ = writeln!(out, "include = {p}");
        }
        if self.exclude.is_empty() {
            out.push_str("exclude =\n");
        }
        for p in &self.exclude {
            let _ = writeln!(out, "exclude = {p}");
        }
        let _ = writeln!(out, "max_file_bytes = {}", self.max_file_bytes);
        let _ = writeln!(out, "telemetry_interval = {}", format_seconds(self.telemetry_interval_ms));
        for p in &self.metric_patterns {
            let _ = writeln!(out, "metric_pattern = {}", p.as_str());
        }
        let t = &self.thresholds;
        let _ = writeln!(out, "hmc.min_wall_ms = {}", t.min_wall_ms);
        let _ = writeln!(out, "hmc.min_cpu_ms = {}", t.min_cpu_ms);
        let _ = writeln!(out, "hmc.min_gpu_util_pct = {}", t.min_gpu_util_pct);
        let _ = writeln!(out, "hmc.gpu_min_duration_ms = {}", t.gpu_min_duration_ms);
        if let Some(s) = &self.service {
            let _ = writeln!(out, "service = {s}");
        }
        if let Some(g) = &self.gpu_model {
            let _ = writeln!(out, "gpu_model = {g}");
        }
        out.push_str("# framework.<name> = <version>\n");
        for f in &self.frameworks {
            let _ = writeln!(out, "framework.{} = {}", f.name, f.version);
        }
        out.push_str("# seed.<name> = <integer>\n");
        for s in &self.seeds {
            let _ = writeln!(out, "seed.{} = {}", s.name, s.value);
        }
        out
    }
}
