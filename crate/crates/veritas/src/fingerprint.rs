//! Environment fingerprint at the configured tier.

use std::fs;

use veritas_core::model::{EnvironmentFingerprint, HostInfo, Tier};

use crate::config::Config;
use crate::telemetry::GpuProbe;

fn os_release() -> Option<String> {
    let text = fs::read_to_string("/etc/os-release").ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("PRETTY_NAME="))
        .map(|v| v.trim_matches('"').to_string())
}

fn kernel() -> String {
    // SAFETY: utsname is plain data filled in by uname.
    let mut u: libc::utsname = unsafe { std::mem::zeroed() };
    if unsafe { libc::uname(&mut u) } != 0 {
        return "unknown".into();
    }
    let field = |f: &[libc::c_char]| {
        let bytes: Vec<u8> = f.iter().take_while(|c| **c != 0).map(|c| *c as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    };
    format!("{} {} {}", field(&u.sysname), field(&u.release), field(&u.machine))
}

fn cpu_model() -> String {
    fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name") || l.starts_with("Model") || l.starts_with("Hardware"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

fn cpu_cores() -> u64 {
    // SAFETY: sysconf has no memory-safety preconditions.
    let n = unsafe { libc::sysconf(libc::_SC_NPROCESSORS_ONLN) };
    n.max(1) as u64
}

fn total_ram() -> u64 {
    fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|t| {
            let line = t.lines().find(|l| l.starts_with("MemTotal:"))?;
            let kb: u64 = line.split_ascii_whitespace().nth(1)?.parse().ok()?;
            Some(kb * 1024)
        })
        .unwrap_or(0)
}

pub fn host_info(gpu: Option<&GpuProbe>, declared_gpu: Option<&str>) -> HostInfo {
    let os = match os_release() {
        Some(name) => format!("{name} ({})", kernel()),
        None => kernel(),
    };
    HostInfo {
        os_name_version: os,
        cpu_model: cpu_model(),
        cpu_cores: cpu_cores(),
        gpu_model: declared_gpu.map(str::to_string).or_else(|| gpu.and_then(GpuProbe::model)),
        total_ram_bytes: total_ram(),
    }
}

/// Builds the fingerprint for `config`. The minimal tier reads nothing from
/// the host.
pub fn capture(config: &Config, gpu: Option<&GpuProbe>) -> EnvironmentFingerprint {
    let (fw, seeds) = (config.frameworks.clone(), config.seeds.clone());
    match config.tier {
        Tier::Minimal => EnvironmentFingerprint::minimal(fw, seeds),
        Tier::Full => EnvironmentFingerprint::full(fw, seeds, host_info(gpu, config.gpu_model.as_deref())),
    }
}
