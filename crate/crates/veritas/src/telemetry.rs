//! Process-tree telemetry from `/proc`, plus accelerator readings through
//! `nvidia-smi` when it is installed.
//!
//! CPU time per process is `utime + stime + cutime + cstime`: a child that
//! has been reaped by a member of the tree is already folded into its
//! parent's `c*time`, so summing over the live tree never double counts.
//! Disk counters are not inherited on reaping, so the last reading of every
//! departed process is kept.

use std::collections::HashMap;
use std::fs;
use std::process::Command;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use veritas_core::model::{TelemetrySample, TelemetryTrace};
use veritas_core::Timestamp;

use crate::now;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("process {0} not found")]
    ProcessNotFound(u32),
}

#[derive(Debug, Clone, Copy)]
struct ProcStat {
    ppid: u32,
    cpu_ticks: u64,
    start_time: u64,
    rss_pages: u64,
}

fn read_stat(pid: u32) -> Option<ProcStat> {
    let text = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // The command name may contain spaces and parentheses.
    let rest = &text[text.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_ascii_whitespace().collect();
    // `rest` starts at field 3 (state).
    let field = |n: usize| f.get(n - 3).and_then(|s| s.parse::<u64>().ok());
    Some(ProcStat {
        ppid: field(4)? as u32,
        cpu_ticks: field(14)? + field(15)? + field(16)? + field(17)?,
        start_time: field(22)?,
        rss_pages: field(24)?,
    })
}

fn read_io(pid: u32) -> Option<(u64, u64)> {
    let text = fs::read_to_string(format!("/proc/{pid}/io")).ok()?;
    let (mut r, mut w) = (None, None);
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("read_bytes:") {
            r = v.trim().parse().ok();
        } else if let Some(v) = line.strip_prefix("write_bytes:") {
            w = v.trim().parse().ok();
        }
    }
    Some((r?, w?))
}

fn all_pids() -> Vec<u32> {
    let Ok(dir) = fs::read_dir("/proc") else { return Vec::new() };
    dir.filter_map(|e| e.ok()?.file_name().to_str()?.parse().ok()).collect()
}

/// `root` and all its descendants, with their stats.
fn process_tree(root: u32) -> Vec<(u32, ProcStat)> {
    let stats: Vec<(u32, ProcStat)> = all_pids().into_iter().filter_map(|p| Some((p, read_stat(p)?))).collect();
    let mut children: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, (_, s)) in stats.iter().enumerate() {
        children.entry(s.ppid).or_default().push(i);
    }
    let mut out = Vec::new();
    let mut stack = match stats.iter().position(|(p, _)| *p == root) {
        Some(i) => vec![i],
        None => return out,
    };
    while let Some(i) = stack.pop() {
        let (pid, stat) = stats[i];
        out.push((pid, stat));
        if let Some(c) = children.get(&pid) {
            stack.extend(c.iter().copied().filter(|&j| stats[j].0 != pid));
        }
    }
    out
}

fn clock_ticks() -> u64 {
    // SAFETY: sysconf has no memory-safety preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 { t as u64 } else { 100 }
}

fn page_size() -> u64 {
    // SAFETY: as above.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 { p as u64 } else { 4096 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpuReading {
    pub util_pct: u8,
    pub mem_bytes: u64,
}

/// Accelerator readings through the vendor management tool.
#[derive(Debug, Clone)]
pub struct GpuProbe {
    program: String,
}

impl GpuProbe {
    /// Returns a probe when the management tool is installed and reports at
    /// least one device.
    pub fn detect() -> Option<Self> {
        let p = Self { program: "nvidia-smi".into() };
        p.read().map(|_| p)
    }

    /// Device name of the first accelerator.
    pub fn model(&self) -> Option<String> {
        let out = Command::new(&self.program).args(["--query-gpu=name", "--format=csv,noheader"]).output().ok()?;
        let text = String::from_utf8(out.stdout).ok()?;
        text.lines().next().map(|l| l.trim().to_string()).filter(|l| out.status.success() && !l.is_empty())
    }

    /// Peak utilisation and total memory in use across devices.
    pub fn read(&self) -> Option<GpuReading> {
        let out = Command::new(&self.program)
            .args(["--query-gpu=utilization.gpu,memory.used", "--format=csv,noheader,nounits"])
            .output()
            .ok()?;
        if !out.status.success() {
            return None;
        }
        let mut reading: Option<GpuReading> = None;
        for line in String::from_utf8_lossy(&out.stdout).lines() {
            let mut parts = line.split(',').map(str::trim);
            let util: u8 = parts.next()?.parse().ok().filter(|u| *u <= 100)?;
            let mib: u64 = parts.next()?.parse().ok()?;
            let r = reading.get_or_insert(GpuReading { util_pct: 0, mem_bytes: 0 });
            r.util_pct = r.util_pct.max(util);
            r.mem_bytes += mib << 20;
        }
        reading
    }
}

/// Cumulative state across ticks.
struct Accumulator {
    root: u32,
    tick_ms: u64,
    page: u64,
    cpu_ms: u64,
    /// Last disk reading per live process, keyed by (pid, start time).
    io_live: HashMap<(u32, u64), (u64, u64)>,
    io_departed: (u64, u64),
    disk: (u64, u64),
}

impl Accumulator {
    fn new(root: u32) -> Self {
        Self {
            root,
            tick_ms: 1000 / clock_ticks().max(1),
            page: page_size(),
            cpu_ms: 0,
            io_live: HashMap::new(),
            io_departed: (0, 0),
            disk: (0, 0),
        }
    }

    fn sample(&mut self, at: Timestamp, gpu: Option<GpuReading>) -> TelemetrySample {
        let tree = process_tree(self.root);
        let mut cpu_ticks = 0u64;
        let mut rss = 0u64;
        let mut live = HashMap::new();
        for (pid, stat) in &tree {
            cpu_ticks += stat.cpu_ticks;
            rss += stat.rss_pages * self.page;
            let key = (*pid, stat.start_time);
            let prev = self.io_live.get(&key).copied().unwrap_or((0, 0));
            let io = read_io(*pid).map_or(prev, |(r, w)| (r.max(prev.0), w.max(prev.1)));
            live.insert(key, io);
        }
        for (key, io) in self.io_live.drain() {
            if !live.contains_key(&key) {
                self.io_departed.0 += io.0;
                self.io_departed.1 += io.1;
            }
        }
        self.io_live = live;
        let (mut r, mut w) = self.io_departed;
        for io in self.io_live.values() {
            r += io.0;
            w += io.1;
        }

        // Processes that leave the tree without being reaped inside it take
        // their CPU time with them; counters never go backwards.
        self.cpu_ms = self.cpu_ms.max(cpu_ticks * self.tick_ms);
        self.disk = (self.disk.0.max(r), self.disk.1.max(w));
        TelemetrySample {
            at,
            cpu_time_ms: self.cpu_ms,
            rss_bytes: rss,
            gpu_util_pct: gpu.map(|g| g.util_pct),
            gpu_mem_bytes: gpu.map(|g| g.mem_bytes),
            disk_read_bytes: self.disk.0,
            disk_write_bytes: self.disk.1,
        }
    }
}

/// One reading of the process tree rooted at `pid`, outside any sampler.
pub fn sample_once(pid: u32) -> Result<TelemetrySample, TelemetryError> {
    if read_stat(pid).is_none() {
        return Err(TelemetryError::ProcessNotFound(pid));
    }
    Ok(Accumulator::new(pid).sample(now(), None))
}

pub struct Sampler {
    stop: mpsc::Sender<()>,
    handle: thread::JoinHandle<TelemetryTrace>,
}

/// Starts sampling the process tree of `pid` every `interval`. The first
/// sample is taken one interval after the start.
pub fn start_sampler(pid: u32, interval: Duration, gpu: Option<GpuProbe>) -> Result<Sampler, TelemetryError> {
    if read_stat(pid).is_none() {
        return Err(TelemetryError::ProcessNotFound(pid));
    }
    let interval = interval.max(Duration::from_millis(1));
    let interval_ms = interval.as_millis().max(1) as u64;
    let (stop, rx) = mpsc::channel();
    let handle = thread::Builder::new()
        .name(format!("veritas-telemetry-{pid}"))
        .spawn(move || {
            let mut acc = Accumulator::new(pid);
            let mut trace = TelemetryTrace::empty(interval_ms);
            let started = Instant::now();
            let mut ticks = 1u32;
            let push = |trace: &mut TelemetryTrace, acc: &mut Accumulator| {
                let reading = gpu.as_ref().and_then(GpuProbe::read);
                let at = now();
                // Timestamps are kept strictly increasing at ms resolution.
                if trace.samples.last().is_none_or(|s| at > s.at) {
                    trace.samples.push(acc.sample(at, reading));
                }
            };
            loop {
                let due = started + interval * ticks;
                match rx.recv_timeout(due.saturating_duration_since(Instant::now())) {
                    Err(RecvTimeoutError::Timeout) => {
                        push(&mut trace, &mut acc);
                        ticks += 1;
                        // After a stall, skip missed ticks rather than burst.
                        while started + interval * ticks <= Instant::now() {
                            ticks += 1;
                        }
                    }
                    Ok(()) | Err(RecvTimeoutError::Disconnected) => {
                        push(&mut trace, &mut acc);
                        break;
                    }
                }
            }
            trace
        })
        .expect("spawn telemetry thread");
    Ok(Sampler { stop, handle })
}

impl Sampler {
    /// Takes a final sample and returns the trace.
    pub fn stop(self) -> TelemetryTrace {
        let _ = self.stop.send(());
        self.handle.join().expect("telemetry thread panicked")
    }
}
