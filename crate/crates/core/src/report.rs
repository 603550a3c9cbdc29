//! Human-readable rendering of a sealed session.
//!
//! `report.txt` is a pure function of the sealed session, so a verifier can
//! regenerate it and compare byte for byte.

use alloc::format;
use alloc::string::String;
use core::fmt::Write as _;

use crate::attestation::{ALGORITHM, KEY_BITS};
use crate::claims::final_values;
use crate::codec::{self, CodecError};
use crate::digest::Digest;
use crate::model::{SessionRecord, SourceSnapshot};

/// Digest of a source snapshot's canonical encoding.
pub fn snapshot_digest(s: &SourceSnapshot) -> Digest {
    Digest::of(&crate::canon::encode(&codec::snapshot_value(s)))
}

fn seconds(ms: i64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

pub fn linked_runs(n: u64) -> String {
    if n == 1 {
        String::from("1 linked run")
    } else {
        format!("{n} linked runs")
    }
}

pub fn render(session: &SessionRecord) -> Result<String, CodecError> {
    let digest = codec::session_digest(session)?;
    let hmc = session.hmc().ok_or(CodecError::SessionStillOpen)?;
    let env = session.environment();
    let mut out = String::new();
    let mut line = |label: &str, value: &str| {
        let _ = writeln!(out, "{label:<20}{value}");
    };

    line("Session", &format!("{}", session.session_id()));
    line("Created", &session.created_at().to_rfc3339_seconds());
    line("Tier", session.tier().as_str());
    line("Session runs", &linked_runs(session.run_count()));
    line("Session digest", &format!("{digest}"));
    match env.host() {
        Some(h) => {
            line("OS", &h.os_name_version);
            line("CPU", &format!("{} ({} cores)", h.cpu_model, h.cpu_cores));
            line("GPU", h.gpu_model.as_deref().unwrap_or("none observed"));
            line("RAM", &format!("{} bytes", h.total_ram_bytes));
        }
        None => line("Host", "withheld (minimal tier)"),
    }
    let fw: alloc::vec::Vec<String> =
        env.framework_versions.iter().map(|f| format!("{} {}", f.name, f.version)).collect();
    line("Frameworks", if fw.is_empty() { "none declared" } else { "" });
    for f in &fw {
        line("", f);
    }
    line("Random seeds", if env.random_seeds.is_empty() { "none declared" } else { "" });
    for s in &env.random_seeds {
        line("", &format!("{} = {}", s.name, s.value));
    }
    let total: i64 = session.runs().iter().map(|r| r.wall_ms()).sum();
    line("Training duration", &format!("{} seconds", seconds(total)));
    let finals = final_values(session);
    line("Final metrics", if finals.is_empty() { "none" } else { "" });
    for (run, m) in &finals {
        line("", &format!("{} = {} (run {}, {})", m.name, m.lexical_value, run, m.stream));
    }
    line("HMC score / verdict", &format!("{hmc}"));
    if hmc.flags.is_empty() {
        line("HMC flags", "None");
    }
    for f in &hmc.flags {
        line("HMC flags", &format!("{} (run {}: {})", f.code, f.run_index, f.detail));
    }
    if let Some(last) = session.runs().last() {
        line("Source code hash", &format!("{}", snapshot_digest(&last.sources_after)));
        line("Stdout hash", &format!("{}", last.stdout.digest));
    }
    line("Digital signature", &format!("{ALGORITHM}, {KEY_BITS}-bit"));

    for r in session.runs() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Run {}", r.run_index);
        let mut field = |label: &str, value: &str| {
            let _ = writeln!(out, "  {label:<18}{value}");
        };
        field("Command", &r.command.join(" "));
        field("Started", &r.started_at.to_rfc3339_millis());
        field("Ended", &r.ended_at.to_rfc3339_millis());
        field("Duration", &format!("{} seconds", seconds(r.wall_ms())));
        field("Exit code", &format!("{}", r.exit_code));
        field("Stdout", &format!("{} ({} bytes)", r.stdout.digest, r.stdout.bytes));
        field("Stderr", &format!("{} ({} bytes)", r.stderr.digest, r.stderr.bytes));
        field("Metrics", &format!("{}", r.metrics.len()));
        field("Telemetry samples", &format!("{}", r.telemetry.samples.len()));
        if let Some(s) = r.telemetry.samples.last() {
            field("CPU time", &format!("{} seconds", seconds(s.cpu_time_ms as i64)));
        }
        field(
            "Sources",
            &format!(
                "{} ({} files, {} bytes)",
                snapshot_digest(&r.sources_after),
                r.sources_after.total_files(),
                r.sources_after.total_bytes()
            ),
        );
        if r.sources_before != r.sources_after {
            field("Sources changed", "yes (sources differ before and after the run)");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmc::{evaluate, Thresholds};
    use crate::model::fixtures::*;
    use alloc::vec;

    #[test]
    fn three_runs_are_disclosed() {
        let open = session(vec![
            run(0, 0, 2000, 500, &[("loss", "1.2")]),
            run(1, 3000, 2000, 500, &[("loss", "1.1")]),
            run(2, 6000, 2000, 500, &[("loss", "1.065107")]),
        ]);
        let s = open.sealed_with(evaluate(&open, &Thresholds::default()).unwrap()).unwrap();
        let text = render(&s).unwrap();
        assert!(text.contains("Session runs        3 linked runs\n"));
        assert!(text.contains("loss = 1.065107 (run 2, stdout)"));
        assert!(text.contains("Run 2\n"));
        assert_eq!(text, render(&s).unwrap());
        assert!(render(&open).is_err());
    }

    #[test]
    fn singular_run_wording() {
        assert_eq!(linked_runs(1), "1 linked run");
        assert_eq!(linked_runs(0), "0 linked runs");
    }
}
