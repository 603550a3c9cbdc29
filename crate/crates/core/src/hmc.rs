//! Hardware-metric consistency scoring.
//!
//! A rule-based score: start at 1.00 and subtract a fixed penalty for each
//! flag raised. Scores are kept in hundredths so that the arithmetic and the
//! rendered form are exact.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::model::{labelled_enum, RunRecord, SessionRecord};

/// Verdict threshold, in hundredths.
pub const PASS_THRESHOLD: u8 = 50;

labelled_enum!(HmcFlagCode {
    ZeroCostMetric => "ZERO_COST_METRIC",
    GpuClaimInactive => "GPU_CLAIM_INACTIVE",
    NoTelemetry => "NO_TELEMETRY",
    CounterAnomaly => "COUNTER_ANOMALY",
});

impl HmcFlagCode {
    /// Penalty in hundredths.
    pub const fn penalty(self) -> u8 {
        match self {
            Self::ZeroCostMetric => 20,
            Self::GpuClaimInactive => 30,
            Self::NoTelemetry => 40,
            Self::CounterAnomaly => 10,
        }
    }
}

labelled_enum!(HmcVerdict { Pass => "PASS", Fail => "FAIL" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub min_wall_ms: u64,
    pub min_cpu_ms: u64,
    pub min_gpu_util_pct: u8,
    pub gpu_min_duration_ms: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { min_wall_ms: 1000, min_cpu_ms: 100, min_gpu_util_pct: 1, gpu_min_duration_ms: 60_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HmcFlag {
    pub code: HmcFlagCode,
    pub detail: String,
    pub run_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HmcReport {
    score_centi: u8,
    verdict: HmcVerdict,
    pub flags: Vec<HmcFlag>,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HmcError {
    #[error("cannot score a session without runs")]
    EmptySession,
    #[error("invalid score `{0}`")]
    Score(String),
    #[error("verdict {verdict} does not match score {score}")]
    VerdictMismatch { verdict: HmcVerdict, score: String },
}

impl HmcReport {
    pub fn from_parts(
        score: &str,
        verdict: HmcVerdict,
        flags: Vec<HmcFlag>,
        thresholds: Thresholds,
    ) -> Result<Self, HmcError> {
        let score_centi = parse_score(score).ok_or_else(|| HmcError::Score(score.into()))?;
        if verdict_for(score_centi) != verdict {
            return Err(HmcError::VerdictMismatch { verdict, score: score.into() });
        }
        Ok(Self { score_centi, verdict, flags, thresholds })
    }

    pub fn score_centi(&self) -> u8 {
        self.score_centi
    }

    pub fn score(&self) -> f64 {
        f64::from(self.score_centi) / 100.0
    }

    /// Two-decimal rendering, e.g. `0.80`.
    pub fn score_text(&self) -> String {
        format!("{}.{:02}", self.score_centi / 100, self.score_centi % 100)
    }

    pub fn verdict(&self) -> HmcVerdict {
        self.verdict
    }
}

fn verdict_for(score_centi: u8) -> HmcVerdict {
    if score_centi >= PASS_THRESHOLD {
        HmcVerdict::Pass
    } else {
        HmcVerdict::Fail
    }
}

fn parse_score(s: &str) -> Option<u8> {
    let b = s.as_bytes();
    if b.len() != 4 || b[1] != b'.' || !b[0].is_ascii_digit() || !b[2].is_ascii_digit() || !b[3].is_ascii_digit() {
        return None;
    }
    let v = u32::from(b[0] - b'0') * 100 + u32::from(b[2] - b'0') * 10 + u32::from(b[3] - b'0');
    (v <= 100).then_some(v as u8)
}

impl fmt::Display for HmcReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.score_text(), self.verdict)
    }
}

fn secs(ms: i64) -> String {
    let sign = if ms < 0 { "-" } else { "" };
    let ms = ms.unsigned_abs();
    format!("{sign}{}.{:03} s", ms / 1000, ms % 1000)
}

fn run_flags(run: &RunRecord, claims_gpu: bool, th: &Thresholds, out: &mut Vec<HmcFlag>) {
    let reported = !run.metrics.is_empty();
    let wall = run.wall_ms();
    let samples = &run.telemetry.samples;
    let cpu = samples.last().map(|s| s.cpu_time_ms);
    let flag = |code, detail| HmcFlag { code, detail, run_index: run.run_index };

    if reported {
        let too_short = wall < th.min_wall_ms as i64;
        let too_idle = cpu.is_some_and(|c| c < th.min_cpu_ms);
        if too_short || too_idle {
            let cpu_text = cpu.map_or_else(|| String::from("unobserved"), |c| secs(c as i64));
            out.push(flag(
                HmcFlagCode::ZeroCostMetric,
                format!(
                    "{} metric(s) reported after {} wall, {} CPU",
                    run.metrics.len(),
                    secs(wall),
                    cpu_text
                ),
            ));
        }

        if claims_gpu && wall >= th.gpu_min_duration_ms as i64 {
            // Absence of a reading counts as no activity.
            let max_gpu = samples.iter().filter_map(|s| s.gpu_util_pct).max().unwrap_or(0);
            if max_gpu < th.min_gpu_util_pct {
                out.push(flag(
                    HmcFlagCode::GpuClaimInactive,
                    format!("accelerator claimed but peak utilisation {max_gpu}% over {}", secs(wall)),
                ));
            }
        }

        if samples.is_empty() && wall >= 2 * run.telemetry.interval_ms as i64 {
            out.push(flag(
                HmcFlagCode::NoTelemetry,
                format!("no telemetry samples over {} at {} interval", secs(wall), secs(run.telemetry.interval_ms as i64)),
            ));
        }
    }

    if run.telemetry.has_counter_regression() {
        out.push(flag(HmcFlagCode::CounterAnomaly, String::from("cumulative counter decreased between samples")));
    }
}

/// Scores a session. Pure: the same session and thresholds always yield the
/// same report.
pub fn evaluate(session: &SessionRecord, thresholds: &Thresholds) -> Result<HmcReport, HmcError> {
    if session.runs().is_empty() {
        return Err(HmcError::EmptySession);
    }
    let claims_gpu = session.environment().claims_gpu();
    let mut flags = Vec::new();
    for run in session.runs() {
        run_flags(run, claims_gpu, thresholds, &mut flags);
    }
    let penalty: u32 = flags.iter().map(|f| u32::from(f.code.penalty())).sum();
    let score_centi = 100u32.saturating_sub(penalty) as u8;
    Ok(HmcReport { score_centi, verdict: verdict_for(score_centi), flags, thresholds: *thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{EnvironmentFingerprint, SessionRecord};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn codes(r: &HmcReport) -> Vec<HmcFlagCode> {
        r.flags.iter().map(|f| f.code).collect()
    }

    #[test]
    fn zero_cost_linked_run_scores_080_pass() {
        // A 6 s run plus a sub-second metric-emitting run in the same session.
        let s = session(vec![
            run(0, 0, 6000, 5000, &[("loss", "1.065107")]),
            run(1, 7000, 400, 0, &[("val_accuracy", "0.315000")]),
        ]);
        let r = evaluate(&s, &Thresholds::default()).unwrap();
        assert_eq!(codes(&r), [HmcFlagCode::ZeroCostMetric]);
        assert_eq!(r.flags[0].run_index, 1);
        assert_eq!(r.score_text(), "0.80");
        assert_eq!(r.verdict(), HmcVerdict::Pass);
    }

    #[test]
    fn long_clean_run_scores_one() {
        let s = session(vec![run(0, 0, 41 * 60_000, 2_000_000, &[("val_accuracy", "0.913")])]);
        let r = evaluate(&s, &Thresholds::default()).unwrap();
        assert!(r.flags.is_empty());
        assert_eq!(r.to_string(), "1.00 / PASS");
    }

    #[test]
    fn no_telemetry_penalties() {
        let mut a = run(0, 0, 10_000, 0, &[("loss", "0.5")]);
        a.telemetry.samples.clear();
        let mut b = run(1, 20_000, 10_000, 0, &[("loss", "0.4")]);
        b.telemetry.samples.clear();
        let one = evaluate(&session(vec![a.clone()]), &Thresholds::default()).unwrap();
        assert_eq!(codes(&one), [HmcFlagCode::NoTelemetry]);
        assert_eq!(one.to_string(), "0.60 / PASS");
        let two = evaluate(&session(vec![a, b]), &Thresholds::default()).unwrap();
        assert_eq!(two.to_string(), "0.20 / FAIL");
    }

    #[test]
    fn idle_gpu_claim_is_flagged() {
        let env = EnvironmentFingerprint::full(vec![], vec![], host(Some("NVIDIA GeForce RTX 5060 Ti")));
        let mut s = SessionRecord::new(sid(), t(-5000), env);
        s.append_run(run(0, 0, 90_000, 80_000, &[("val_accuracy", "0.99")])).unwrap();
        let r = evaluate(&s, &Thresholds::default()).unwrap();
        assert_eq!(codes(&r), [HmcFlagCode::GpuClaimInactive]);
        assert_eq!(r.score_text(), "0.70");
    }

    #[test]
    fn counter_regression_and_clamp() {
        let mut runs = vec![];
        for i in 0..12u32 {
            let mut r = run(i, i64::from(i) * 10_000, 3000, 500, &[]);
            r.telemetry.samples[2].cpu_time_ms = 0;
            runs.push(r);
        }
        let r = evaluate(&session(runs), &Thresholds::default()).unwrap();
        assert_eq!(r.flags.len(), 12);
        assert_eq!(r.score_centi(), 0);
        assert_eq!(r.verdict(), HmcVerdict::Fail);
    }

    #[test]
    fn empty_session_is_an_error() {
        assert_eq!(evaluate(&session(vec![]), &Thresholds::default()), Err(HmcError::EmptySession));
    }

    #[test]
    fn score_text_parsing() {
        assert_eq!(parse_score("0.80"), Some(80));
        assert_eq!(parse_score("1.00"), Some(100));
        for bad in ["1.01", "0.8", "00.80", "0,80", "-.80"] {
            assert_eq!(parse_score(bad), None, "{bad}");
        }
        assert!(HmcReport::from_parts("0.40", HmcVerdict::Pass, vec![], Thresholds::default()).is_err());
    }

    prop_compose! {
        fn arb_run()(wall in 0i64..120_000, cpu in 0u64..200_000, has_metric: bool, drop_samples: bool, regress: bool)
            -> (i64, u64, bool, bool, bool) {
            (wall, cpu, has_metric, drop_samples, regress)
        }
    }

    fn build(runs: &[(i64, u64, bool, bool, bool)]) -> SessionRecord {
        let mut start = 0;
        let runs = runs
            .iter()
            .enumerate()
            .map(|(i, &(wall, cpu, m, drop, regress))| {
                let metrics: &[(&str, &str)] = if m { &[("acc", "0.5")] } else { &[] };
                let mut r = run(i as u32, start, wall, cpu, metrics);
                if drop {
                    r.telemetry.samples.clear();
                }
                if regress && r.telemetry.samples.len() > 1 {
                    r.telemetry.samples[1].disk_read_bytes = 0;
                    r.telemetry.samples[0].disk_read_bytes = 9;
                }
                start += wall + 1;
                r
            })
            .collect();
        session(runs)
    }

    proptest! {
        #[test]
        fn score_bounded_and_monotone(runs in prop::collection::vec(arb_run(), 1..6), extra in arb_run()) {
            let th = Thresholds::default();
            let base = evaluate(&build(&runs), &th).unwrap();
            prop_assert!(base.score_centi() <= 100);
            prop_assert_eq!(&base, &evaluate(&build(&runs), &th).unwrap());
            let mut more = runs.clone();
            more.push(extra);
            let grown = evaluate(&build(&more), &th).unwrap();
            prop_assert!(grown.score_centi() <= base.score_centi());
        }
    }
}
