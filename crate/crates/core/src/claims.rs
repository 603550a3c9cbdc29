//! Checking reported numbers against the attested record.
//!
//! Manifest format, one claim per line:
//!
//! ```text
//! # comment
//! val_accuracy<TAB>0.913<TAB>exact
//! loss<TAB>1.07<TAB>±0.01
//! ```
//!
//! A claim is compared with the final occurrence of the metric across all
//! runs. `exact` compares lexical values; `±eps` compares parsed values with
//! an absolute tolerance.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use thiserror::Error;

use crate::metrics::is_number_lexeme;
use crate::model::{MetricRecord, SessionRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    Exact,
    Tolerance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub name: String,
    pub value: String,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClaimsManifest {
    pub claims: Vec<Claim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("claims manifest line {line}: {reason}")]
pub struct ClaimsParseError {
    pub line: usize,
    pub reason: &'static str,
}

impl FromStr for ClaimsManifest {
    type Err = ClaimsParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut claims = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason| ClaimsParseError { line: i + 1, reason };
            let parts: Vec<&str> = line.split('\t').collect();
            let [name, value, cmp] = parts[..] else {
                return Err(err("expected three tab-separated fields"));
            };
            if name.is_empty() || value.is_empty() {
                return Err(err("empty name or value"));
            }
            let comparison = if cmp == "exact" {
                Comparison::Exact
            } else {
                let eps = cmp
                    .strip_prefix('±')
                    .or_else(|| cmp.strip_prefix("+/-"))
                    .ok_or(err("comparison must be `exact` or `±epsilon`"))?;
                if !is_number_lexeme(eps) {
                    return Err(err("epsilon is not a number"));
                }
                let eps: f64 = eps.parse().map_err(|_| err("epsilon is not a number"))?;
                if !(eps >= 0.0 && eps.is_finite()) {
                    return Err(err("epsilon must be finite and non-negative"));
                }
                if !is_number_lexeme(value) {
                    return Err(err("tolerance claims need a numeric value"));
                }
                Comparison::Tolerance(eps)
            };
            claims.push(Claim { name: name.into(), value: value.into(), comparison });
        }
        Ok(Self { claims })
    }
}

/// The last printed value of every metric name, in order of first
/// appearance, with the run it came from.
pub fn final_values(session: &SessionRecord) -> Vec<(u32, &MetricRecord)> {
    let mut out: Vec<(u32, &MetricRecord)> = Vec::new();
    for run in session.runs() {
        for m in &run.metrics {
            match out.iter_mut().find(|(_, prev)| prev.name == m.name) {
                Some(slot) => *slot = (run.run_index, m),
                None => out.push((run.run_index, m)),
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClaimOutcome {
    Match,
    Mismatch(String),
    Absent,
}

pub fn check_claim(session: &SessionRecord, claim: &Claim) -> ClaimOutcome {
    let finals = final_values(session);
    let Some((run, m)) = finals.iter().find(|(_, m)| m.name == claim.name) else {
        return ClaimOutcome::Absent;
    };
    let ok = match claim.comparison {
        Comparison::Exact => m.lexical_value == claim.value,
        Comparison::Tolerance(eps) => {
            let claimed: f64 = claim.value.parse().unwrap_or(f64::NAN);
            let diff = claimed - m.numeric_value();
            let diff = if diff < 0.0 { -diff } else { diff };
            diff <= eps
        }
    };
    if ok {
        ClaimOutcome::Match
    } else {
        ClaimOutcome::Mismatch(format!(
            "`{}` claimed {} but run {} printed {}",
            claim.name, claim.value, run, m.lexical_value
        ))
    }
}
