//! Certification of the trade-off bound over a sweep.

use std::fmt::Write as _;

use serde::Serialize;

use crate::attack::AttackKind;
use crate::error::{Error, Result};
use crate::metrics::{check_lemma_bounds, check_nfl, LemmaReport, NflCheck, TradeoffRecord};

use super::experiment::Experiment;
use super::sweep::sweep;

/// Largest tolerated gap between the slack and the sum of its three parts.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    Pass,
    /// An assumption behind the bound does not hold here; nothing to certify.
    Skipped { reason: String },
    Violation { reasons: Vec<String> },
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub param: f64,
    pub status: PointStatus,
    pub nfl: Option<NflCheck>,
    pub lemmas: Option<LemmaReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub points: Vec<PointReport>,
}

impl VerifyReport {
    /// 0: everything certified or skipped; 1: a bound is violated;
    /// 2: a point failed for another reason.
    pub fn exit_code(&self) -> i32 {
        if self.points.iter().any(|p| matches!(p.status, PointStatus::Violation { .. })) {
            1
        } else if self.points.iter().any(|p| matches!(p.status, PointStatus::Error { .. })) {
            2
        } else {
            0
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            let _ = write!(s, "point {:>3} param {:<10} ", p.index, p.param);
            match &p.status {
                PointStatus::Pass => s.push_str("PASS"),
                PointStatus::Skipped { reason } => {
                    let _ = write!(s, "SKIP ({reason})");
                }
                PointStatus::Violation { reasons } => {
                    let _ = write!(s, "VIOLATION ({})", reasons.join("; "));
                }
                PointStatus::Error { reason } => {
                    let _ = write!(s, "ERROR ({reason})");
                }
            }
            if let Some(n) = &p.nfl {
                let _ = write!(
                    s,
                    "  slack {:.6e} ± {:.2e} [parts {:.4e} {:.4e} {:.4e}, residual {:.1e}]",
                    n.slack, n.se, n.part_leakage, n.part_utility, n.part_triangle, n.residual
                );
            }
            if let Some(l) = &p.lemmas {
                let _ = write!(s, "  L2 {:.4e} L3 {:.4e}", l.l2.slack, l.l3.slack);
                if let Some(l1) = l.l1 {
                    let _ = write!(s, " L1min {:.4e}", l1.slack);
                }
            }
            s.push('\n');
        }
        let pass = self.points.iter().filter(|p| p.status == PointStatus::Pass).count();
        let skipped = self.points.iter().filter(|p| matches!(p.status, PointStatus::Skipped { .. })).count();
        let _ = writeln!(s, "{pass} certified, {skipped} skipped, {} total", self.points.len());
        s
    }
}

const SKIPPABLE: [&str; 3] = ["assumption_violated", "side_condition_violated", "nonpositive_c1"];

/// Judge one evaluated record.
pub fn judge(record: &TradeoffRecord) -> PointReport {
    let mut report = PointReport { index: record.index, param: record.param, status: PointStatus::Pass, nfl: None, lemmas: None };
    if let Some(err) = &record.error {
        let kind = record.error_kind().unwrap_or("");
        report.status = if SKIPPABLE.contains(&kind) {
            PointStatus::Skipped { reason: err.clone() }
        } else {
            PointStatus::Error { reason: err.clone() }
        };
        return report;
    }
    let outcome = check_nfl(record).and_then(|n| Ok((n, check_lemma_bounds(record)?)));
    let (nfl, lemmas) = match outcome {
        Ok(x) => x,
        Err(e) => {
            let reason = format!("{}: {e}", e.kind());
            report.status = if SKIPPABLE.contains(&e.kind()) {
                PointStatus::Skipped { reason }
            } else {
                PointStatus::Error { reason }
            };
            return report;
        }
    };
    let mut reasons = Vec::new();
    if !nfl.passed {
        reasons.push(format!("trade-off slack {:.6e} below -3 SE ({:.2e})", nfl.slack, nfl.se));
    }
    if nfl.residual.abs() > DECOMPOSITION_TOLERANCE {
        reasons.push(format!("decomposition residual {:.3e}", nfl.residual));
    }
    if nfl.part_triangle < -DECOMPOSITION_TOLERANCE {
        reasons.push(format!("triangle part {:.3e} negative", nfl.part_triangle));
    }
    if !lemmas.l2.passed {
        reasons.push(format!("leakage lemma slack {:.6e} below -3 SE ({:.2e})", lemmas.l2.slack, lemmas.l2.se));
    }
    if !lemmas.l3.passed {
        reasons.push(format!("utility lemma slack {:.6e} below -3 SE ({:.2e})", lemmas.l3.slack, lemmas.l3.se));
    }
    if let Some(l1) = lemmas.l1 {
        if !l1.passed {
            reasons.push(format!("recovery lemma slack {:.6e} negative", l1.slack));
        }
    }
    if !reasons.is_empty() {
        report.status = PointStatus::Violation { reasons };
    }
    report.nfl = Some(nfl);
    report.lemmas = Some(lemmas);
    report
}

/// Run the sweep and certify every point. Needs the calibrated attacker,
/// whose regret constants are known exactly.
pub fn verify_nfl(exp: &Experiment) -> Result<(Vec<TradeoffRecord>, VerifyReport)> {
    if exp.config.attacker.kind != AttackKind::Calibrated {
        return Err(Error::InvalidConfig("verification needs the calibrated attacker".into()));
    }
    let records = sweep(exp);
    let report = VerifyReport { points: records.iter().map(judge).collect() };
    Ok((records, report))
}
