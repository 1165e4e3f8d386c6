//! CSV / JSON export of trade-off records.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{BoundConstants, TradeoffRecord};
use crate::stats::Estimate;

pub const CSV_HEADER: [&str; 13] = [
    "mech", "param", "eps_p", "eps_p_se", "eps_u", "eps_u_se", "delta", "tv_p_pt", "tv_pt_pb", "tv_p_pb", "C1", "C2",
    "nfl_slack",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

/// Round to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn fmt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => round9(v).to_string(),
        Some(v) => v.to_string(),
        None => String::new(),
    }
}

fn round_est(e: Option<Estimate>) -> Option<Estimate> {
    e.map(|e| Estimate { value: round9(e.value), se: round9(e.se) })
}

/// A copy with every float rounded as it is written out.
pub fn rounded(r: &TradeoffRecord) -> TradeoffRecord {
    let constants = r.constants.map(|k| BoundConstants {
        omega: round9(k.omega),
        c: round9(k.c),
        alpha: round9(k.alpha),
        c_a: round9(k.c_a),
        c_b: round9(k.c_b),
        c0: round9(k.c0),
        c2: round9(k.c2),
        p: round9(k.p),
        iterations: k.iterations,
        coef_c1: round9(k.coef_c1),
        coef_c1_undivided: round9(k.coef_c1_undivided),
        coef_c2: round9(k.coef_c2),
    });
    TradeoffRecord {
        param: round9(r.param),
        eps_p: round_est(r.eps_p),
        eps_u: round_est(r.eps_u),
        delta: r.delta.map(round9),
        tv_p_pt: round_est(r.tv_p_pt),
        tv_pt_pb: round_est(r.tv_pt_pb),
        tv_p_pb: round_est(r.tv_p_pb),
        constants,
        nfl_slack: r.nfl_slack.map(round9),
        nfl_se: r.nfl_se.map(round9),
        min_lemma1_slack: r.min_lemma1_slack.map(round9),
        ..r.clone()
    }
}

pub fn write_csv(records: &[TradeoffRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        let k = r.constants.as_ref();
        out.write_record([
            r.mech.name().to_string(),
            fmt(Some(r.param)),
            fmt(r.eps_p.map(|e| e.value)),
            fmt(r.eps_p.map(|e| e.se)),
            fmt(r.eps_u.map(|e| e.value)),
            fmt(r.eps_u.map(|e| e.se)),
            fmt(r.delta),
            fmt(r.tv_p_pt.map(|e| e.value)),
            fmt(r.tv_pt_pb.map(|e| e.value)),
            fmt(r.tv_p_pb.map(|e| e.value)),
            fmt(k.map(|k| k.coef_c1)),
            fmt(k.map(|k| k.coef_c2)),
            fmt(r.nfl_slack),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json(records: &[TradeoffRecord], mut w: impl Write) -> Result<()> {
    let rounded: Vec<TradeoffRecord> = records.iter().map(rounded).collect();
    serde_json::to_writer_pretty(&mut w, &rounded)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json(text: &str) -> Result<Vec<TradeoffRecord>> {
    Ok(serde_json::from_str(text)?)
}

pub fn export_results(records: &[TradeoffRecord], format: Format, path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("nothing to export".into()));
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        Format::Csv => write_csv(records, file),
        Format::Json => write_json(records, file),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protection::Mechanism;

    fn rec(i: usize) -> TradeoffRecord {
        let mut r = TradeoffRecord::empty(i, Mechanism::Gaussian, 0.1 * i as f64);
        r.eps_p = Some(Estimate { value: 1.0 / 3.0, se: 0.0123456789123 });
        r.eps_u = Some(Estimate::exact(0.05));
        r.delta = Some(0.0);
        r
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(round9(1.0 / 3.0), 0.333333333);
        assert_eq!(round9(123456789123.0), 123456789000.0);
        assert_eq!(round9(0.0), 0.0);
    }

    #[test]
    fn csv_shape() {
        let mut buf = Vec::new();
        write_csv(&[rec(1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert!(lines[1].starts_with("gaussian,0.1,0.333333333,0.0123456789,0.05,0,0,"));
    }

    #[test]
    fn json_round_trip() {
        let recs: Vec<TradeoffRecord> = (0..4).map(rec).collect();
        let mut buf = Vec::new();
        write_json(&recs, &mut buf).unwrap();
        let back = read_json(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.len(), 4);
        let expect: Vec<TradeoffRecord> = recs.iter().map(rounded).collect();
        assert_eq!(back, expect);
    }
}
