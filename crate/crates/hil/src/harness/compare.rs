//! Comparison of measured topic periods against a reference table.

use super::measure::MetricsRecord;
use super::HarnessError;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub sensor: String,
    pub topic: String,
    pub period_ms: f64,
    /// Informational only; never affects the verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<f64>,
    pub tolerance_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub name: String,
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceTable {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let table: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for e in &self.entries {
            if !(e.period_ms > 0.0) || !(e.tolerance_pct >= 0.0) {
                return Err(HarnessError::Parse(format!(
                    "reference row {}: period {} ms, tolerance {}%",
                    e.sensor, e.period_ms, e.tolerance_pct
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    /// Reference row with no measurement.
    Missing,
    /// Measured topic with no reference row.
    Uncovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub sensor: Option<String>,
    pub topic: String,
    pub expected_ms: Option<f64>,
    pub measured_ms: Option<f64>,
    pub deviation_pct: Option<f64>,
    pub tolerance_pct: Option<f64>,
    pub payload_bytes: Option<f64>,
    pub expected_payload_bytes: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// True when every reference row was measured and within tolerance.
    /// Uncovered topics do not affect the outcome.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| matches!(r.verdict, Verdict::Pass | Verdict::Uncovered))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "reference: {}", self.reference);
        let _ = writeln!(
            out,
            "{:<22} {:<44} {:>10} {:>10} {:>8} {:>12}  verdict",
            "sensor", "topic", "ref ms", "meas ms", "dev %", "bytes"
        );
        let num = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:<44} {:>10} {:>10} {:>8} {:>12}  {:?}",
                r.sensor.as_deref().unwrap_or("-"),
                r.topic,
                num(r.expected_ms, 1),
                num(r.measured_ms, 2),
                num(r.deviation_pct, 1),
                num(r.payload_bytes, 0),
                r.verdict
            );
        }
        let _ = writeln!(out, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

pub fn compare_report(records: &[MetricsRecord], reference: &ReferenceTable) -> ComparisonReport {
    let mut rows: Vec<ComparisonRow> = reference
        .entries
        .iter()
        .map(|e| {
            let measured = records.iter().find(|r| r.topic == e.topic);
            let deviation = measured.map(|m| (m.mean_period_ms - e.period_ms) / e.period_ms * 100.0);
            let verdict = match deviation {
                None => Verdict::Missing,
                Some(d) if d.abs() <= e.tolerance_pct => Verdict::Pass,
                Some(_) => Verdict::Fail,
            };
            ComparisonRow {
                sensor: Some(e.sensor.clone()),
                topic: e.topic.clone(),
                expected_ms: Some(e.period_ms),
                measured_ms: measured.map(|m| m.mean_period_ms),
                deviation_pct: deviation,
                tolerance_pct: Some(e.tolerance_pct),
                payload_bytes: measured.map(|m| m.mean_payload_bytes),
                expected_payload_bytes: e.payload_bytes,
                verdict,
            }
        })
        .collect();
    for r in records.iter().filter(|r| !reference.entries.iter().any(|e| e.topic == r.topic)) {
        rows.push(ComparisonRow {
            sensor: None,
            topic: r.topic.clone(),
            expected_ms: None,
            measured_ms: Some(r.mean_period_ms),
            deviation_pct: None,
            tolerance_pct: None,
            payload_bytes: Some(r.mean_payload_bytes),
            expected_payload_bytes: None,
            verdict: Verdict::Uncovered,
        });
    }
    ComparisonReport { reference: reference.name.clone(), rows }
}
