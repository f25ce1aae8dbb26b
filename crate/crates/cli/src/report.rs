//! Run reports and their text, csv and json renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::OutputFormat;

/// Which side of the tolerance passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    /// Residual below the tolerance.
    Below,
    /// Residual at or above the tolerance (nonexistence scans).
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    #[serde(with = "float_or_string")]
    pub grid_max_residual: f64,
    #[serde(with = "float_or_string")]
    pub tolerance: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl CheckRow {
    pub fn below(check: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        let residual = if residual.is_nan() { f64::INFINITY } else { residual };
        CheckRow { check: check.into(), grid_max_residual: residual, tolerance, bound: Bound::Below, pass: residual < tolerance }
    }

    pub fn at_least(check: impl Into<String>, residual: f64, threshold: f64) -> Self {
        CheckRow { check: check.into(), grid_max_residual: residual, tolerance: threshold, bound: Bound::AtLeast, pass: residual >= threshold }
    }

    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "pass"
        } else {
            "fail"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub task: String,
    /// Scenario `key = value` pairs in file order.
    pub scenario: Vec<(String, String)>,
    pub checks: Vec<CheckRow>,
    pub notes: Vec<String>,
    /// Only rendered in json; text and csv stay byte-identical across runs.
    pub wall_clock_ms: f64,
}

impl RunReport {
    pub fn new(task: &str, scenario: Vec<(String, String)>) -> Self {
        RunReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            task: task.to_string(),
            scenario,
            checks: vec![],
            notes: vec![],
            wall_clock_ms: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3e}")
    } else {
        format!("{x}")
    }
}

pub fn emit_report(report: &RunReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Text => emit_text(report),
        OutputFormat::Csv => emit_csv(report),
        OutputFormat::Json => serde_json::to_string_pretty(report).expect("reports serialize") + "\n",
    }
}

pub fn parse_json_report(src: &str) -> serde_json::Result<RunReport> {
    serde_json::from_str(src)
}

fn emit_text(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "warpcurv {}: {}", r.tool_version, r.task);
    if !r.scenario.is_empty() {
        out.push_str("\nscenario\n");
        let w = r.scenario.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &r.scenario {
            let _ = writeln!(out, "  {k:<w$} = {v}");
        }
    }
    if !r.checks.is_empty() {
        let w = r.checks.iter().map(|c| c.check.chars().count()).max().unwrap_or(0).max(5);
        let _ = writeln!(out, "\n{:<w$}  {:>12}  {:>2} {:>10}  verdict", "check", "residual", "", "tolerance");
        for c in &r.checks {
            let rel = match c.bound {
                Bound::Below => "<",
                Bound::AtLeast => ">=",
            };
            let pad = w - c.check.chars().count();
            let _ = writeln!(out, "{}{}  {:>12}  {rel:>2} {:>10}  {}", c.check, " ".repeat(pad), num(c.grid_max_residual), num(c.tolerance), c.verdict());
        }
    }
    if !r.notes.is_empty() {
        out.push_str("\nnotes\n");
        for n in &r.notes {
            let _ = writeln!(out, "  {n}");
        }
    }
    let passed = r.checks.iter().filter(|c| c.pass).count();
    let _ = writeln!(out, "\nresult: {} ({passed}/{} checks passed)", if r.passed() { "pass" } else { "fail" }, r.checks.len());
    out
}

fn emit_csv(r: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "grid_max_residual", "tolerance", "verdict"]).expect("in-memory write");
    for c in &r.checks {
        w.write_record([c.check.as_str(), &format!("{:e}", c.grid_max_residual), &format!("{:e}", c.tolerance), c.verdict()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// JSON has no infinities; non-finite values travel as strings.
mod float_or_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only_csv() {
        let r = RunReport::new("oracle-verify", vec![]);
        assert_eq!(emit_report(&r, OutputFormat::Csv), "check,grid_max_residual,tolerance,verdict\n");
    }

    #[test]
    fn single_passing_row() {
        let mut r = RunReport::new("einstein-check", vec![]);
        r.checks.push(CheckRow::below("Ricci minus λg", 1e-14, 1e-6));
        let csv = emit_report(&r, OutputFormat::Csv);
        assert_eq!(csv.lines().nth(1).unwrap(), "Ricci minus λg,1e-14,1e-6,pass");
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn json_round_trip_with_infinity() {
        let mut r = RunReport::new("nonexistence-scan", vec![("task".into(), "nonexistence-scan".into())]);
        r.checks.push(CheckRow::below("a, \"quoted\"", f64::INFINITY, 1e-6));
        r.checks.push(CheckRow::at_least("scan", 0.25, 0.01));
        r.notes.push("note".into());
        r.wall_clock_ms = 12.5;
        let back = parse_json_report(&emit_report(&r, OutputFormat::Json)).unwrap();
        assert_eq!(back, r);
        assert!(!back.passed());
    }

    #[test]
    fn nan_residual_fails() {
        assert!(!CheckRow::below("x", f64::NAN, 1.0).pass);
    }
}
