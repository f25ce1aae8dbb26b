//! Scenario runner for warpcurv: parses `key = value` scenario files,
//! dispatches to the curvature and family checks, and renders reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ConfigParseError, OutputFormat, ScenarioConfig, Task};
pub use report::{emit_report, parse_json_report, CheckRow, RunReport};
pub use run::{exit, run_scenario, CliError};

/// Parses, runs and renders a scenario; returns the rendered report and the
/// exit status it implies.
pub fn verify_source(src: &str, format: Option<OutputFormat>) -> Result<(String, i32), CliError> {
    let cfg = ScenarioConfig::parse(src)?;
    let report = run_scenario(&cfg)?;
    let code = if report.passed() { exit::PASS } else { exit::CHECK_FAILED };
    Ok((emit_report(&report, format.unwrap_or(cfg.format)), code))
}
