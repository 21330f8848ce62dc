//! Subtask, action, object and task accuracy; closed-loop simulation; and a
//! harness that asks a text-completion model to plan from a prompt.

mod baseline;
mod client;
mod metrics;
mod planner;
mod prompt;
mod run;

use std::fs;
use std::path::Path;

use serde::Serialize;

pub use baseline::{baseline_eval, BaselineRecord, BaselineReport, PromptConfig};
pub use client::{ClientError, EchoOracleClient, HttpClient, HttpClientConfig, MockClient, PlannerClient};
pub use metrics::{subtask_metrics, MetricsReport, Prediction, FAILURE_COLUMN};
pub use planner::{GridPlanner, MajorityBaseline, ObjectRole, OraclePlanner, Planner, Query};
pub use prompt::{build_prompt, describe, format_subtask, parse_planner_response, ParseFailure};
pub use run::{evaluate, simulate, step_cap, task_accuracy, EvalMode, EvalOutcome, SimStep, SimulationLog, StageRecord};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {ground_truth} ground-truth subtasks")]
    LengthMismatch { predictions: usize, ground_truth: usize },
    #[error("evaluation configuration: {0}")]
    Config(String),
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Serialize)]
struct CsvRow {
    task_id: u64,
    stage: usize,
    expected_action: &'static str,
    expected_object: usize,
    predicted_action: Option<&'static str>,
    predicted_object: Option<usize>,
    correct: bool,
    note: Option<String>,
    latency_ms: Option<f64>,
}

#[derive(Serialize)]
struct JsonReport<'a, C: Serialize> {
    config_digest: &'a str,
    config: &'a C,
    metrics: &'a MetricsReport,
}

fn write_reports<C: Serialize>(
    dir: &Path,
    stem: &str,
    rows: Vec<CsvRow>,
    metrics: &MetricsReport,
    config: &C,
) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let digest = crate::encoder::digest_of(config);
    let json = JsonReport {
        config_digest: &digest,
        config,
        metrics,
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&json).expect("serializable report"),
    )?;
    Ok(())
}

/// Writes `{stem}.csv` (one row per stage) and `{stem}.json` (metrics plus
/// `config` and its digest) into `dir`.
pub fn write_eval_report<C: Serialize>(dir: &Path, stem: &str, outcome: &EvalOutcome, config: &C) -> Result<(), EvalError> {
    let rows = outcome
        .records
        .iter()
        .map(|r| CsvRow {
            task_id: r.task_id,
            stage: r.stage,
            expected_action: r.expected.action.name(),
            expected_object: r.expected.object_id,
            predicted_action: r.predicted.map(|p| p.action.name()),
            predicted_object: r.predicted.map(|p| p.object_id),
            correct: r.predicted == Some(r.expected),
            note: r.error.clone(),
            latency_ms: None,
        })
        .collect();
    write_reports(dir, stem, rows, &outcome.report, config)
}

pub fn write_baseline_report<C: Serialize>(
    dir: &Path,
    stem: &str,
    report: &BaselineReport,
    config: &C,
) -> Result<(), EvalError> {
    let rows = report
        .records
        .iter()
        .map(|r| CsvRow {
            task_id: r.task_id,
            stage: r.stage,
            expected_action: r.expected.action.name(),
            expected_object: r.expected.object_id,
            predicted_action: r.predicted.map(|p| p.action.name()),
            predicted_object: r.predicted.map(|p| p.object_id),
            correct: r.predicted == Some(r.expected),
            note: r.failure.clone(),
            latency_ms: Some(r.latency_ms),
        })
        .collect();
    write_reports(dir, stem, rows, &report.metrics, config)
}
