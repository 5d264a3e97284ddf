//! Experiment reports: a JSON document plus a flat CSV of the accuracy matrix.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alloc::MemoryPlan;
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::metrics::CostEstimate;
use crate::scenario::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

/// Accuracy of the global model after finishing `task`: on the union of all
/// test splits so far, and on each split `0..=task` separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task: usize,
    pub overall_acc: f64,
    pub per_subset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// Fully resolved configuration of this single run; re-running it
    /// reproduces the report.
    pub config: RunConfig,
    pub seed: u64,
    pub scenario: Scenario,
    pub per_task: Vec<TaskEval>,
    pub a_avg: f64,
    pub a_last: f64,
    pub allocation_trace: Vec<MemoryPlan>,
    pub cost_estimate: CostEstimate,
    /// Only filled when explicitly requested, so that reports stay
    /// byte-identical across runs by default.
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    /// Structural checks: schema version, a lower-triangular accuracy matrix
    /// with entries in `[0, 1]`, and summary values consistent with it.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        if self.per_task.is_empty() {
            return Err(Error::Empty("per_task"));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        for (t, e) in self.per_task.iter().enumerate() {
            if e.task != t || e.per_subset.len() != t + 1 {
                return Err(Error::invalid(
                    "per_task",
                    format!("row {t} is not lower-triangular"),
                ));
            }
            if !in_unit(e.overall_acc) || !e.per_subset.iter().all(|&v| in_unit(v)) {
                return Err(Error::invalid(
                    "per_task",
                    format!("accuracy outside [0, 1] in row {t}"),
                ));
            }
        }
        let overall: Vec<f64> = self.per_task.iter().map(|e| e.overall_acc).collect();
        let avg = overall.iter().sum::<f64>() / overall.len() as f64;
        if (avg - self.a_avg).abs() > 1e-12 {
            return Err(Error::invalid(
                "a_avg",
                format!("{} but rows average {avg}", self.a_avg),
            ));
        }
        if overall.last() != Some(&self.a_last) {
            return Err(Error::invalid("a_last", "differs from the final row"));
        }
        if self.allocation_trace.len() + 1 != self.per_task.len() {
            return Err(Error::invalid(
                "allocation_trace",
                "one plan per task boundary expected",
            ));
        }
        Ok(())
    }

    /// `eval_after_task,subset_task,accuracy` rows, header first, LF endings.
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("eval_after_task,subset_task,accuracy\n");
        for e in &self.per_task {
            for (tau, acc) in e.per_subset.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", e.task, tau, acc));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.csv`, creating `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path, stem: &str) -> Result<ReportPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    let mut text = serde_json::to_string_pretty(report).map_err(|source| Error::Report {
        path: json.clone(),
        source,
    })?;
    text.push('\n');
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    fs::write(&csv, report.accuracy_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(ReportPaths { json, csv })
}

pub fn parse_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Report {
        path: path.to_path_buf(),
        source,
    })
}
