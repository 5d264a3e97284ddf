//! Run configuration, config-file loading, and multi-seed / comparison /
//! sweep drivers that write report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AllocationMode, FederationConfig};
use crate::error::{Error, Result};
use crate::report::{emit_report, ExperimentReport, SCHEMA_VERSION};
use crate::scenario::{build_scenario, build_task_stream, Scenario, ScenarioParams};
use crate::server::run_experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub federation: FederationConfig,
    pub scenario: Scenario,
    /// New classes per task.
    pub class_counts: Vec<usize>,
    pub num_domains: usize,
    pub per_class_samples: usize,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub dirichlet_alpha: f64,
    pub test_fraction: f64,
    pub num_seeds: usize,
    pub output_dir: PathBuf,
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            federation: FederationConfig::default(),
            scenario: Scenario::Fcil,
            class_counts: vec![4, 3, 3, 3],
            num_domains: 1,
            per_class_samples: 200,
            feature_dim: 16,
            hidden: vec![32, 16],
            dirichlet_alpha: 1.0,
            test_fraction: 0.2,
            num_seeds: 1,
            output_dir: PathBuf::from("out"),
            record_wall_clock: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        if self.num_seeds == 0 {
            return Err(Error::invalid("num_seeds", "must be at least 1"));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::invalid(
                "dirichlet_alpha",
                "must be a positive finite real",
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid(
                "hidden",
                "need at least one layer, all widths >= 1",
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim", "must be at least 2"));
        }
        if self.per_class_samples == 0 {
            return Err(Error::invalid("per_class_samples", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
        }
        let n_test = (self.per_class_samples as f64 * self.test_fraction).round() as usize;
        if n_test == 0 || n_test >= self.per_class_samples {
            return Err(Error::invalid(
                "test_fraction",
                "must leave at least one test and one training sample per class",
            ));
        }
        build_task_stream(self.scenario, &self.class_counts, self.num_domains)?;
        Ok(())
    }

    /// Single-seed copy for seed index `i`; this is what a report echoes.
    pub fn for_seed(&self, i: usize) -> RunConfig {
        let mut c = self.clone();
        c.federation.seed = self.federation.seed.wrapping_add(i as u64);
        c.num_seeds = 1;
        c
    }

    pub fn with_mode(&self, mode: AllocationMode) -> RunConfig {
        let mut c = self.clone();
        c.federation.allocation_mode = mode;
        c
    }
}

/// Every key a config file may set.
pub fn known_keys() -> Vec<String> {
    match toml::Table::try_from(RunConfig::default()) {
        Ok(t) => t.keys().cloned().collect(),
        Err(_) => Vec::new(),
    }
}

/// 1-based line on which `key` is assigned, if any.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a flat `key = value` document. Unknown keys are rejected; missing
/// keys take their defaults. Errors carry the key and its line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map_or(0, |s| line_of_offset(text, s.start));
        Error::ConfigParse(format!("line {line}: {}", e.message()))
    })?;
    let known = known_keys();
    for (key, value) in &table {
        if !known.contains(key) {
            return Err(Error::Config {
                key: key.clone(),
                line: key_line(text, key).unwrap_or(0),
                reason: format!("unknown key (known keys: {})", known.join(", ")),
            });
        }
        if value.is_table() {
            return Err(Error::Config {
                key: key.clone(),
                line: key_line(text, key).unwrap_or(0),
                reason: "nested tables are not supported".into(),
            });
        }
    }
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of_offset(text, s.start));
        let key = table
            .keys()
            .find(|k| key_line(text, k) == Some(line))
            .cloned()
            .unwrap_or_default();
        Error::Config {
            key,
            line,
            reason: e.message().to_string(),
        }
    })?;
    config.validate().map_err(|e| match e {
        Error::Invalid { field, reason } => Error::Config {
            key: field.to_string(),
            line: key_line(text, field).unwrap_or(0),
            reason,
        },
        other => other,
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// One seeded experiment, start to finish. `config.federation.seed` is the
/// seed; `num_seeds` is ignored.
pub fn run_single(config: &RunConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let seed = config.federation.seed;
    let stream = build_task_stream(config.scenario, &config.class_counts, config.num_domains)?;
    let data = build_scenario::<f64>(
        &stream,
        &ScenarioParams {
            per_class: config.per_class_samples,
            feature_dim: config.feature_dim,
            test_fraction: config.test_fraction,
            num_clients: config.federation.num_clients,
            dirichlet_alpha: config.dirichlet_alpha,
            seed,
        },
    )?;
    let outcome = run_experiment(&data, &config.hidden, &config.federation)?;
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        config: config.for_seed(0),
        seed,
        scenario: config.scenario,
        per_task: outcome.per_task,
        a_avg: outcome.summary.a_avg,
        a_last: outcome.summary.a_last,
        allocation_trace: outcome.allocation_trace,
        cost_estimate: outcome.cost_estimate,
        wall_clock_seconds: config
            .record_wall_clock
            .then(|| started.elapsed().as_secs_f64()),
    };
    report.validate()?;
    Ok(report)
}

/// Mean and sample standard deviation (`None` below two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        Self { mean, std }
    }

    fn csv(&self) -> String {
        match self.std {
            Some(s) => format!("{},{}", self.mean, s),
            None => format!("{},", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: AllocationMode,
    pub seeds: Vec<u64>,
    pub a_avg: Vec<f64>,
    pub a_last: Vec<f64>,
    pub a_avg_stats: MeanStd,
    pub a_last_stats: MeanStd,
}

/// Per-seed `dynamic - fixed_equal` differences of a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDelta {
    pub a_avg: Vec<f64>,
    pub a_last: Vec<f64>,
    pub a_avg_stats: MeanStd,
    pub a_last_stats: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub modes: Vec<ModeSummary>,
    pub delta: Option<CompareDelta>,
}

/// Runs every seed of `config` in `mode`, writing one report pair per seed
/// under `dir`.
pub fn run_seeds(
    config: &RunConfig,
    mode: AllocationMode,
    dir: &Path,
) -> Result<(ModeSummary, Vec<ExperimentReport>)> {
    let base = config.with_mode(mode);
    let reports: Vec<ExperimentReport> = (0..config.num_seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = base.for_seed(i);
            let report = run_single(&cfg)?;
            emit_report(&report, dir, &format!("seed_{}", cfg.federation.seed))?;
            Ok(report)
        })
        .collect::<Result<_>>()?;
    let a_avg: Vec<f64> = reports.iter().map(|r| r.a_avg).collect();
    let a_last: Vec<f64> = reports.iter().map(|r| r.a_last).collect();
    let summary = ModeSummary {
        mode,
        seeds: reports.iter().map(|r| r.seed).collect(),
        a_avg_stats: MeanStd::of(&a_avg),
        a_last_stats: MeanStd::of(&a_last),
        a_avg,
        a_last,
    };
    Ok((summary, reports))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Report {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

/// Runs all seeds in the configured mode (or `mode_override`), or in both
/// modes when `compare` is set. Reports go to `<output_dir>/<mode>/`;
/// `summary.json` and `summary.csv` are written last.
pub fn run(
    config: &RunConfig,
    mode_override: Option<AllocationMode>,
    compare: bool,
) -> Result<RunSummary> {
    config.validate()?;
    let modes = if compare {
        vec![AllocationMode::Dynamic, AllocationMode::FixedEqual]
    } else {
        vec![mode_override.unwrap_or(config.federation.allocation_mode)]
    };
    let mut summaries = Vec::new();
    for mode in modes {
        let dir = config.output_dir.join(mode.name());
        summaries.push(run_seeds(config, mode, &dir)?.0);
    }
    let delta = compare.then(|| {
        let (d, f) = (&summaries[0], &summaries[1]);
        let a_avg: Vec<f64> = d.a_avg.iter().zip(&f.a_avg).map(|(x, y)| x - y).collect();
        let a_last: Vec<f64> = d.a_last.iter().zip(&f.a_last).map(|(x, y)| x - y).collect();
        CompareDelta {
            a_avg_stats: MeanStd::of(&a_avg),
            a_last_stats: MeanStd::of(&a_last),
            a_avg,
            a_last,
        }
    });
    let summary = RunSummary {
        modes: summaries,
        delta,
    };

    let json_path = config.output_dir.join("summary.json");
    write_file(&json_path, &to_json(&summary, &json_path)?)?;
    let mut csv = String::from("mode,runs,a_avg_mean,a_avg_std,a_last_mean,a_last_std\n");
    for m in &summary.modes {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            m.mode.name(),
            m.seeds.len(),
            m.a_avg_stats.csv(),
            m.a_last_stats.csv()
        );
    }
    if let Some(d) = &summary.delta {
        let _ = writeln!(
            csv,
            "delta,{},{},{}",
            d.a_avg.len(),
            d.a_avg_stats.csv(),
            d.a_last_stats.csv()
        );
    }
    write_file(&config.output_dir.join("summary.csv"), &csv)?;
    Ok(summary)
}

pub const SWEEP_KEYS: &[&str] = &["a", "lambda", "delta", "m_max", "dirichlet_alpha", "M"];

/// Canonical sweep key for an accepted spelling.
fn sweep_key(key: &str) -> Option<&'static str> {
    Some(match key {
        "a" | "mix_a" => "a",
        "lambda" | "momentum_lambda" => "lambda",
        "delta" | "mg_weight" => "delta",
        "m_max" => "m_max",
        "dirichlet_alpha" | "alpha" => "dirichlet_alpha",
        "M" | "pool_size" => "M",
        _ => return None,
    })
}

fn as_count(key: &'static str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(
            key,
            format!("{v} is not a non-negative integer"),
        ))
    }
}

/// Copy of `config` with sweep key `key` set to `value`.
pub fn apply_sweep_value(config: &RunConfig, key: &str, value: f64) -> Result<RunConfig> {
    let canonical = sweep_key(key).ok_or_else(|| {
        Error::invalid(
            "sweep key",
            format!(
                "`{key}` is not sweepable (sweepable: {})",
                SWEEP_KEYS.join(", ")
            ),
        )
    })?;
    let mut c = config.clone();
    match canonical {
        "a" => c.federation.mix_a = value,
        "lambda" => c.federation.momentum_lambda = value,
        "delta" => c.federation.mg_weight = value,
        "m_max" => c.federation.m_max = as_count("m_max", value)?,
        "dirichlet_alpha" => c.dirichlet_alpha = value,
        _ => c.federation.pool_size = as_count("pool_size", value)?,
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub value: f64,
    pub summary: ModeSummary,
}

/// Runs every seed once per value of `key` and writes
/// `<output_dir>/sweep_<key>.csv` with one row per value.
pub fn sweep(config: &RunConfig, key: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    let canonical = sweep_key(key).ok_or_else(|| {
        Error::invalid(
            "sweep key",
            format!(
                "`{key}` is not sweepable (sweepable: {})",
                SWEEP_KEYS.join(", ")
            ),
        )
    })?;
    let configs = values
        .iter()
        .map(|&v| apply_sweep_value(config, canonical, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (c, &v) in configs.iter().zip(values) {
        let dir = config
            .output_dir
            .join(format!("sweep_{canonical}"))
            .join(format!("{v}"));
        let (summary, _) = run_seeds(c, c.federation.allocation_mode, &dir)?;
        rows.push(SweepRow {
            key: canonical.to_string(),
            value: v,
            summary,
        });
    }
    let mut csv = String::from("key,value,mode,runs,a_avg_mean,a_avg_std,a_last_mean,a_last_std\n");
    for r in &rows {
        let s = &r.summary;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.key,
            r.value,
            s.mode.name(),
            s.seeds.len(),
            s.a_avg_stats.csv(),
            s.a_last_stats.csv()
        );
    }
    write_file(
        &config.output_dir.join(format!("sweep_{canonical}.csv")),
        &csv,
    )?;
    Ok(rows)
}
