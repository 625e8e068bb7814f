//! Run reports, savings arithmetic and the CSV/JSON output formats.
//!
//! The CSV is long format, one row per worker per epoch:
//! `epoch,worker_id,t_gpu,t_w,t_s,T_a,batch`, floats with 6 decimals.
//! The JSON document is `{"schema_version":1,"scenarios":[...],"sgd_checks":[...]}`
//! with every nested object's keys sorted and no insignificant whitespace.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sgd::checks::{BoundCheck, EquivalenceCheck, VarianceCheck};
use crate::sim::EpochStats;

pub const SCHEMA_VERSION: u64 = 1;
pub const CSV_HEADER: [&str; 7] = ["epoch", "worker_id", "t_gpu", "t_w", "t_s", "T_a", "batch"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("baseline total must be > 0, got {0}")]
    InvalidBaseline(f64),
    #[error("baseline strategy `{0}` not found among the reports")]
    BaselineNotFound(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: malformed content: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("inconsistent report: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, ReportError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Parse { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub per_worker_gpu: Vec<f64>,
    pub per_worker_wait: Vec<f64>,
    pub t_s: f64,
    #[serde(rename = "T_a")]
    pub t_a: f64,
    pub int_batches: Vec<u64>,
}

impl From<&EpochStats> for EpochRow {
    fn from(s: &EpochStats) -> Self {
        Self {
            epoch: s.epoch,
            per_worker_gpu: s.per_worker_gpu.clone(),
            per_worker_wait: s.per_worker_wait.clone(),
            t_s: s.sync_time,
            t_a: s.epoch_wall_time,
            int_batches: s.plan.int_batches.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub total_ta: f64,
    pub total_wait: f64,
    pub savings_vs_baseline_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_name: String,
    pub strategy: String,
    pub seed: u64,
    pub epoch_rows: Vec<EpochRow>,
    pub totals: RunTotals,
}

impl RunReport {
    /// Builds a report from simulator output; rows are sorted by epoch and
    /// totals summed from them.
    pub fn from_stats(scenario_name: &str, strategy: &str, seed: u64, stats: &[EpochStats]) -> Self {
        let mut epoch_rows: Vec<EpochRow> = stats.iter().map(EpochRow::from).collect();
        epoch_rows.sort_by_key(|r| r.epoch);
        let (total_ta, total_wait) = row_totals(&epoch_rows);
        Self {
            scenario_name: scenario_name.to_string(),
            strategy: strategy.to_string(),
            seed,
            epoch_rows,
            totals: RunTotals { total_ta, total_wait, savings_vs_baseline_percent: None },
        }
    }

    /// Checks the ordering and totals invariants.
    pub fn validate(&self) -> Result<()> {
        if self.epoch_rows.windows(2).any(|w| w[0].epoch >= w[1].epoch) {
            return Err(ReportError::Inconsistent("epoch_rows must be strictly sorted by epoch".into()));
        }
        for r in &self.epoch_rows {
            let n = r.per_worker_gpu.len();
            if r.per_worker_wait.len() != n || r.int_batches.len() != n {
                return Err(ReportError::Inconsistent(format!("epoch {} has ragged worker columns", r.epoch)));
            }
        }
        let (ta, wait) = row_totals(&self.epoch_rows);
        if (ta - self.totals.total_ta).abs() > 1e-9 || (wait - self.totals.total_wait).abs() > 1e-9 {
            return Err(ReportError::Inconsistent("totals disagree with epoch rows".into()));
        }
        Ok(())
    }
}

fn row_totals(rows: &[EpochRow]) -> (f64, f64) {
    let ta = rows.iter().map(|r| r.t_a).sum();
    let wait = rows.iter().map(|r| r.per_worker_wait.iter().sum::<f64>()).sum();
    (ta, wait)
}

/// `100 * (baseline - candidate) / baseline`.
pub fn savings_percent(candidate_total_ta: f64, baseline_total_ta: f64) -> Result<f64> {
    if !(baseline_total_ta.is_finite() && baseline_total_ta > 0.0) {
        return Err(ReportError::InvalidBaseline(baseline_total_ta));
    }
    Ok(100.0 * (baseline_total_ta - candidate_total_ta) / baseline_total_ta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub total_ta: f64,
    pub savings_percent: f64,
}

pub fn compare_strategies(reports: &[RunReport], baseline_strategy: &str) -> Result<Vec<ComparisonRow>> {
    let baseline = reports
        .iter()
        .find(|r| r.strategy == baseline_strategy)
        .ok_or_else(|| ReportError::BaselineNotFound(baseline_strategy.to_string()))?;
    reports
        .iter()
        .map(|r| {
            Ok(ComparisonRow {
                strategy: r.strategy.clone(),
                total_ta: r.totals.total_ta,
                savings_percent: savings_percent(r.totals.total_ta, baseline.totals.total_ta)?,
            })
        })
        .collect()
}

/// Fills `totals.savings_vs_baseline_percent` on every report.
pub fn annotate_savings(reports: &mut [RunReport], baseline_strategy: &str) -> Result<()> {
    let rows = compare_strategies(reports, baseline_strategy)?;
    for (report, row) in reports.iter_mut().zip(rows) {
        report.totals.savings_vs_baseline_percent = Some(row.savings_percent);
    }
    Ok(())
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.strategy.len()).max().unwrap_or(0).max("strategy".len());
    let mut out = format!("{:<width$}  {:>14}  {:>9}\n", "strategy", "total_T_a (s)", "savings %");
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>14.3}  {:>9.3}\n", r.strategy, r.total_ta, r.savings_percent));
    }
    out
}

pub fn write_epoch_csv(report: &RunReport, destination: &Path) -> Result<()> {
    let file = File::create(destination).map_err(|e| io_err(destination, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER).map_err(|e| io_err(destination, e))?;
    for row in &report.epoch_rows {
        for worker in 0..row.per_worker_gpu.len() {
            w.write_record([
                row.epoch.to_string(),
                worker.to_string(),
                format!("{:.6}", row.per_worker_gpu[worker]),
                format!("{:.6}", row.per_worker_wait[worker]),
                format!("{:.6}", row.t_s),
                format!("{:.6}", row.t_a),
                row.int_batches[worker].to_string(),
            ])
            .map_err(|e| io_err(destination, e))?;
        }
    }
    w.flush().map_err(|e| io_err(destination, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub epoch: usize,
    pub worker_id: usize,
    pub t_gpu: f64,
    pub t_w: f64,
    pub t_s: f64,
    #[serde(rename = "T_a")]
    pub t_a: f64,
    pub batch: u64,
}

pub fn read_epoch_csv(source: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(source).map_err(|e| io_err(source, e))?;
    let header: Vec<String> = r.headers().map_err(|e| parse_err(source, e))?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(parse_err(source, format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| parse_err(source, e))).collect()
}

/// `(sum of T_a over epochs, sum of t_w over all rows)` recomputed from CSV
/// rows.
pub fn totals_from_csv(rows: &[CsvRow]) -> (f64, f64) {
    let mut ta = 0.0;
    let mut last_epoch = None;
    for r in rows {
        if last_epoch != Some(r.epoch) {
            ta += r.t_a;
            last_epoch = Some(r.epoch);
        }
    }
    (ta, rows.iter().map(|r| r.t_w).sum())
}

/// One SGD-lab verification with its measured margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum SgdCheckSummary {
    ConvergenceBound { scenario: String, result: BoundCheck },
    VarianceMonotonicity { scenario: String, result: VarianceCheck },
    ScheduleEquivalence { scenario: String, result: EquivalenceCheck },
}

impl SgdCheckSummary {
    pub fn passed(&self) -> bool {
        match self {
            Self::ConvergenceBound { result, .. } => result.passed,
            Self::VarianceMonotonicity { result, .. } => result.passed,
            Self::ScheduleEquivalence { result, .. } => result.passed,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::ConvergenceBound { result, .. } => format!("convergence_bound(gamma*mu={})", result.gamma_mu),
            Self::VarianceMonotonicity { .. } => "variance_monotonicity".into(),
            Self::ScheduleEquivalence { .. } => "schedule_equivalence".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub schema_version: u64,
    pub scenarios: Vec<RunReport>,
    pub sgd_checks: Vec<SgdCheckSummary>,
}

/// Serializes the run document to its canonical bytes.
pub fn run_json_string(reports: &[RunReport], checks: &[SgdCheckSummary]) -> Result<String> {
    let to_value = |v: serde_json::Result<Value>| v.map_err(|e| ReportError::Inconsistent(e.to_string()));
    let scenarios = to_value(serde_json::to_value(reports))?;
    let sgd_checks = to_value(serde_json::to_value(checks))?;
    // serde_json's default map is ordered, so nested keys come out sorted.
    // The top level keeps the documented field order.
    Ok(format!(r#"{{"schema_version":{SCHEMA_VERSION},"scenarios":{scenarios},"sgd_checks":{sgd_checks}}}"#))
}

pub fn write_run_json(reports: &[RunReport], checks: &[SgdCheckSummary], destination: &Path) -> Result<()> {
    let text = run_json_string(reports, checks)?;
    let mut f = File::create(destination).map_err(|e| io_err(destination, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(destination, e))
}

pub fn read_run_json(source: &Path) -> Result<RunDocument> {
    let text = std::fs::read_to_string(source).map_err(|e| io_err(source, e))?;
    let doc: RunDocument = serde_json::from_str(&text).map_err(|e| parse_err(source, e))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(parse_err(source, format!("unsupported schema_version {}", doc.schema_version)));
    }
    Ok(doc)
}
