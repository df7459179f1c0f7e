//! The `report` verb: aggregates metric logs across replications into
//! plot-ready series.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{io_error, Result};
use crate::metrics::{read_rows, write_atomic, MetricName, MetricRow};
use crate::runner::METRICS_FILE;

/// Mean and population spread of one series point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub metric: MetricName,
    pub arm: Option<usize>,
    pub state: Option<usize>,
    pub step: u64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<AggregateRow>,
    pub warnings: Vec<String>,
}

type Key = (MetricName, Option<usize>, Option<usize>, u64);

/// Aggregates per-replication rows; cross-replication rows (empty
/// replication) are skipped. The result does not depend on row order.
pub fn aggregate(rows: &[MetricRow]) -> Report {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.replication.is_some()) {
        groups.entry((r.metric, r.arm, r.state, r.step)).or_default().push(r.value);
    }
    let out = groups
        .into_iter()
        .map(|((metric, arm, state, step), mut values)| {
            // Sorting fixes the summation order.
            values.sort_by(f64::total_cmp);
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            AggregateRow {
                metric,
                arm,
                state,
                step,
                count: values.len(),
                mean,
                std: var.sqrt(),
                min: values[0],
                max: values[values.len() - 1],
            }
        })
        .collect::<Vec<_>>();
    let mut warnings = Vec::new();
    let has = |m: MetricName| out.iter().any(|r| r.metric == m);
    for m in [MetricName::LambdaEstimate, MetricName::Misordering] {
        if !has(m) {
            warnings.push(format!("no {} rows; series omitted", m.as_str()));
        }
    }
    // Policy quality comes from either exact BRE or rollouts.
    if !has(MetricName::Bre) && !has(MetricName::ValueEval) {
        warnings.push("no bre or value_eval rows; policy quality omitted".to_string());
    }
    Report { rows: out, warnings }
}

#[derive(Serialize)]
struct PercentRow {
    step: u64,
    count: usize,
    mean_percent: f64,
    std_percent: f64,
}

#[derive(Serialize)]
struct TraceRow {
    arm: Option<usize>,
    state: Option<usize>,
    step: u64,
    count: usize,
    mean: f64,
    std: f64,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error()).map_err(io_error("<buffer>"))
}

/// Reads `metrics.csv` from `dir`, or every per-replication log when the
/// merged file is missing.
pub fn load_logs(dir: &Path) -> Result<Vec<MetricRow>> {
    let merged = dir.join(METRICS_FILE);
    if merged.exists() {
        return read_rows(&merged);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_error(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_rep") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_rows(&f)?);
    }
    Ok(rows)
}

/// Writes `report.csv`, `misordering.csv` and `index_trace.csv` into `dir`.
pub fn write_report(dir: &Path) -> Result<Report> {
    let rows = load_logs(dir)?;
    let mut report = aggregate(&rows);
    if rows.is_empty() {
        report.warnings.insert(0, format!("no metric logs in {}", dir.display()));
    }
    write_atomic(&dir.join("report.csv"), &csv_bytes(&report.rows)?)?;
    let misordering = report
        .rows
        .iter()
        .filter(|r| r.metric == MetricName::Misordering)
        .map(|r| PercentRow {
            step: r.step,
            count: r.count,
            mean_percent: 100.0 * r.mean,
            std_percent: 100.0 * r.std,
        });
    write_atomic(&dir.join("misordering.csv"), &csv_bytes(misordering)?)?;
    let trace = report
        .rows
        .iter()
        .filter(|r| r.metric == MetricName::LambdaEstimate)
        .map(|r| TraceRow {
            arm: r.arm,
            state: r.state,
            step: r.step,
            count: r.count,
            mean: r.mean,
            std: r.std,
        });
    write_atomic(&dir.join("index_trace.csv"), &csv_bytes(trace)?)?;
    Ok(report)
}
