//! Metric rows and their CSV logs.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Bre,
    AvgBre,
    Misordering,
    LambdaEstimate,
    ValueEval,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Bre => "bre",
            MetricName::AvgBre => "avg_bre",
            MetricName::Misordering => "misordering",
            MetricName::LambdaEstimate => "lambda_estimate",
            MetricName::ValueEval => "value_eval",
        }
    }
}

/// One measurement. `replication` is empty for cross-replication
/// aggregates; `arm` is empty for values averaged over identical arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub replication: Option<usize>,
    pub metric: MetricName,
    pub arm: Option<usize>,
    pub state: Option<usize>,
    pub value: f64,
}

impl MetricRow {
    pub fn scalar(step: u64, replication: usize, metric: MetricName, value: f64) -> Self {
        MetricRow {
            step,
            replication: Some(replication),
            metric,
            arm: None,
            state: None,
            value,
        }
    }
}

pub const HEADER: [&str; 6] = ["step", "replication", "metric", "arm", "state", "value"];

/// CSV text of `rows`, optionally preceded by the header.
pub fn encode_rows(rows: &[MetricRow], header: bool) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if header {
        w.write_record(HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error()).map_err(io_error("<buffer>"))
}

/// Append-only per-replication log: each checkpoint's rows are encoded
/// first and written with a single call, then flushed.
pub struct MetricLog {
    path: PathBuf,
    file: File,
}

impl MetricLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(io_error(path))?;
        file.write_all(&encode_rows(&[], true)?).map_err(io_error(path))?;
        Ok(MetricLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, rows: &[MetricRow]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let bytes = encode_rows(rows, false)?;
        self.file.write_all(&bytes).map_err(io_error(&self.path))?;
        self.file.flush().map_err(io_error(&self.path))
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_error(dir))?;
    tmp.write_all(bytes).map_err(io_error(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io_error(tmp.path()))?;
    tmp.persist(path).map_err(|e| e.error).map_err(io_error(path))?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<Result<Vec<MetricRow>, csv::Error>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow::scalar(0, 1, MetricName::Bre, 0.125),
            MetricRow {
                step: 500,
                replication: None,
                metric: MetricName::LambdaEstimate,
                arm: Some(2),
                state: Some(3),
                value: -0.1 + 1e-17,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_atomic(&path, &encode_rows(&rows, true).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,replication,metric,arm,state,value\n0,1,bre,,,0.125\n"));
        assert_eq!(read_rows(&path).unwrap(), rows);
    }

    #[test]
    fn log_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = MetricLog::create(&path).unwrap();
        log.append(&[MetricRow::scalar(0, 0, MetricName::Misordering, 0.5)]).unwrap();
        log.append(&[MetricRow::scalar(10, 0, MetricName::Misordering, 0.0)]).unwrap();
        assert_eq!(read_rows(&path).unwrap().len(), 2);
    }
}
