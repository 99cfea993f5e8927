use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::error::{Error, Result};
use crate::stats::quantile;

pub const RESULTS_FILE: &str = "results.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One (sweep value, method, trial) outcome. Wall-clock time lives in
/// [`TimingRow`] so result tables stay bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub value: f64,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    /// Chamfer distance (m^2).
    pub cd: f64,
    /// Its square root (m).
    pub cd_sqrt: f64,
    /// Phase RMSE (rad).
    pub rmse: f64,
    pub iterations: usize,
    pub active: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub value: f64,
    pub method: Method,
    pub trial: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    /// `None` when the quantile is infinite (too many failed trials).
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
}

impl Quartiles {
    /// Quartiles with NaN entries (failed trials) ranked as `+inf`.
    pub fn of(values: &[f64]) -> Quartiles {
        let v: Vec<f64> = values.iter().map(|&x| if x.is_nan() { f64::INFINITY } else { x }).collect();
        let q = |p: f64| quantile(&v, p).filter(|x| x.is_finite());
        Quartiles {
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub value: f64,
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub cd: Quartiles,
    pub cd_sqrt: Quartiles,
    pub rmse: Quartiles,
}

/// Quartiles per (sweep value, method), in row order.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(usize, Method), Vec<&ResultRow>> = BTreeMap::new();
    let mut order: Vec<f64> = Vec::new();
    for r in rows {
        let vi = match order.iter().position(|&v| v.total_cmp(&r.value).is_eq()) {
            Some(i) => i,
            None => {
                order.push(r.value);
                order.len() - 1
            }
        };
        cells.entry((vi, r.method)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((vi, method), rs)| {
            let col = |f: fn(&ResultRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            CellSummary {
                value: order[vi],
                method,
                trials: rs.len(),
                failures: rs.iter().filter(|r| r.error.is_some()).count(),
                cd: Quartiles::of(&col(|r| r.cd)),
                cd_sqrt: Quartiles::of(&col(|r| r.cd_sqrt)),
                rmse: Quartiles::of(&col(|r| r.rmse)),
            }
        })
        .collect()
}

/// Writes `rows` as a headered comma-separated table.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `results.csv`, `timings.csv` and `summary.json` into `dir`.
/// Nothing is written when `rows` is empty.
pub fn emit_results(rows: &[ResultRow], timings: &[TimingRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::NoRows);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_table(&dir.join(RESULTS_FILE), rows)?;
    write_table(&dir.join(TIMINGS_FILE), timings)?;
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summarize(rows)).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, trial: usize, cd: f64) -> ResultRow {
        ResultRow {
            value: 25.0,
            method,
            trial,
            seed: 7 + trial as u64,
            cd,
            cd_sqrt: cd.sqrt(),
            rmse: 0.1 * trial as f64,
            iterations: 3,
            active: 2,
            error: if cd.is_nan() { Some("empty point set".into()) } else { None },
        }
    }

    #[test]
    fn empty_rows_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(matches!(emit_results(&[], &[], &out), Err(Error::NoRows)));
        assert!(!out.exists());
    }

    #[test]
    fn round_trip_and_summary() {
        let rows = vec![
            row(Method::Ogamp, 0, 0.01),
            row(Method::Ogamp, 1, f64::NAN),
            row(Method::Ogamp, 2, 0.04),
            row(Method::GampOffgrid, 0, 0.09),
        ];
        let dir = tempfile::tempdir().unwrap();
        emit_results(&rows, &[], dir.path()).unwrap();
        let back = read_results(&dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.error, b.error);
            assert!(a.cd.to_bits() == b.cd.to_bits() || (a.cd.is_nan() && b.cd.is_nan()));
        }
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let summary: Vec<CellSummary> = serde_json::from_str(&text).unwrap();
        let og = summary.iter().find(|s| s.method == Method::Ogamp).unwrap();
        // failures rank last: sorted [0.01, 0.04, inf]
        assert_eq!(og.cd.median, Some(0.04));
        assert_eq!(og.failures, 1);
        assert_eq!(og.cd.q3, None);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_results(Path::new("/nonexistent/results.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/results.csv"));
    }
}
