//! Trace CSV and timing JSON files written by the benchmark harness.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::TaskTimes;
use crate::solver::IterationRecord;

pub const TRACE_HEADER: [&str; 7] = ["k", "n_evals", "wall_time_s", "f_best", "delta", "rho", "step_norm"];

/// One line of a trace CSV. An empty `rho` cell means the ratio was undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub n_evals: usize,
    pub wall_time_s: f64,
    pub f_best: f64,
    pub delta: f64,
    pub rho: Option<f64>,
    pub step_norm: f64,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        TraceRow {
            k: r.k,
            n_evals: r.n_evals,
            wall_time_s: r.wall_time,
            f_best: r.f_best,
            delta: r.delta,
            rho: r.rho,
            step_norm: r.step_norm,
        }
    }
}

pub fn trace_rows(records: &[IterationRecord]) -> Vec<TraceRow> {
    records.iter().map(TraceRow::from).collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse(format!("line {}: {}", pos.line(), e)),
        None => Error::Parse(e.to_string()),
    }
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    if rows.is_empty() {
        w.write_record(TRACE_HEADER).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_trace(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

/// Parses a trace CSV. The header must match [`TRACE_HEADER`] exactly and
/// no numeric cell may be NaN.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse(format!(
            "trace header must be {}, found {}",
            TRACE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(csv_error)?;
        let values = [row.wall_time_s, row.f_best, row.delta, row.step_norm, row.rho.unwrap_or(0.0)];
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse(format!("trace row {}: NaN value", i + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_trace_file(path: &Path, rows: &[TraceRow]) -> Result<()> {
    fs::write(path, trace_to_string(rows))?;
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn timings_to_string(times: &TaskTimes) -> String {
    serde_json::to_string_pretty(times).expect("timings serialize")
}

/// Parses the timing JSON object. Every timer key and `total` must be present.
pub fn parse_timings(text: &str) -> Result<TaskTimes> {
    let times: TaskTimes = serde_json::from_str(text).map_err(|e| Error::Parse(format!("timings: {e}")))?;
    Ok(times)
}

pub fn write_timings_file(path: &Path, times: &TaskTimes) -> Result<()> {
    fs::write(path, timings_to_string(times) + "\n")?;
    Ok(())
}

/// Mean of `f_best` across runs at every evaluation count reached by any
/// run. Each run contributes its last value at or before that count; runs
/// that have stopped carry their final value forward.
pub fn mean_trace(runs: &[Vec<TraceRow>]) -> Vec<(usize, f64)> {
    let runs: Vec<&Vec<TraceRow>> = runs.iter().filter(|r| !r.is_empty()).collect();
    if runs.is_empty() {
        return Vec::new();
    }
    let start = runs.iter().map(|r| r[0].n_evals).max().unwrap_or(0);
    let mut counts: Vec<usize> = runs
        .iter()
        .flat_map(|r| r.iter().map(|row| row.n_evals))
        .filter(|&e| e >= start)
        .collect();
    counts.sort_unstable();
    counts.dedup();

    let mut cursors = vec![0usize; runs.len()];
    counts
        .into_iter()
        .map(|e| {
            let mut sum = 0.0;
            for (run, cur) in runs.iter().zip(cursors.iter_mut()) {
                while *cur + 1 < run.len() && run[*cur + 1].n_evals <= e {
                    *cur += 1;
                }
                sum += run[*cur].f_best;
            }
            (e, sum / runs.len() as f64)
        })
        .collect()
}

pub fn mean_trace_to_string(mean: &[(usize, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_evals", "mean_f_best"]).expect("write to memory");
    for (e, f) in mean {
        w.serialize((e, f)).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(k: usize, n_evals: usize, f_best: f64, rho: Option<f64>) -> TraceRow {
        TraceRow {
            k,
            n_evals,
            wall_time_s: k as f64 * 0.25,
            f_best,
            delta: 0.1,
            rho,
            step_norm: 0.05,
        }
    }

    #[test]
    fn round_trip_with_undefined_and_infinite_rho() {
        let rows = vec![
            row(0, 3, 2.0, None),
            row(1, 4, 1.5, Some(f64::NEG_INFINITY)),
            row(2, 5, 1.0 / 3.0, Some(0.7)),
        ];
        let text = trace_to_string(&rows);
        assert!(text.starts_with("k,n_evals,wall_time_s,f_best,delta,rho,step_norm\n"));
        assert!(text.contains(",-inf,"));
        assert_eq!(parse_trace(&text).unwrap(), rows);
    }

    #[test]
    fn empty_trace_keeps_header() {
        let text = trace_to_string(&[]);
        assert_eq!(text.trim(), TRACE_HEADER.join(","));
        assert!(parse_trace(&text).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_traces() {
        assert!(parse_trace("a,b\n1,2\n").is_err());
        assert!(parse_trace("k,n_evals,wall_time_s,f_best,delta,rho,step_norm\n0,1,x,1,1,,1\n").is_err());
        assert!(parse_trace("k,n_evals,wall_time_s,f_best,delta,rho,step_norm\n0,1,0,NaN,1,,1\n").is_err());
        assert!(parse_trace("k,n_evals,wall_time_s,f_best,delta,rho,step_norm\n0,1,0\n").is_err());
    }

    #[test]
    fn timings_round_trip_and_schema() {
        let t = TaskTimes {
            sketch_build: 0.5,
            trs: 1e-7,
            total: 2.0,
            ..TaskTimes::default()
        };
        let text = timings_to_string(&t);
        assert_eq!(parse_timings(&text).unwrap(), t);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        let mut expected = vec![
            "sketch_build", "sketch_apply", "interp_solve", "model_build", "trs", "eval", "geometry", "other", "total",
        ];
        expected.sort();
        assert_eq!(keys, expected);
        assert!(parse_timings("{\"trs\": 1}").is_err());
        assert!(parse_timings(&text.replace("\"trs\"", "\"tr\"")).is_err());
    }

    #[test]
    fn mean_trace_carries_values_forward() {
        let a = vec![row(0, 3, 4.0, None), row(1, 4, 2.0, Some(1.0)), row(2, 6, 1.0, Some(1.0))];
        let b = vec![row(0, 3, 2.0, None), row(1, 5, 0.0, Some(1.0))];
        let mean = mean_trace(&[a, b]);
        assert_eq!(mean, vec![(3, 3.0), (4, 2.0), (5, 1.0), (6, 0.5)]);
        let text = mean_trace_to_string(&mean);
        assert!(text.starts_with("n_evals,mean_f_best\n3,3.0\n"));
    }

    proptest! {
        #[test]
        fn arbitrary_rows_round_trip(
            vals in prop::collection::vec(
                (0usize..1000, -1e300f64..1e300, proptest::option::of(-1e6f64..1e6), 0.0f64..1e10),
                0..20,
            )
        ) {
            let rows: Vec<TraceRow> = vals
                .iter()
                .enumerate()
                .map(|(k, &(n, f, rho, delta))| TraceRow {
                    k,
                    n_evals: n,
                    wall_time_s: delta * 1e-3,
                    f_best: f,
                    delta,
                    rho,
                    step_norm: delta / 3.0,
                })
                .collect();
            prop_assert_eq!(parse_trace(&trace_to_string(&rows)).unwrap(), rows);
        }
    }
}
