//! CSV-backed regression problems.
//!
//! Format: UTF-8, a header row, `p ≥ 1` numeric feature columns followed by
//! one numeric label column, `.` as decimal separator.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::Problem;
use crate::error::{Error, Result};

/// Link function applied to the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Linear,
    Logistic,
}

impl Link {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Link::Linear => t,
            Link::Logistic => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Linear => "linear",
            Link::Logistic => "logistic",
        })
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Link::Linear),
            "logistic" => Ok(Link::Logistic),
            other => Err(Error::Parse(format!(
                "unknown link '{other}' (expected linear or logistic)"
            ))),
        }
    }
}

/// Parsed design matrix and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Vec<String>,
    /// n×p feature matrix.
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// Parses dataset text. Rows and columns in error messages are 1-based;
/// row 1 is the first data row after the header.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 2 || header.iter().all(String::is_empty) {
        return Err(Error::Dataset(format!(
            "header must name at least one feature and a label column (found {} columns)",
            header.len()
        )));
    }
    let cols = header.len();
    let p = cols - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Dataset(format!("row {row}: {e}")))?;
        if record.len() != cols {
            return Err(Error::Dataset(format!(
                "row {row}: expected {cols} columns, found {}",
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Dataset(format!("row {row}, column {}: '{cell}' is not a number", j + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Dataset(format!(
                    "row {row}, column {}: non-finite value '{cell}'",
                    j + 1
                )));
            }
            if j < p {
                values.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Dataset("dataset has no data rows".into()));
    }
    Ok(Dataset {
        header,
        features: DMatrix::from_row_slice(n, p, &values),
        labels: DVector::from_vec(labels),
    })
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Renders the dataset in the format accepted by [`parse_dataset`].
    /// Values use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for i in 0..self.rows() {
            for j in 0..self.n_features() {
                out.push_str(&format!("{},", self.features[(i, j)]));
            }
            out.push_str(&format!("{}\n", self.labels[i]));
        }
        out
    }

    /// Residuals `φ(a_iᵀx + b) - y_i`; with an intercept the last coordinate
    /// of `x` is `b`. Starts from zero.
    pub fn into_problem(self, name: impl Into<String>, link: Link, intercept: bool) -> Result<Problem> {
        let p = self.n_features();
        let n = self.rows();
        let d = p + usize::from(intercept);
        if n < d {
            return Err(Error::Dataset(format!(
                "dataset has {n} rows but the model has {d} unknowns"
            )));
        }
        let Dataset {
            features, labels, ..
        } = self;
        let residual = move |x: &DVector<f64>| {
            let mut t = &features * x.rows(0, p);
            if intercept {
                t.add_scalar_mut(x[p]);
            }
            t.zip_map(&labels, |ti, yi| link.apply(ti) - yi)
        };
        Problem::new(name, n, DVector::zeros(d), residual)
    }
}

/// Loads a CSV dataset and wraps it as a regression problem.
pub fn dataset_problem(path: impl AsRef<Path>, link: Link, intercept: bool) -> Result<Problem> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&text)?.into_problem(name, link, intercept)
}
