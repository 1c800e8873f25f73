//! Tabular datasets and unity-base normalization into the signed hypercube.
//!
//! Covariates are mapped column-wise onto `[-1, +1]` so that the column
//! minimum becomes the "absent" level and the maximum the "present" level of
//! a factor. Outcomes are mapped onto `[0, 1]`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Ordinal,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Raw observation matrix with its outcome vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    x: Array2<f64>,
    y: Array1<f64>,
    outcome_name: String,
    missing_code: Option<f64>,
}

impl Dataset {
    /// Builds a dataset, checking shape, name uniqueness and binary-column arity.
    pub fn new(
        columns: Vec<Column>,
        x: Array2<f64>,
        y: Array1<f64>,
        outcome_name: impl Into<String>,
        missing_code: Option<f64>,
    ) -> Result<Self> {
        let (n, m) = x.dim();
        if n == 0 || y.is_empty() {
            return Err(SfeError::EmptyDataset);
        }
        if n < 2 {
            return Err(SfeError::InvalidDataset(format!(
                "need at least 2 individuals, found {n}"
            )));
        }
        if m == 0 || columns.is_empty() {
            return Err(SfeError::InvalidDataset("no covariate columns".into()));
        }
        if columns.len() != m {
            return Err(SfeError::DimensionMismatch {
                expected: columns.len(),
                found: m,
            });
        }
        if y.len() != n {
            return Err(SfeError::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(SfeError::InvalidDataset(format!(
                    "duplicate column name `{}`",
                    c.name
                )));
            }
        }
        let ds = Self {
            columns,
            x,
            y,
            outcome_name: outcome_name.into(),
            missing_code,
        };
        for (a, c) in ds.columns.iter().enumerate() {
            if c.kind == ColumnKind::Binary {
                let distinct = distinct_values(ds.present(a));
                if distinct.len() != 2 {
                    return Err(SfeError::InvalidDataset(format!(
                        "binary column `{}` has {} distinct values",
                        c.name,
                        distinct.len()
                    )));
                }
            }
        }
        Ok(ds)
    }

    /// Builds a dataset inferring column kinds from the values: two distinct
    /// values make a binary column, integer values an ordinal one.
    pub fn with_inferred_kinds(
        names: Vec<String>,
        x: Array2<f64>,
        y: Array1<f64>,
        outcome_name: impl Into<String>,
        missing_code: Option<f64>,
    ) -> Result<Self> {
        let columns = names
            .into_iter()
            .enumerate()
            .map(|(a, name)| {
                let col = x.column(a);
                let present: Vec<f64> = col
                    .iter()
                    .copied()
                    .filter(|v| !is_missing(*v, missing_code))
                    .collect();
                let kind = if distinct_values(present.iter().copied()).len() == 2 {
                    ColumnKind::Binary
                } else if present.iter().all(|v| v.fract() == 0.0) {
                    ColumnKind::Ordinal
                } else {
                    ColumnKind::Continuous
                };
                Column::new(name, kind)
            })
            .collect();
        Self::new(columns, x, y, outcome_name, missing_code)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| SfeError::UnknownFactor(name.to_string()))
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn missing_code(&self) -> Option<f64> {
        self.missing_code
    }

    pub fn is_missing(&self, v: f64) -> bool {
        is_missing(v, self.missing_code)
    }

    /// Non-missing values of column `a`.
    fn present(&self, a: usize) -> impl Iterator<Item = f64> + '_ {
        self.x
            .column(a)
            .into_iter()
            .copied()
            .filter(move |v| !self.is_missing(*v))
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        let columns = idx.iter().map(|&a| self.columns[a].clone()).collect();
        let x = self.x.select(Axis(1), &idx);
        Self::new(
            columns,
            x,
            self.y.clone(),
            self.outcome_name.clone(),
            self.missing_code,
        )
    }

    /// Keeps only the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select(Axis(0), rows);
        let y = self.y.select(Axis(0), rows);
        Self::new(
            self.columns.clone(),
            x,
            y,
            self.outcome_name.clone(),
            self.missing_code,
        )
    }

    /// Reads an RFC-4180 CSV with a header row; `outcome` names the outcome column.
    pub fn read_csv<R: Read>(reader: R, outcome: &str, missing_code: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let y_col = headers
            .iter()
            .position(|h| h == outcome)
            .ok_or_else(|| SfeError::UnknownFactor(outcome.to_string()))?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != y_col)
            .map(|(_, h)| h.clone())
            .collect();
        let m = names.len();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            // header is row 1
            let row = r + 2;
            if record.len() != headers.len() {
                return Err(SfeError::Parse {
                    row,
                    column: record.len().min(headers.len()) + 1,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| SfeError::Parse {
                    row,
                    column: k + 1,
                    message: format!("`{field}` is not a number"),
                })?;
                if k == y_col {
                    ys.push(v);
                } else {
                    xs.push(v);
                }
            }
        }
        let n = ys.len();
        if n == 0 {
            return Err(SfeError::EmptyDataset);
        }
        let x = Array2::from_shape_vec((n, m), xs)
            .map_err(|e| SfeError::InvalidDataset(e.to_string()))?;
        Self::with_inferred_kinds(names, x, Array1::from(ys), outcome, missing_code)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, outcome: &str, missing_code: Option<f64>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), outcome, missing_code)
    }

    /// Writes the covariates followed by the outcome column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = self.column_names();
        header.push(self.outcome_name.clone());
        wtr.write_record(&header)?;
        for (row, y) in self.x.rows().into_iter().zip(self.y.iter()) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn is_missing(v: f64, code: Option<f64>) -> bool {
    v.is_nan() || code.is_some_and(|c| v == c)
}

fn distinct_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
            if out.len() > 2 {
                break;
            }
        }
    }
    out
}

/// Covariates scaled into `[-1, +1]`, outcome into `[0, 1]`, plus the
/// scaling records needed to map values back to raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedData {
    pub column_names: Vec<String>,
    pub xn: Array2<f64>,
    pub yn: Array1<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
}

/// Scaling records only, as persisted next to a fitted space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
}

impl NormalizedData {
    pub fn n(&self) -> usize {
        self.xn.nrows()
    }

    pub fn m(&self) -> usize {
        self.xn.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SfeError::UnknownFactor(name.to_string()))
    }

    pub fn scaling(&self) -> Scaling {
        Scaling {
            x_min: self.x_min.clone(),
            x_max: self.x_max.clone(),
            y_min: self.y_min,
            y_max: self.y_max,
        }
    }

    /// Maps a raw value of column `a` into the normalized scale.
    pub fn normalize_value(&self, a: usize, raw: f64) -> f64 {
        scale_unit(raw, self.x_min[a], self.x_max[a])
    }

    /// Inverse of [`normalize_value`](Self::normalize_value); constant
    /// columns map back to their single value.
    pub fn denormalize_value(&self, a: usize, v: f64) -> f64 {
        let (lo, hi) = (self.x_min[a], self.x_max[a]);
        if hi > lo {
            (v + 1.0) / 2.0 * (hi - lo) + lo
        } else {
            lo
        }
    }
}

fn scale_unit(raw: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (2.0 * (raw - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Column-wise affine map of the covariates onto `[-1, +1]` and of the
/// outcome onto `[0, 1]`.
///
/// Constant columns and missing-coded entries map to 0.
pub fn unity_normalize(d: &Dataset) -> Result<NormalizedData> {
    let (n, m) = d.x.dim();
    if n == 0 {
        return Err(SfeError::EmptyDataset);
    }
    let y_min = d.y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = d.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(y_max > y_min) {
        return Err(SfeError::DegenerateOutcome);
    }
    let mut x_min = vec![0.0; m];
    let mut x_max = vec![0.0; m];
    let mut xn = Array2::zeros((n, m));
    for a in 0..m {
        let (lo, hi) = column_range(d.x.column(a), d.missing_code);
        x_min[a] = lo;
        x_max[a] = hi;
        for (out, &raw) in xn.column_mut(a).iter_mut().zip(d.x.column(a)) {
            *out = if d.is_missing(raw) {
                0.0
            } else {
                scale_unit(raw, lo, hi)
            };
        }
    }
    let span = y_max - y_min;
    let yn = d.y.mapv(|v| (v - y_min) / span);
    Ok(NormalizedData {
        column_names: d.column_names(),
        xn,
        yn,
        x_min,
        x_max,
        y_min,
        y_max,
    })
}

fn column_range(col: ArrayView1<f64>, missing: Option<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in col.iter().filter(|v| !is_missing(**v, missing)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        // all entries missing
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Converts an effect measured on the normalized outcome scale back into
/// raw outcome units.
pub fn denormalize_effect(v: f64, nd: &NormalizedData) -> f64 {
    v * (nd.y_max - nd.y_min)
}
