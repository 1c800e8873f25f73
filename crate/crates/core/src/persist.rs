//! Effect-space files: a positions CSV with header `id,<columns>` and a
//! JSON sidecar at `<path>.meta.json` holding everything else.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Scaling;
use crate::error::{Result, SfeError};
use crate::optimizer::{EffectSpace, FitConfig, PRNG_NAME};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceMeta {
    pub format_version: u32,
    pub prng: String,
    pub seed: u64,
    pub n: usize,
    pub columns: Vec<String>,
    pub config: FitConfig,
    pub scaling: Scaling,
    pub initial_objective: f64,
    pub objective_trace: Vec<f64>,
}

/// Path of the sidecar for a positions file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the positions CSV and its sidecar. Floats are written in their
/// shortest round-trip form, so loading reproduces them bit for bit.
pub fn save_space(es: &EffectSpace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "id")?;
    for c in &es.column_names {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for (i, row) in es.positions.rows().into_iter().enumerate() {
        write!(w, "{i}")?;
        for v in row {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let meta = SpaceMeta {
        format_version: FORMAT_VERSION,
        prng: PRNG_NAME.to_string(),
        seed: es.config.seed,
        n: es.n(),
        columns: es.column_names.clone(),
        config: es.config.clone(),
        scaling: es.scaling.clone(),
        initial_objective: es.initial_objective,
        objective_trace: es.objective_trace.clone(),
    };
    let mut mw = BufWriter::new(File::create(meta_path(path))?);
    serde_json::to_writer_pretty(&mut mw, &meta)?;
    mw.flush()?;
    Ok(())
}

/// Reads a space written by [`save_space`]. Any inconsistency between the
/// CSV and the sidecar is an error; nothing partial is returned.
pub fn load_space(path: &Path) -> Result<EffectSpace> {
    let meta: SpaceMeta = serde_json::from_reader(File::open(meta_path(path))?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(SfeError::VersionMismatch {
            expected: FORMAT_VERSION,
            found: meta.format_version,
        });
    }
    let m = meta.columns.len();
    let text = std::fs::read_to_string(path)?;
    // every row, including the last, is newline-terminated when written
    if !text.ends_with('\n') {
        return Err(SfeError::MalformedSpace("file does not end with a newline; truncated?".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("id") || header[1..] != meta.columns[..] {
        return Err(SfeError::MalformedSpace(format!(
            "header {header:?} does not match sidecar columns {:?}",
            meta.columns
        )));
    }
    let mut positions = Array2::zeros((meta.n, m));
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if k >= meta.n {
            return Err(SfeError::MalformedSpace(format!("more than {} rows", meta.n)));
        }
        if rec.len() != m + 1 {
            return Err(SfeError::MalformedSpace(format!(
                "row {} has {} fields, expected {}",
                k + 2,
                rec.len(),
                m + 1
            )));
        }
        let id: usize = rec[0].parse().map_err(|_| SfeError::Parse {
            row: k + 2,
            column: 1,
            message: format!("invalid id `{}`", &rec[0]),
        })?;
        if id != k {
            return Err(SfeError::MalformedSpace(format!("row {} has id {id}", k + 2)));
        }
        for a in 0..m {
            let v: f64 = rec[a + 1].parse().map_err(|_| SfeError::Parse {
                row: k + 2,
                column: a + 2,
                message: format!("invalid number `{}`", &rec[a + 1]),
            })?;
            positions[[k, a]] = v;
        }
        rows += 1;
    }
    if rows != meta.n {
        return Err(SfeError::MalformedSpace(format!(
            "expected {} rows, found {rows}",
            meta.n
        )));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(SfeError::MalformedSpace("non-finite position".into()));
    }
    Ok(EffectSpace {
        column_names: meta.columns,
        positions,
        config: meta.config,
        objective_trace: meta.objective_trace,
        initial_objective: meta.initial_objective,
        scaling: meta.scaling,
    })
}
