//! File formats: TPRM tensors, CSV tables and atomic writes.

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tprm_core::format;
use tprm_core::nalgebra::DMatrix;
use tprm_core::{DenseTensor, TprmError};

use crate::error::{CliError, Result};

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    let file = File::open(path).map_err(CliError::io(path))?;
    format::read_tensor(BufReader::new(file)).map_err(|e| match e {
        TprmError::Io(source) => CliError::Io { path: path.into(), source },
        e => CliError::Input(format!("{}: {e}", path.display())),
    })
}

pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * t.len());
    format::write_tensor(&mut buf, t)?;
    write_atomic(path, &buf)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn parse_cell(path: &Path, line: usize, cell: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Input(format!("{}: row {line}: `{cell}` is not a finite number", path.display()))),
    }
}

/// First column of a CSV file with a header row.
pub fn read_response(path: &Path) -> Result<Vec<f64>> {
    let mut y = Vec::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(0).ok_or_else(|| CliError::Input(format!("{}: row {} is empty", path.display(), i + 1)))?;
        y.push(parse_cell(path, i + 1, cell)?);
    }
    Ok(y)
}

/// Numeric CSV with a header row, one row per subject.
pub fn read_covariates(path: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        rows.push(rec.iter().map(|c| parse_cell(path, i + 1, c)).collect::<Result<_>>()?);
    }
    let q = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || q == 0 {
        return Err(CliError::Input(format!("{}: no covariate values", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io { path: path.into(), source: e.into_error() })?;
    write_atomic(path, &bytes)
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io { path: path.into(), source: e.into_error() })?;
    write_atomic(path, &bytes)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = File::create(tmp).map_err(CliError::io(tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(CliError::io(tmp))?;
    fs::rename(tmp, path).map_err(CliError::io(path))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(CliError::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

pub fn dims_label(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}
