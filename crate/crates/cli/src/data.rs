//! CSV input.
//!
//! Files have a header row and one observation per row. With a single
//! `--input` file, a label column (default `sample`, values 1 or 2) says which
//! sample each row belongs to; every other column is a numeric feature.

use std::path::Path;

use kfda_core::Points;

use crate::error::CliError;

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_value(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64, CliError> {
    let v: f64 = raw.parse().map_err(|_| {
        CliError::Data(format!("{}:{line}: column '{column}': '{raw}' is not a number", path.display()))
    })?;
    if !v.is_finite() {
        return Err(CliError::Data(format!("{}:{line}: column '{column}': non-finite value {raw}", path.display())));
    }
    Ok(v)
}

/// Read every column of `path` as a feature.
pub fn load_points(path: &Path) -> Result<Points, CliError> {
    let mut reader = open(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() {
        return Err(CliError::Data(format!("{}: no columns", path.display())));
    }
    let mut coords = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = line_of(&record);
        for (name, raw) in headers.iter().zip(record.iter()) {
            coords.push(parse_value(path, line, name, raw)?);
        }
    }
    if coords.is_empty() {
        return Err(CliError::Data(format!("{}: no observations", path.display())));
    }
    Points::new(headers.len(), coords).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Split a labeled file into (sample 1, sample 2), keeping row order.
pub fn load_labeled(path: &Path, label_column: &str) -> Result<(Points, Points), CliError> {
    let mut reader = open(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = headers.iter().position(|h| h == label_column).ok_or_else(|| {
        CliError::Data(format!("{}: no label column '{label_column}' in the header", path.display()))
    })?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(CliError::Data(format!("{}: no feature columns besides '{label_column}'", path.display())));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = line_of(&record);
        let target = match &record[label_idx] {
            "1" => &mut a,
            "2" => &mut b,
            other => {
                return Err(CliError::Data(format!(
                    "{}:{line}: label '{other}' in column '{label_column}' must be 1 or 2",
                    path.display()
                )))
            }
        };
        for (i, (name, raw)) in headers.iter().zip(record.iter()).enumerate() {
            if i != label_idx {
                target.push(parse_value(path, line, name, raw)?);
            }
        }
    }
    let wrap = |v: Vec<f64>| Points::new(dim, v).map_err(|e| CliError::Data(format!("{}: {e}", path.display())));
    Ok((wrap(a)?, wrap(b)?))
}
