//! CSV input and output.

use std::path::{Path, PathBuf};

use crate::CliError;

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path, e);
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    writer.write_record(header).map_err(io)?;
    for row in rows {
        writer.write_record(&row).map_err(io)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Rows of a CSV file whose header must equal `header`, as raw strings.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, CliError> {
    if !path.exists() {
        return Err(CliError::Io {
            path: PathBuf::from(path),
            message: "input file not found".into(),
        });
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found != header {
        return Err(CliError::input(
            path,
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, format!("row {}: {e}", line + 1)))?;
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }
    Ok(rows)
}

/// Parses field `column` of a data row, reporting the row (1-based, header excluded).
pub fn field<T: std::str::FromStr>(path: &Path, row: usize, column: &str, text: &str) -> Result<T, CliError> {
    text.parse()
        .map_err(|_| CliError::input(path, format!("row {}: `{text}` is not a valid {column}", row + 1)))
}
