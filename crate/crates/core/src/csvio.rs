//! CSV ingestion and emission.
//!
//! Dialect: comma-separated, required header row, UTF-8, optional
//! double-quoted fields with doubled inner quotes, decimal points only.
//! Floats are written in shortest round-trip form, so a write/read cycle
//! reproduces values bit-exactly and identical runs produce identical
//! bytes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dataset::{Column, ColumnData, DataError, Dataset};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty file (missing header row)")]
    MissingHeader,
    #[error("data row {row}: expected {expected} fields, found {found}")]
    FieldCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("data row {row}, column {column:?}: cannot parse {value:?} as a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unterminated quoted field starting in data row {row}")]
    UnterminatedQuote { row: usize },
    #[error("required column {0:?} not found in header")]
    MissingColumn(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Column roles for turning a raw CSV table into a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRoles {
    pub target: String,
    pub exposure: String,
    pub categorical: Vec<String>,
    pub ignore: Vec<String>,
}

/// Raw parsed CSV: header plus rows of string fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Split CSV text into records, honoring quoted fields.
pub fn parse_csv(text: &str) -> Result<RawTable, CsvError> {
    let mut records: Vec<Vec<String>> = Vec::new();
    let mut field = String::new();
    let mut record: Vec<String> = Vec::new();
    let mut chars = text.chars().peekable();
    let mut in_quotes = false;
    let mut any = false;
    while let Some(c) = chars.next() {
        any = true;
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                other => field.push(other),
            }
            continue;
        }
        match c {
            '"' => in_quotes = true,
            ',' => {
                record.push(std::mem::take(&mut field));
                }
            '\r' => {}
            '\n' => {
                record.push(std::mem::take(&mut field));
                records.push(std::mem::take(&mut record));
            }
            other => field.push(other),
        }
    }
    if in_quotes {
        return Err(CsvError::UnterminatedQuote {
            row: records.len(),
        });
    }
    if any && (!field.is_empty() || !record.is_empty()) {
        record.push(field);
        records.push(record);
    }
    if records.is_empty() {
        return Err(CsvError::MissingHeader);
    }
    let header = records.remove(0);
    let expected = header.len();
    for (i, r) in records.iter().enumerate() {
        if r.len() != expected {
            return Err(CsvError::FieldCount {
                row: i + 1,
                expected,
                found: r.len(),
            });
        }
    }
    Ok(RawTable {
        header,
        rows: records,
    })
}

/// Read a CSV file into a raw table.
pub fn read_table(path: &Path) -> Result<RawTable, CsvError> {
    let text = fs::read_to_string(path).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text)
}

/// Assemble a dataset from a raw table under the given column roles.
///
/// Unlisted columns default to numeric features. Rows are never silently
/// dropped; any unparsable or out-of-domain cell fails with its row and
/// column.
pub fn dataset_from_table(table: &RawTable, roles: &DataRoles) -> Result<Dataset, CsvError> {
    let col_index = |name: &str| -> Result<usize, CsvError> {
        table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CsvError::MissingColumn(name.to_string()))
    };
    let target_idx = col_index(&roles.target)?;
    let exposure_idx = col_index(&roles.exposure)?;
    for c in roles.categorical.iter().chain(&roles.ignore) {
        col_index(c)?;
    }
    let categorical: HashSet<&str> = roles.categorical.iter().map(String::as_str).collect();
    let ignored: HashSet<&str> = roles.ignore.iter().map(String::as_str).collect();

    let parse_number = |row: usize, col: usize| -> Result<f64, CsvError> {
        let value = &table.rows[row][col];
        value.trim().parse::<f64>().map_err(|_| CsvError::BadNumber {
            row: row + 1,
            column: table.header[col].clone(),
            value: value.clone(),
        })
    };

    let n = table.rows.len();
    let mut columns = Vec::new();
    for (ci, name) in table.header.iter().enumerate() {
        if ci == target_idx || ci == exposure_idx || ignored.contains(name.as_str()) {
            continue;
        }
        if categorical.contains(name.as_str()) {
            let values: Vec<String> = table.rows.iter().map(|r| r[ci].clone()).collect();
            columns.push(Column::categorical(name.clone(), &values));
        } else {
            let mut values = Vec::with_capacity(n);
            for row in 0..n {
                values.push(parse_number(row, ci)?);
            }
            columns.push(Column::numeric(name.clone(), values));
        }
    }
    let mut exposure = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for row in 0..n {
        exposure.push(parse_number(row, exposure_idx)?);
        target.push(parse_number(row, target_idx)?);
    }
    Ok(Dataset::new(columns, exposure, target)?)
}

/// Read a dataset straight from a CSV file.
pub fn read_dataset(path: &Path, roles: &DataRoles) -> Result<Dataset, CsvError> {
    let table = read_table(path)?;
    dataset_from_table(&table, roles)
}

/// Shortest-round-trip float formatting.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn quoted(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Serialize a dataset to CSV text with the given special-column names.
pub fn dataset_to_csv(dataset: &Dataset, exposure_name: &str, target_name: &str) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = dataset
        .columns()
        .iter()
        .map(|c| quoted(&c.name))
        .collect();
    header.push(quoted(exposure_name));
    header.push(quoted(target_name));
    let _ = writeln!(out, "{}", header.join(","));
    for row in 0..dataset.n_rows() {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        for col in dataset.columns() {
            match &col.data {
                ColumnData::Numeric(v) => fields.push(format_float(v[row])),
                ColumnData::Categorical { codes, labels } => {
                    fields.push(quoted(&labels[codes[row] as usize]));
                }
            }
        }
        fields.push(format_float(dataset.exposure()[row]));
        fields.push(format_float(dataset.target()[row]));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// Write a dataset as a CSV file.
pub fn write_dataset(
    dataset: &Dataset,
    exposure_name: &str,
    target_name: &str,
    path: &Path,
) -> Result<(), CsvError> {
    fs::write(path, dataset_to_csv(dataset, exposure_name, target_name)).map_err(|source| {
        CsvError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}
