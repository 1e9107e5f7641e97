//! Column-oriented immutable dataset.
//!
//! A dataset carries named numeric and categorical feature columns plus the
//! two special columns of the claim-modeling setting: a strictly positive
//! exposure and a non-negative target. Validation happens at construction;
//! afterwards every accessor is read-only and cheap to share across
//! threads.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("column lengths differ: {column} has {got} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        got: usize,
        expected: usize,
    },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("row {row}, column {column:?}: {problem}")]
    BadValue {
        row: usize,
        column: String,
        problem: String,
    },
    #[error("dataset has no rows")]
    Empty,
}

/// Feature column payload.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Values as indices into a per-column label dictionary.
    Categorical { codes: Vec<u32>, labels: Vec<String> },
}

/// Named feature column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    /// Build a categorical column from string values, interning labels in
    /// first-appearance order.
    pub fn categorical(name: impl Into<String>, values: &[String]) -> Self {
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(values.len());
        for v in values {
            let next = labels.len() as u32;
            let c = *index.entry(v.clone()).or_insert_with(|| {
                labels.push(v.clone());
                next
            });
            codes.push(c);
        }
        Self {
            name: name.into(),
            data: ColumnData::Categorical { codes, labels },
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.data, ColumnData::Categorical { .. })
    }
}

/// Immutable table of features, exposure, and target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    exposure: Vec<f64>,
    target: Vec<f64>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(
        columns: Vec<Column>,
        exposure: Vec<f64>,
        target: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n_rows = target.len();
        if n_rows == 0 {
            return Err(DataError::Empty);
        }
        if exposure.len() != n_rows {
            return Err(DataError::LengthMismatch {
                column: "exposure".into(),
                got: exposure.len(),
                expected: n_rows,
            });
        }
        let mut seen = HashMap::new();
        for c in &columns {
            if seen.insert(c.name.clone(), ()).is_some() {
                return Err(DataError::DuplicateColumn(c.name.clone()));
            }
            if c.len() != n_rows {
                return Err(DataError::LengthMismatch {
                    column: c.name.clone(),
                    got: c.len(),
                    expected: n_rows,
                });
            }
            if let ColumnData::Numeric(values) = &c.data {
                for (row, v) in values.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(DataError::BadValue {
                            row,
                            column: c.name.clone(),
                            problem: format!("non-finite numeric value {v}"),
                        });
                    }
                }
            }
        }
        for (row, &e) in exposure.iter().enumerate() {
            if !(e.is_finite() && e > 0.0) {
                return Err(DataError::BadValue {
                    row,
                    column: "exposure".into(),
                    problem: format!("exposure must be positive, got {e}"),
                });
            }
        }
        for (row, &y) in target.iter().enumerate() {
            if !(y.is_finite() && y >= 0.0) {
                return Err(DataError::BadValue {
                    row,
                    column: "target".into(),
                    problem: format!("target must be non-negative, got {y}"),
                });
            }
        }
        Ok(Self {
            columns,
            exposure,
            target,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Numeric values of a column, or an error for categorical columns.
    pub fn numeric(&self, name: &str) -> Result<&[f64], DataError> {
        match &self.column(name)?.data {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Categorical { .. } => Err(DataError::BadValue {
                row: 0,
                column: name.to_string(),
                problem: "expected a numeric column".into(),
            }),
        }
    }

    /// Materialize a row subset (order preserved) into a new dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick_f = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: match &c.data {
                    ColumnData::Numeric(v) => ColumnData::Numeric(pick_f(v)),
                    ColumnData::Categorical { codes, labels } => ColumnData::Categorical {
                        codes: rows.iter().map(|&r| codes[r]).collect(),
                        labels: labels.clone(),
                    },
                },
            })
            .collect();
        Self {
            columns,
            exposure: pick_f(&self.exposure),
            target: pick_f(&self.target),
            n_rows: rows.len(),
        }
    }
}
