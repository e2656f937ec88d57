//! CSV ingestion: header row, numeric features, regression or label targets.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BdeError, Result};
use crate::matrix::Matrix;
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Regression,
    Classification,
}

/// Column names and label dictionary that travel with a fitted model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSchema {
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Class names in label order (first appearance in the training file).
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    pub dataset: Dataset,
    pub schema: DataSchema,
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn csv_error(path: &Path, row: usize, column: &str, message: impl Into<String>) -> BdeError {
    BdeError::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            ::csv::ErrorKind::Io(io) => BdeError::Io(io),
            other => BdeError::Data(format!("{}: {other:?}", path.display())),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| BdeError::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(BdeError::Data(format!("{}: file is empty", path.display())));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, i + 1, "", e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(BdeError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(RawTable { header, rows })
}

fn column_index(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| csv_error(path, 0, name, "column not found in header"))
}

fn parse_cell(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| csv_error(path, row, column, format!("{cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(csv_error(path, row, column, format!("{cell:?} is not finite")));
    }
    Ok(v)
}

fn numeric_columns(path: &Path, table: &RawTable, columns: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(table.rows.len() * columns.len());
    for (i, row) in table.rows.iter().enumerate() {
        for &c in columns {
            data.push(parse_cell(path, i + 1, &table.header[c], &row[c])?);
        }
    }
    Matrix::from_vec(table.rows.len(), columns.len(), data)
}

/// Loads `path`, using `targets` as target columns and every other column as a feature.
///
/// Row numbers in errors count data rows from 1; the header is row 0.
pub fn load_csv(path: impl AsRef<Path>, targets: &[String], task: TaskKind) -> Result<TabularData> {
    let path = path.as_ref();
    if targets.is_empty() {
        return Err(BdeError::Config("at least one target column is required".into()));
    }
    let table = read_table(path)?;
    let target_idx: Vec<usize> = targets
        .iter()
        .map(|t| column_index(path, &table.header, t))
        .collect::<Result<_>>()?;
    let feature_idx: Vec<usize> = (0..table.header.len())
        .filter(|c| !target_idx.contains(c))
        .collect();
    if feature_idx.is_empty() {
        return Err(BdeError::Data(format!("{}: no feature columns", path.display())));
    }
    let x = numeric_columns(path, &table, &feature_idx)?;
    let feature_names = feature_idx.iter().map(|&c| table.header[c].clone()).collect();

    let (dataset, labels) = match task {
        TaskKind::Regression => {
            let y = numeric_columns(path, &table, &target_idx)?;
            (Dataset::regression(x, y)?, None)
        }
        TaskKind::Classification => {
            if target_idx.len() != 1 {
                return Err(BdeError::Config(
                    "classification takes exactly one target column".into(),
                ));
            }
            let c = target_idx[0];
            let mut dictionary: Vec<String> = Vec::new();
            let mut lookup: HashMap<String, usize> = HashMap::new();
            let labels: Vec<usize> = table
                .rows
                .iter()
                .map(|row| {
                    let name = &row[c];
                    *lookup.entry(name.clone()).or_insert_with(|| {
                        dictionary.push(name.clone());
                        dictionary.len() - 1
                    })
                })
                .collect();
            if dictionary.len() < 2 {
                return Err(BdeError::Data(format!(
                    "{}: target column {:?} has fewer than 2 classes",
                    path.display(),
                    table.header[c]
                )));
            }
            let classes = dictionary.len();
            (Dataset::classification(x, labels, classes)?, Some(dictionary))
        }
    };
    Ok(TabularData {
        dataset,
        schema: DataSchema {
            feature_names,
            target_names: targets.to_vec(),
            labels,
        },
    })
}

/// Feature matrix with the named columns, in the given order. Other columns are ignored.
pub fn load_features(path: impl AsRef<Path>, feature_names: &[String]) -> Result<Matrix> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let idx: Vec<usize> = feature_names
        .iter()
        .map(|f| column_index(path, &table.header, f))
        .collect::<Result<_>>()?;
    numeric_columns(path, &table, &idx)
}

/// Target matrix with the named numeric columns.
pub fn load_targets(path: impl AsRef<Path>, target_names: &[String]) -> Result<Matrix> {
    load_features(path, target_names)
}
