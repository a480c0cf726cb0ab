use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, UqError};

/// Which CSV columns hold the target and, optionally, the group label.
/// Every other column is a numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: String,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub units: String,
}

impl CsvSchema {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            group: None,
            units: String::new(),
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| UqError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let target_col = find(&schema.target)?;
    let group_col = schema.group.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_col && Some(c) != group_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(UqError::Input(format!("{}: no feature columns", path.display())));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut groups = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Header is line 1; data rows are reported by file line.
        let row = i + 2;
        let number = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| UqError::Parse {
                path: path.to_path_buf(),
                row,
                column: headers[col].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(UqError::NonFinite {
                    path: path.to_path_buf(),
                    row,
                    column: headers[col].clone(),
                });
            }
            Ok(v)
        };
        for &c in &feature_cols {
            features.push(number(c)?);
        }
        targets.push(number(target_col)?);
        if let Some(gc) = group_col {
            let key = record.get(gc).unwrap_or("").to_string();
            let next = labels.len();
            groups.push(*labels.entry(key).or_insert(next));
        }
    }
    if targets.is_empty() {
        return Err(UqError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let mut ds = Dataset::new(features, feature_cols.len(), targets, group_col.map(|_| groups), names)?
        .with_target_name(&schema.target)
        .with_units(&schema.units);
    if let Some(g) = &schema.group {
        ds = ds.with_group_name(g);
    }
    Ok(ds)
}

/// Writes features, then the target, then the group column (when present).
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = dataset.feature_names().iter().map(String::as_str).collect();
    header.push(dataset.target_name());
    if let Some(g) = dataset.group_name() {
        header.push(g);
    }
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.targets()[i].to_string());
        if let Some(g) = dataset.group_ids() {
            rec.push(g[i].to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| UqError::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}
