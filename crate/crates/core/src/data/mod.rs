//! Datasets, CSV ingestion, splitting and synthetic generators.

mod csv_io;
mod split;
mod synthetic;

pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use split::{bootstrap_indices, split, Split, SplitSpec, SplitStrategy};
pub use synthetic::{generate_synthetic, FeatureLayout, MeanFunction, NoiseFunction, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};

/// Feature matrix (row-major), targets and optional group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    targets: Vec<f64>,
    group_ids: Option<Vec<usize>>,
    feature_names: Vec<String>,
    target_name: String,
    group_name: Option<String>,
    target_units: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        targets: Vec<f64>,
        group_ids: Option<Vec<usize>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if targets.is_empty() || n_features == 0 {
            return Err(UqError::Input(
                "a dataset needs at least one row and one feature".into(),
            ));
        }
        if features.len() != targets.len() * n_features {
            return Err(UqError::Dimension {
                expected: targets.len() * n_features,
                actual: features.len(),
            });
        }
        if feature_names.len() != n_features {
            return Err(UqError::Dimension {
                expected: n_features,
                actual: feature_names.len(),
            });
        }
        crate::error::ensure_finite(&features, "features")?;
        crate::error::ensure_finite(&targets, "targets")?;
        if let Some(g) = &group_ids {
            if g.len() != targets.len() {
                return Err(UqError::Dimension {
                    expected: targets.len(),
                    actual: g.len(),
                });
            }
        }
        Ok(Self {
            features,
            n_features,
            targets,
            group_name: group_ids.as_ref().map(|_| "group".to_string()),
            group_ids,
            feature_names,
            target_name: "y".into(),
            target_units: String::new(),
        })
    }

    pub fn with_target_name(mut self, name: impl Into<String>) -> Self {
        self.target_name = name.into();
        self
    }

    pub fn with_group_name(mut self, name: impl Into<String>) -> Self {
        if self.group_ids.is_some() {
            self.group_name = Some(name.into());
        }
        self
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.target_units = units.into();
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn group_ids(&self) -> Option<&[usize]> {
        self.group_ids.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn group_name(&self) -> Option<&str> {
        self.group_name.as_deref()
    }

    pub fn target_units(&self) -> &str {
        &self.target_units
    }

    /// Rows `indices` (duplicates allowed) as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(UqError::Input(format!(
                "row index {bad} out of range for {} rows",
                self.len()
            )));
        }
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Ok(Self {
            features,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            group_ids: self.group_ids.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            features: Vec::new(),
            n_features: self.n_features,
            targets: Vec::new(),
            group_ids: None,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            group_name: self.group_name.clone(),
            target_units: self.target_units.clone(),
        }
    }
}

/// Per-feature and target standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardizer {
    pub fn fit(data: &Dataset, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(UqError::Input("cannot fit a standardizer on zero rows".into()));
        }
        let d = data.n_features();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, x) in mean.iter_mut().zip(data.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| nonzero_std(v / n)).collect();
        let t_mean = rows.iter().map(|&i| data.targets()[i]).sum::<f64>() / n;
        let t_var = rows.iter().map(|&i| (data.targets()[i] - t_mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            feature_mean: mean,
            feature_std: std,
            target_mean: t_mean,
            target_std: nonzero_std(t_var),
        })
    }

    /// Standardized features and targets of `rows`, row-major.
    pub fn transform(&self, data: &Dataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(rows.len() * data.n_features());
        for &i in rows {
            xs.extend(
                data.row(i)
                    .iter()
                    .zip(&self.feature_mean)
                    .zip(&self.feature_std)
                    .map(|((x, m), s)| (x - m) / s),
            );
        }
        let ys = rows
            .iter()
            .map(|&i| (data.targets()[i] - self.target_mean) / self.target_std)
            .collect();
        (xs, ys)
    }

    pub fn unscale_mean(&self, m: f64) -> f64 {
        m * self.target_std + self.target_mean
    }

    pub fn unscale_var(&self, v: f64) -> f64 {
        v * self.target_std * self.target_std
    }
}

fn nonzero_std(var: f64) -> f64 {
    let s = var.sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Dataset::new(
            vec![1.0, 2.0, 3.0],
            2,
            vec![1.0, 2.0],
            None,
            vec!["a".into(), "b".into()]
        )
        .is_err());
        assert!(Dataset::new(vec![1.0, f64::NAN], 1, vec![1.0, 2.0], None, vec!["a".into()]).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], 1, vec![1.0, 2.0], Some(vec![0]), vec!["a".into()]).is_err());
        assert!(Dataset::new(vec![], 1, vec![], None, vec!["a".into()]).is_err());
    }

    #[test]
    fn subset_keeps_rows_and_groups() {
        let d = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            2,
            vec![10.0, 20.0, 30.0],
            Some(vec![0, 1, 1]),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let s = d.subset(&[2, 0, 2]).unwrap();
        assert_eq!(s.features(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert_eq!(s.targets(), &[30.0, 10.0, 30.0]);
        assert_eq!(s.group_ids().unwrap(), &[1, 0, 1]);
        assert!(d.subset(&[3]).is_err());
    }

    #[test]
    fn standardizer_round_trips_targets() {
        let d = Dataset::new(vec![1.0, 3.0, 5.0], 1, vec![2.0, 4.0, 9.0], None, vec!["x".into()]).unwrap();
        let s = Standardizer::fit(&d, &[0, 1, 2]).unwrap();
        let (xs, ys) = s.transform(&d, &[0, 1, 2]);
        assert!((xs.iter().sum::<f64>()).abs() < 1e-12);
        for (y, t) in ys.iter().zip(d.targets()) {
            assert!((s.unscale_mean(*y) - t).abs() < 1e-12);
        }
        assert!((s.unscale_var(1.0) - s.target_std.powi(2)).abs() < 1e-12);
    }
}
