//! MC-Dropout, deep ensembles and bootstrap ensembles, and the aggregation of
//! member outputs into aleatoric, epistemic and total variance.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{bootstrap_indices, Standardizer};
use crate::error::{ensure_finite, Result, UqError};
use crate::io::{sha256_hex, write_atomic};
use crate::model::{read_checkpoint, train, Batch, DropoutMask, HeteroModel, History, TrainConfig};
use crate::rng;

pub const MANIFEST_FORMAT: &str = "UQEVAL-ENSEMBLE-v1";

const BOOTSTRAP_STREAM: u64 = 0xB007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    McDropout,
    Ensemble,
    Bootstrap,
}

impl Method {
    /// Default member count: forward passes for MC-Dropout, trained models
    /// otherwise.
    pub fn default_members(&self) -> usize {
        match self {
            Method::McDropout => 150,
            Method::Ensemble | Method::Bootstrap => 15,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::McDropout => "mc_dropout",
            Method::Ensemble => "ensemble",
            Method::Bootstrap => "bootstrap",
        }
    }

    /// Number of networks that must be trained.
    pub fn trained_models(&self, members: usize) -> usize {
        match self {
            Method::McDropout => 1,
            _ => members,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc_dropout" => Ok(Method::McDropout),
            "ensemble" => Ok(Method::Ensemble),
            "bootstrap" => Ok(Method::Bootstrap),
            other => Err(UqError::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Divisor used for the epistemic variance across members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    /// Divide by `M`.
    #[default]
    Population,
    /// Divide by `M - 1`.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub method: Method,
    pub members: usize,
    pub train: TrainConfig,
    pub member_seeds: Vec<u64>,
}

impl EnsembleConfig {
    /// Derives `members` distinct seeds from `seed`.
    pub fn new(method: Method, members: usize, train: TrainConfig, seed: u64) -> Self {
        let member_seeds = (0..members as u64).map(|i| rng::derive_seed(seed, i + 1)).collect();
        Self {
            method,
            members,
            train,
            member_seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(UqError::Config(format!(
                "need at least 2 members, got {}",
                self.members
            )));
        }
        if self.member_seeds.len() != self.members {
            return Err(UqError::Config(format!(
                "{} member seeds given for {} members",
                self.member_seeds.len(),
                self.members
            )));
        }
        let mut seen = self.member_seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(UqError::Config("member seeds must be pairwise distinct".into()));
        }
        self.train.validate()
    }

    fn member_config(&self, index: usize) -> TrainConfig {
        TrainConfig {
            seed: self.member_seeds[index],
            ..self.train.clone()
        }
    }
}

/// Per-member predictions: row `m` holds member `m`'s outputs for all `N`
/// inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberOutputs {
    means: Vec<Vec<f64>>,
    ale_vars: Vec<Vec<f64>>,
}

impl MemberOutputs {
    pub fn new(means: Vec<Vec<f64>>, ale_vars: Vec<Vec<f64>>) -> Result<Self> {
        if means.len() != ale_vars.len() {
            return Err(UqError::Dimension {
                expected: means.len(),
                actual: ale_vars.len(),
            });
        }
        let n = means.first().map_or(0, Vec::len);
        for (m, v) in means.iter().zip(&ale_vars) {
            for len in [m.len(), v.len()] {
                if len != n {
                    return Err(UqError::Dimension {
                        expected: n,
                        actual: len,
                    });
                }
            }
            ensure_finite(m, "means")?;
            ensure_finite(v, "ale_vars")?;
            if let Some(x) = v.iter().find(|&&x| x <= 0.0) {
                return Err(UqError::Input(format!("aleatoric variance {x} is not positive")));
            }
        }
        Ok(Self { means, ale_vars })
    }

    pub fn members(&self) -> usize {
        self.means.len()
    }

    pub fn len(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn ale_vars(&self) -> &[Vec<f64>] {
        &self.ale_vars
    }

    /// Maps every member's output back to target units.
    pub fn unscaled(&self, scaler: &Standardizer) -> Self {
        Self {
            means: self
                .means
                .iter()
                .map(|row| row.iter().map(|&m| scaler.unscale_mean(m)).collect())
                .collect(),
            ale_vars: self
                .ale_vars
                .iter()
                .map(|row| row.iter().map(|&v| scaler.unscale_var(v)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UQPredictions {
    pub mean: Vec<f64>,
    pub ale: Vec<f64>,
    pub epi: Vec<f64>,
    pub total: Vec<f64>,
}

/// Which variance a metric is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Epi,
    Ale,
    Total,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] = [UncertaintyKind::Epi, UncertaintyKind::Ale, UncertaintyKind::Total];

    pub fn name(&self) -> &'static str {
        match self {
            UncertaintyKind::Epi => "epi",
            UncertaintyKind::Ale => "ale",
            UncertaintyKind::Total => "total",
        }
    }
}

impl std::str::FromStr for UncertaintyKind {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epi" => Ok(UncertaintyKind::Epi),
            "ale" => Ok(UncertaintyKind::Ale),
            "total" => Ok(UncertaintyKind::Total),
            other => Err(UqError::Config(format!("unknown uncertainty `{other}`"))),
        }
    }
}

impl UQPredictions {
    pub fn variance(&self, kind: UncertaintyKind) -> &[f64] {
        match kind {
            UncertaintyKind::Epi => &self.epi,
            UncertaintyKind::Ale => &self.ale,
            UncertaintyKind::Total => &self.total,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Mean, population variance of member means, mean of member variances.
pub fn aggregate(outputs: &MemberOutputs) -> Result<UQPredictions> {
    aggregate_with(outputs, VarianceEstimator::Population)
}

pub fn aggregate_with(outputs: &MemberOutputs, estimator: VarianceEstimator) -> Result<UQPredictions> {
    let m = outputs.members();
    if m < 2 {
        return Err(UqError::Config(format!(
            "aggregation needs at least 2 members, got {m}"
        )));
    }
    let n = outputs.len();
    let divisor = match estimator {
        VarianceEstimator::Population => m,
        VarianceEstimator::Sample => m - 1,
    } as f64;
    let mut out = UQPredictions {
        mean: Vec::with_capacity(n),
        ale: Vec::with_capacity(n),
        epi: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
    };
    for i in 0..n {
        // Mean as an offset from the first member: identical members give
        // their shared value back exactly.
        let first = outputs.means[0][i];
        let mean = first + outputs.means.iter().map(|r| r[i] - first).sum::<f64>() / m as f64;
        let epi = outputs.means.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / divisor;
        let ale = outputs.ale_vars.iter().map(|r| r[i]).sum::<f64>() / m as f64;
        out.mean.push(mean);
        out.epi.push(epi);
        out.ale.push(ale);
        out.total.push(ale + epi);
    }
    Ok(out)
}

/// One deterministic forward pass per member over the row-major `inputs`.
pub fn predict_members(models: &[HeteroModel], inputs: &[f64]) -> Result<MemberOutputs> {
    let (means, vars) = models
        .iter()
        .map(|model| predict_rows(model, inputs, None))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    MemberOutputs::new(means, vars)
}

/// One pass per mask; each mask is shared by every input row.
pub fn predict_with_masks(model: &HeteroModel, inputs: &[f64], masks: &[DropoutMask]) -> Result<MemberOutputs> {
    let (means, vars) = masks
        .iter()
        .map(|mask| predict_rows(model, inputs, Some(mask)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    MemberOutputs::new(means, vars)
}

/// `passes` stochastic forward passes with independently drawn dropout masks.
pub fn mc_dropout_predict(model: &HeteroModel, inputs: &[f64], passes: usize, seed: u64) -> Result<MemberOutputs> {
    if model.dropout_rate() == 0.0 {
        return Err(UqError::Config(
            "MC-Dropout requires a model with dropout_rate > 0".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let masks: Vec<DropoutMask> = (0..passes).map(|_| model.sample_mask(&mut rng)).collect();
    predict_with_masks(model, inputs, &masks)
}

fn predict_rows(model: &HeteroModel, inputs: &[f64], mask: Option<&DropoutMask>) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = model.input_dim();
    if !inputs.len().is_multiple_of(d) {
        return Err(UqError::Dimension {
            expected: d,
            actual: inputs.len() % d,
        });
    }
    let mut means = Vec::with_capacity(inputs.len() / d);
    let mut vars = Vec::with_capacity(inputs.len() / d);
    for x in inputs.chunks_exact(d) {
        let p = model.forward(x, mask)?;
        means.push(p.mean);
        vars.push(p.variance());
    }
    Ok((means, vars))
}

/// Architecture shared by every member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50],
            dropout: 0.0,
        }
    }
}

impl ModelSpec {
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(crate::model::OUTPUT_DIM);
        dims
    }
}

/// A standardized training and validation set.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub train: Batch<'a>,
    pub val: Batch<'a>,
}

/// `M` independently initialized members on the same training set.
pub fn train_ensemble(
    spec: &ModelSpec,
    data: TrainingData<'_>,
    config: &EnsembleConfig,
) -> Result<Vec<(HeteroModel, History)>> {
    check_method(config, Method::Ensemble)?;
    train_members(spec, data, config, config.members, |_| None)
}

/// `M` members, each trained on its own bootstrap resample of the training
/// set. The validation set is shared.
pub fn train_bootstrap(
    spec: &ModelSpec,
    data: TrainingData<'_>,
    config: &EnsembleConfig,
) -> Result<Vec<(HeteroModel, History)>> {
    check_method(config, Method::Bootstrap)?;
    let n = data.train.len();
    train_members(spec, data, config, config.members, |seed| {
        Some(bootstrap_indices(n, rng::derive_seed(seed, BOOTSTRAP_STREAM)))
    })
}

/// The single dropout network behind MC-Dropout, seeded by the first member
/// seed.
pub fn train_mc_dropout(
    spec: &ModelSpec,
    data: TrainingData<'_>,
    config: &EnsembleConfig,
) -> Result<(HeteroModel, History)> {
    check_method(config, Method::McDropout)?;
    if spec.dropout == 0.0 {
        return Err(UqError::Config("MC-Dropout requires dropout > 0".into()));
    }
    let mut trained = train_members(spec, data, config, 1, |_| None)?;
    Ok(trained.remove(0))
}

/// Dispatches on `config.method`.
pub fn train_method(
    spec: &ModelSpec,
    data: TrainingData<'_>,
    config: &EnsembleConfig,
) -> Result<Vec<(HeteroModel, History)>> {
    match config.method {
        Method::McDropout => train_mc_dropout(spec, data, config).map(|m| vec![m]),
        Method::Ensemble => train_ensemble(spec, data, config),
        Method::Bootstrap => train_bootstrap(spec, data, config),
    }
}

fn check_method(config: &EnsembleConfig, expected: Method) -> Result<()> {
    config.validate()?;
    if config.method != expected {
        return Err(UqError::Config(format!(
            "config method is {}, expected {}",
            config.method.name(),
            expected.name()
        )));
    }
    Ok(())
}

fn train_members(
    spec: &ModelSpec,
    data: TrainingData<'_>,
    config: &EnsembleConfig,
    count: usize,
    resample: impl Fn(u64) -> Option<Vec<usize>> + Sync,
) -> Result<Vec<(HeteroModel, History)>> {
    let dims = spec.layer_dims(data.train.dim());
    (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = config.member_config(i);
            let model = HeteroModel::for_config(dims.clone(), spec.dropout, &cfg)?;
            let result = match resample(cfg.seed) {
                None => train(model, data.train, data.val, &cfg),
                Some(rows) => {
                    let d = data.train.dim();
                    let mut xs = Vec::with_capacity(rows.len() * d);
                    let mut ys = Vec::with_capacity(rows.len());
                    for &r in &rows {
                        xs.extend_from_slice(data.train.row(r));
                        ys.push(data.train.target(r));
                    }
                    train(model, Batch::new(&xs, &ys)?, data.val, &cfg)
                }
            };
            result.map_err(|e| e.with_member(i))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    /// Checkpoint path relative to the manifest's directory.
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub sha256: String,
    pub best_epoch: usize,
}

/// Index of a trained ensemble on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub method: Method,
    /// Members as configured (forward passes for MC-Dropout).
    pub members: usize,
    pub member_seeds: Vec<u64>,
    /// Seed of the MC-Dropout mask stream.
    pub pass_seed: u64,
    pub models: Vec<ManifestMember>,
    pub config_hash: String,
    pub data_hash: String,
    pub scaler: Standardizer,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
        if found != MANIFEST_FORMAT {
            return Err(UqError::Format {
                path: path.to_path_buf(),
                expected: MANIFEST_FORMAT.into(),
                found: found.into(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Loads every member checkpoint, verifying its hash.
    pub fn load_models(&self, manifest_path: &Path) -> Result<Vec<HeteroModel>> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        self.models
            .iter()
            .map(|m| {
                let path = dir.join(&m.checkpoint);
                let bytes = std::fs::read(&path)?;
                let found = sha256_hex(&bytes);
                if found != m.sha256 {
                    return Err(UqError::Format {
                        path,
                        expected: format!("sha256 {}", m.sha256),
                        found: format!("sha256 {found}"),
                    });
                }
                read_checkpoint(&path)
            })
            .collect()
    }

    /// Member outputs for `inputs` (standardized features), in standardized
    /// target units.
    pub fn predict(&self, models: &[HeteroModel], inputs: &[f64]) -> Result<MemberOutputs> {
        match self.method {
            Method::McDropout => {
                let model = models
                    .first()
                    .ok_or_else(|| UqError::Config("manifest lists no models".into()))?;
                mc_dropout_predict(model, inputs, self.members, self.pass_seed)
            }
            Method::Ensemble | Method::Bootstrap => predict_members(models, inputs),
        }
    }
}
