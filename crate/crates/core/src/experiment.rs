//! End-to-end runs: train a method from a [`RunConfig`], evaluate it on the
//! held-out split, and compare in-domain with out-of-domain summaries.
//!
//! A training run writes into one directory:
//!
//! ```text
//! config.json      resolved run configuration
//! split.json       row indices of train / validation / test
//! members/*.ckpt   member checkpoints
//! training.csv     per-epoch losses of every member
//! manifest.json    ensemble manifest
//! ```
//!
//! Evaluation reads that directory and never modifies it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_csv, split, CsvSchema, Dataset, Split, SplitSpec, SplitStrategy, Standardizer,
    SyntheticSpec,
};
use crate::error::{Result, UqError};
use crate::estimators::{
    aggregate_with, train_method, EnsembleConfig, Manifest, ManifestMember, MemberOutputs, Method, ModelSpec,
    TrainingData, UQPredictions, UncertaintyKind, VarianceEstimator, MANIFEST_FORMAT,
};
use crate::io::{sha256_hex, write_atomic};
use crate::metrics::{
    auce_mce, auco, confidence_curve, coverage_allow_degenerate, coverage_at_allow_degenerate, decrease_ratio,
    dispersion, error_calibration, error_drop, oracle_curve, write_coverage_csv, write_curve_csv, write_error_bins_csv,
    CalibrationConfig, RankingConfig,
};
use crate::model::{write_checkpoint, Batch, History, TrainConfig};
use crate::rng;

pub const SUMMARY_FORMAT: &str = "UQEVAL-SUMMARY-v1";
pub const COMPARE_FORMAT: &str = "UQEVAL-COMPARE-v1";

const PASS_STREAM: u64 = 0x3CD0;

/// Confidence level reported alongside the summary indices.
pub const REPORTED_COVERAGE_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        schema: CsvSchema,
    },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    /// Loads the dataset; synthetic sources also return the true noise
    /// standard deviation of every row.
    pub fn load(&self) -> Result<(Dataset, Option<Vec<f64>>)> {
        match self {
            DataSource::Csv { path, schema } => Ok((load_csv(path, schema)?, None)),
            DataSource::Synthetic(spec) => {
                let (d, sigma) = generate_synthetic(spec)?;
                Ok((d, Some(sigma)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    pub method: Method,
    /// Defaults to 15 trained members, or 150 passes for MC-Dropout.
    #[serde(default)]
    pub members: Option<usize>,
    /// Defaults to seeds derived from `seed`.
    #[serde(default)]
    pub member_seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ranking: RankingConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub variance: VarianceEstimator,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(data: DataSource, method: Method) -> Self {
        Self {
            data,
            split: SplitSpec::default(),
            method,
            members: None,
            member_seeds: None,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            ranking: RankingConfig::default(),
            calibration: CalibrationConfig::default(),
            variance: VarianceEstimator::default(),
            output_dir: None,
            seed: 0,
        }
    }

    /// Reads a JSON config; relative CSV paths are resolved against the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| UqError::Config(format!("{}: {e}", path.display())))?;
        if let DataSource::Csv { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn members(&self) -> usize {
        self.members.unwrap_or_else(|| self.method.default_members())
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::new(self.method, self.members(), self.train.clone(), self.seed);
        if let Some(seeds) = &self.member_seeds {
            cfg.member_seeds = seeds.clone();
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble_config().validate()?;
        self.split.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if self.model.hidden.contains(&0) {
            return Err(UqError::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(UqError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.model.dropout
            )));
        }
        if self.method == Method::McDropout && self.model.dropout == 0.0 {
            return Err(UqError::Config("mc_dropout needs model.dropout > 0".into()));
        }
        if self.ranking.q < 2 {
            return Err(UqError::Config("ranking.q must be at least 2".into()));
        }
        if self.calibration.levels < 2 || self.calibration.bins < 2 {
            return Err(UqError::Config("calibration needs at least 2 levels and 2 bins".into()));
        }
        Ok(())
    }

    /// Identifies runs that differ at most in split strategy and output
    /// location.
    pub fn lineage_hash(&self, data_hash: &str) -> Result<String> {
        let mut neutral = self.clone();
        neutral.split.strategy = SplitStrategy::Random;
        neutral.output_dir = None;
        let mut bytes = serde_json::to_vec(&neutral)?;
        bytes.extend_from_slice(data_hash.as_bytes());
        Ok(sha256_hex(&bytes))
    }
}

/// Hash of a dataset's numeric content and group labels.
pub fn dataset_hash(data: &Dataset) -> String {
    let mut bytes = Vec::with_capacity(8 * (data.features().len() + 2 * data.len()));
    bytes.extend_from_slice(&(data.n_features() as u64).to_le_bytes());
    for v in data.features().iter().chain(data.targets()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(g) = data.group_ids() {
        for &id in g {
            bytes.extend_from_slice(&(id as u64).to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub strategy: SplitStrategy,
    pub seed: u64,
    #[serde(flatten)]
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub histories: Vec<History>,
}

/// Splits the data, trains the configured method and writes the run
/// directory.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let (data, _) = config.data.load()?;
    let parts = split(&data, &config.split)?;
    let scaler = Standardizer::fit(&data, &parts.train)?;
    let (train_x, train_y) = scaler.transform(&data, &parts.train);
    let (val_x, val_y) = scaler.transform(&data, &parts.val);
    let ensemble = config.ensemble_config();
    let trained = train_method(
        &config.model,
        TrainingData {
            train: Batch::new(&train_x, &train_y)?,
            val: Batch::new(&val_x, &val_y)?,
        },
        &ensemble,
    )?;

    std::fs::create_dir_all(out_dir.join("members"))?;
    let config_bytes = config.to_json()?;
    write_atomic(&out_dir.join("config.json"), &config_bytes)?;
    let record = SplitRecord {
        strategy: config.split.strategy,
        seed: config.split.seed,
        split: parts,
    };
    write_atomic(&out_dir.join("split.json"), &serde_json::to_vec(&record)?)?;

    let mut models = Vec::with_capacity(trained.len());
    let mut log = csv::Writer::from_writer(Vec::new());
    log.write_record(["member", "epoch", "train_loss", "val_loss"])?;
    for (i, (model, history)) in trained.iter().enumerate() {
        let rel = PathBuf::from("members").join(format!("member_{i:03}.ckpt"));
        let path = out_dir.join(&rel);
        write_checkpoint(model, &path)?;
        models.push(ManifestMember {
            checkpoint: rel,
            seed: ensemble.member_seeds[i],
            sha256: sha256_hex(&std::fs::read(&path)?),
            best_epoch: history.best_epoch,
        });
        for (e, (t, v)) in history.train_loss.iter().zip(&history.val_loss).enumerate() {
            log.write_record(&[i.to_string(), (e + 1).to_string(), t.to_string(), v.to_string()])?;
        }
    }
    let log = log.into_inner().map_err(|e| UqError::Io(e.into_error()))?;
    write_atomic(&out_dir.join("training.csv"), &log)?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        method: config.method,
        members: ensemble.members,
        member_seeds: ensemble.member_seeds.clone(),
        pass_seed: rng::derive_seed(ensemble.member_seeds[0], PASS_STREAM),
        models,
        config_hash: sha256_hex(&config_bytes),
        data_hash: dataset_hash(&data),
        scaler,
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    Ok(TrainOutcome {
        manifest,
        manifest_path,
        histories: trained.into_iter().map(|(_, h)| h).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    In,
    Out,
}

impl From<SplitStrategy> for Domain {
    fn from(s: SplitStrategy) -> Self {
        match s {
            SplitStrategy::Random => Domain::In,
            SplitStrategy::Group => Domain::Out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Infinite,
    Degenerate,
}

/// A reported number, or the reason it is not an ordinary finite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<Flag>,
}

impl Cell {
    pub fn of(v: f64) -> Self {
        if v.is_finite() {
            Self {
                value: Some(v),
                flag: None,
            }
        } else if v.is_infinite() {
            Self::flagged(Flag::Infinite)
        } else {
            Self::flagged(Flag::Degenerate)
        }
    }

    pub fn flagged(flag: Flag) -> Self {
        Self {
            value: None,
            flag: Some(flag),
        }
    }

    fn degenerate(self, yes: bool) -> Self {
        if yes && self.flag.is_none() {
            Self {
                flag: Some(Flag::Degenerate),
                ..self
            }
        } else {
            self
        }
    }

    fn display(&self) -> String {
        match (self.value, self.flag) {
            (Some(v), None) => format!("{v:.4}"),
            (Some(v), Some(_)) => format!("{v:.4}*"),
            (None, Some(Flag::Infinite)) => "inf".into(),
            (None, _) => "n/a".into(),
        }
    }
}

/// The seven indices reported per uncertainty column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indices {
    pub auco: Cell,
    pub error_drop: Cell,
    pub decrease_ratio: Cell,
    pub auce: Cell,
    pub mce: Cell,
    pub ence: Cell,
    pub cv: Cell,
}

impl Indices {
    pub const NAMES: [&'static str; 7] = ["AUCO", "Error Drop", "Decrease Ratio", "AUCE", "MCE", "ENCE", "c_v"];

    pub fn cells(&self) -> [Cell; 7] {
        [
            self.auco,
            self.error_drop,
            self.decrease_ratio,
            self.auce,
            self.mce,
            self.ence,
            self.cv,
        ]
    }

    fn from_cells(c: [Cell; 7]) -> Self {
        Self {
            auco: c[0],
            error_drop: c[1],
            decrease_ratio: c[2],
            auce: c[3],
            mce: c[4],
            ence: c[5],
            cv: c[6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub uncertainty: UncertaintyKind,
    pub indices: Indices,
    /// Empirical coverage of the central 90% interval.
    pub coverage_90: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub format: String,
    pub method: Method,
    pub domain: Domain,
    pub lineage: String,
    pub n_test: usize,
    pub mae: f64,
    /// Average of the individual members' MAE.
    pub mean_member_mae: f64,
    pub columns: Vec<UncertaintySummary>,
}

impl MetricsSummary {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
        if found != SUMMARY_FORMAT {
            return Err(UqError::Format {
                path: path.to_path_buf(),
                expected: SUMMARY_FORMAT.into(),
                found: found.into(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn column(&self, kind: UncertaintyKind) -> Option<&UncertaintySummary> {
        self.columns.iter().find(|c| c.uncertainty == kind)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "method {}  domain {}  n_test {}",
            self.method.name(),
            match self.domain {
                Domain::In => "in",
                Domain::Out => "out",
            },
            self.n_test
        );
        let _ = writeln!(s, "MAE {:.4}  (mean member MAE {:.4})", self.mae, self.mean_member_mae);
        let _ = write!(s, "{:<16}", "index");
        for c in &self.columns {
            let _ = write!(s, "{:>12}", c.uncertainty.name());
        }
        s.push('\n');
        for (k, name) in Indices::NAMES.iter().enumerate() {
            let _ = write!(s, "{name:<16}");
            for c in &self.columns {
                let _ = write!(s, "{:>12}", c.indices.cells()[k].display());
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<16}", "coverage@0.9");
        for c in &self.columns {
            let _ = write!(s, "{:>12}", c.coverage_90.display());
        }
        s.push('\n');
        s
    }
}

/// Everything computed by an evaluation, before anything is written.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: MetricsSummary,
    pub config: RunConfig,
    pub test_rows: Vec<usize>,
    pub targets: Vec<f64>,
    /// Member outputs in target units.
    pub members: MemberOutputs,
    pub predictions: UQPredictions,
    /// True noise standard deviation of the test rows (synthetic data only).
    pub true_sigma: Option<Vec<f64>>,
}

/// Loads a run directory and evaluates the selected uncertainties on its
/// test rows.
pub fn evaluate_run(manifest_path: &Path, selectors: &[UncertaintyKind]) -> Result<Evaluation> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let config_path = dir.join("config.json");
    let config_bytes = std::fs::read(&config_path)?;
    if sha256_hex(&config_bytes) != manifest.config_hash {
        return Err(UqError::Lineage(format!(
            "{} does not match the manifest's config hash",
            config_path.display()
        )));
    }
    let config: RunConfig = serde_json::from_slice(&config_bytes)?;
    if config.method != manifest.method {
        return Err(UqError::Lineage("manifest method differs from its config".into()));
    }
    let record: SplitRecord = serde_json::from_slice(&std::fs::read(dir.join("split.json"))?)?;
    if record.strategy != config.split.strategy {
        return Err(UqError::Lineage("split.json strategy differs from the config".into()));
    }
    let (data, sigma) = config.data.load()?;
    let data_hash = dataset_hash(&data);
    if data_hash != manifest.data_hash {
        return Err(UqError::Lineage(
            "dataset content differs from the one used for training".into(),
        ));
    }
    let models = manifest.load_models(manifest_path)?;
    let test = record.split.test;
    let (xs, _) = manifest.scaler.transform(&data, &test);
    let members = manifest.predict(&models, &xs)?.unscaled(&manifest.scaler);
    let predictions = aggregate_with(&members, config.variance)?;
    let targets: Vec<f64> = test.iter().map(|&i| data.targets()[i]).collect();

    let mut kinds = if selectors.is_empty() {
        UncertaintyKind::ALL.to_vec()
    } else {
        selectors.to_vec()
    };
    kinds.sort();
    kinds.dedup();
    let columns = kinds
        .iter()
        .map(|&k| summarize(&predictions, &targets, k, &config))
        .collect::<Result<Vec<_>>>()?;
    let mae = mean_abs_error(&predictions.mean, &targets);
    let mean_member_mae =
        members.means().iter().map(|m| mean_abs_error(m, &targets)).sum::<f64>() / members.members() as f64;
    let summary = MetricsSummary {
        format: SUMMARY_FORMAT.into(),
        method: config.method,
        domain: config.split.strategy.into(),
        lineage: config.lineage_hash(&data_hash)?,
        n_test: test.len(),
        mae,
        mean_member_mae,
        columns,
    };
    Ok(Evaluation {
        summary,
        true_sigma: sigma.map(|s| test.iter().map(|&i| s[i]).collect()),
        config,
        test_rows: test,
        targets,
        members,
        predictions,
    })
}

pub fn mean_abs_error(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

fn summarize(
    pred: &UQPredictions,
    targets: &[f64],
    kind: UncertaintyKind,
    cfg: &RunConfig,
) -> Result<UncertaintySummary> {
    let var = pred.variance(kind);
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let abs_err: Vec<f64> = pred.mean.iter().zip(targets).map(|(m, t)| (t - m).abs()).collect();
    let degenerate = var.iter().all(|&v| v == 0.0);

    let curve = confidence_curve(&abs_err, &std, &cfg.ranking)?;
    let oracle = oracle_curve(&abs_err, &cfg.ranking)?;
    let coverage = coverage_allow_degenerate(&pred.mean, var, targets, cfg.calibration.levels)?;
    let cal = auce_mce(&coverage);
    let ence = match error_calibration(
        &pred.mean,
        var,
        targets,
        cfg.calibration.bins,
        cfg.calibration.ence_form,
    ) {
        Ok((_, e)) => Cell::of(e),
        Err(UqError::DegenerateUncertainty(_)) => Cell::flagged(Flag::Degenerate),
        Err(e) => return Err(e),
    };
    let cv = match dispersion(&std) {
        Ok(c) => Cell::of(c),
        Err(UqError::DegenerateUncertainty(_)) => Cell {
            value: Some(0.0),
            flag: Some(Flag::Degenerate),
        },
        Err(e) => return Err(e),
    };
    let indices = Indices::from_cells([
        Cell::of(auco(&curve, &oracle)?).degenerate(degenerate),
        Cell::of(error_drop(&curve)).degenerate(degenerate),
        Cell::of(decrease_ratio(&curve)).degenerate(degenerate),
        Cell::of(cal.auce).degenerate(degenerate),
        Cell::of(cal.mce).degenerate(degenerate),
        ence,
        cv,
    ]);
    let c90 = coverage_at_allow_degenerate(&pred.mean, var, targets, REPORTED_COVERAGE_LEVEL)?;
    Ok(UncertaintySummary {
        uncertainty: kind,
        indices,
        coverage_90: Cell::of(c90).degenerate(degenerate),
    })
}

/// Evaluates a run and writes `summary.json`, `summary.txt`,
/// `predictions.csv` and per-uncertainty curve exports into `out_dir`.
pub fn cmd_evaluate(manifest_path: &Path, selectors: &[UncertaintyKind], out_dir: &Path) -> Result<Evaluation> {
    let eval = evaluate_run(manifest_path, selectors)?;
    write_evaluation(&eval, out_dir)?;
    Ok(eval)
}

pub fn write_evaluation(eval: &Evaluation, out_dir: &Path) -> Result<()> {
    let p = &eval.predictions;
    let cfg = &eval.config;
    let abs_err: Vec<f64> = p.mean.iter().zip(&eval.targets).map(|(m, t)| (t - m).abs()).collect();
    for column in &eval.summary.columns {
        let kind = column.uncertainty;
        let var = p.variance(kind);
        let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        let name = kind.name();

        let curve = confidence_curve(&abs_err, &std, &cfg.ranking)?;
        let oracle = oracle_curve(&abs_err, &cfg.ranking)?;
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve, &oracle)?;
        write_atomic(&out_dir.join(format!("confidence_curve_{name}.csv")), &buf)?;

        let coverage = coverage_allow_degenerate(&p.mean, var, &eval.targets, cfg.calibration.levels)?;
        let mut buf = Vec::new();
        write_coverage_csv(&mut buf, &coverage)?;
        write_atomic(&out_dir.join(format!("coverage_{name}.csv")), &buf)?;

        if let Ok((bins, _)) = error_calibration(
            &p.mean,
            var,
            &eval.targets,
            cfg.calibration.bins,
            cfg.calibration.ence_form,
        ) {
            let mut buf = Vec::new();
            write_error_bins_csv(&mut buf, &bins)?;
            write_atomic(&out_dir.join(format!("error_calibration_{name}.csv")), &buf)?;
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "target", "mean", "ale_var", "epi_var", "total_var"])?;
    for (i, &row) in eval.test_rows.iter().enumerate() {
        w.write_record(&[
            row.to_string(),
            eval.targets[i].to_string(),
            p.mean[i].to_string(),
            p.ale[i].to_string(),
            p.epi[i].to_string(),
            p.total[i].to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| UqError::Io(e.into_error()))?;
    write_atomic(&out_dir.join("predictions.csv"), &bytes)?;
    write_atomic(&out_dir.join("summary.txt"), eval.summary.to_table().as_bytes())?;
    write_atomic(&out_dir.join("summary.json"), &eval.summary.to_json()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRatios {
    pub uncertainty: UncertaintyKind,
    pub indices: Indices,
    pub coverage_90: Cell,
}

/// Out-of-domain over in-domain ratios of every reported number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub format: String,
    pub method: Method,
    pub lineage: String,
    pub mae_in: f64,
    pub mae_out: f64,
    /// Error generalization ratio `MAE_out / MAE_in`.
    pub mae_ratio: Cell,
    pub columns: Vec<ColumnRatios>,
}

impl CompareReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method {}  out/in ratios", self.method.name());
        let _ = writeln!(
            s,
            "MAE {:.4}/{:.4} = {}",
            self.mae_out,
            self.mae_in,
            self.mae_ratio.display()
        );
        let _ = write!(s, "{:<16}", "index");
        for c in &self.columns {
            let _ = write!(s, "{:>12}", c.uncertainty.name());
        }
        s.push('\n');
        for (k, name) in Indices::NAMES.iter().enumerate() {
            let _ = write!(s, "{name:<16}");
            for c in &self.columns {
                let _ = write!(s, "{:>12}", c.indices.cells()[k].display());
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<16}", "coverage@0.9");
        for c in &self.columns {
            let _ = write!(s, "{:>12}", c.coverage_90.display());
        }
        s.push('\n');
        s
    }
}

/// `out / in`; equal values give exactly 1, flagged inputs or a zero
/// denominator give a flagged ratio.
pub fn ratio(out: Cell, inn: Cell) -> Cell {
    match (out.value, inn.value, out.flag, inn.flag) {
        (_, _, Some(Flag::Infinite), _) | (_, _, _, Some(Flag::Infinite)) => Cell::flagged(Flag::Infinite),
        (_, _, Some(_), _) | (_, _, _, Some(_)) => Cell::flagged(Flag::Degenerate),
        (Some(a), Some(b), None, None) if a == b => Cell::of(1.0),
        (Some(_), Some(0.0), None, None) => Cell::flagged(Flag::Infinite),
        (Some(a), Some(b), None, None) => Cell::of(a / b),
        _ => Cell::flagged(Flag::Degenerate),
    }
}

pub fn cmd_compare(in_summary: &MetricsSummary, out_summary: &MetricsSummary) -> Result<CompareReport> {
    if in_summary.lineage != out_summary.lineage {
        return Err(UqError::Lineage(
            "summaries come from different configurations or data".into(),
        ));
    }
    if in_summary.method != out_summary.method {
        return Err(UqError::Lineage("summaries come from different methods".into()));
    }
    if in_summary.domain != Domain::In || out_summary.domain != Domain::Out {
        return Err(UqError::Lineage(
            "expected an in-domain (random split) and an out-of-domain (group split) summary, in that order".into(),
        ));
    }
    let columns = in_summary
        .columns
        .iter()
        .filter_map(|a| {
            let b = out_summary.column(a.uncertainty)?;
            let (ia, ib) = (a.indices.cells(), b.indices.cells());
            let mut cells = [Cell::of(0.0); 7];
            for k in 0..7 {
                cells[k] = ratio(ib[k], ia[k]);
            }
            Some(ColumnRatios {
                uncertainty: a.uncertainty,
                indices: Indices::from_cells(cells),
                coverage_90: ratio(b.coverage_90, a.coverage_90),
            })
        })
        .collect();
    Ok(CompareReport {
        format: COMPARE_FORMAT.into(),
        method: in_summary.method,
        lineage: in_summary.lineage.clone(),
        mae_in: in_summary.mae,
        mae_out: out_summary.mae,
        mae_ratio: ratio(Cell::of(out_summary.mae), Cell::of(in_summary.mae)),
        columns,
    })
}

pub fn write_compare(report: &CompareReport, out_dir: &Path) -> Result<()> {
    write_atomic(&out_dir.join("compare.txt"), report.to_table().as_bytes())?;
    write_atomic(&out_dir.join("compare.json"), &report.to_json()?)
}

/// Writes a synthetic dataset as `data.csv` plus its true noise level as
/// `noise.csv`.
pub fn cmd_synth(spec: &SyntheticSpec, out_dir: &Path) -> Result<Dataset> {
    let (data, sigma) = generate_synthetic(spec)?;
    crate::data::write_csv(&data, &out_dir.join("data.csv"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "sigma"])?;
    for (i, s) in sigma.iter().enumerate() {
        w.write_record(&[i.to_string(), s.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| UqError::Io(e.into_error()))?;
    write_atomic(&out_dir.join("noise.csv"), &bytes)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureLayout;

    fn tiny_config(method: Method) -> RunConfig {
        let mut cfg = RunConfig::new(
            DataSource::Synthetic(SyntheticSpec {
                n: 300,
                seed: 5,
                ..SyntheticSpec::default()
            }),
            method,
        );
        cfg.members = Some(if method == Method::McDropout { 8 } else { 3 });
        cfg.model = ModelSpec {
            hidden: vec![8],
            dropout: if method == Method::McDropout { 0.2 } else { 0.0 },
        };
        cfg.train.max_epochs = 5;
        cfg.train.patience = 5;
        cfg.ranking.q = 10;
        cfg.calibration.levels = 20;
        cfg.calibration.bins = 5;
        cfg
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = tiny_config(Method::Ensemble);
        let back: RunConfig = serde_json::from_slice(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let minimal: RunConfig =
            serde_json::from_str(r#"{"data": {"csv": {"path": "d.csv", "target": "y"}}, "method": "bootstrap"}"#)
                .unwrap();
        assert_eq!(minimal.members(), 15);
        assert_eq!(minimal.split, SplitSpec::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"data": {"synthetic": {}}, "method": "x"}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = tiny_config(Method::Ensemble);
        cfg.members = Some(1);
        assert!(matches!(cfg.validate(), Err(UqError::Config(_))));
        let mut cfg = tiny_config(Method::McDropout);
        cfg.model.dropout = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(Method::Ensemble);
        cfg.member_seeds = Some(vec![1, 1, 2]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lineage_ignores_split_strategy_only() {
        let a = tiny_config(Method::Ensemble);
        let mut b = a.clone();
        b.split.strategy = SplitStrategy::Group;
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.lineage_hash("d").unwrap(), b.lineage_hash("d").unwrap());
        b.seed = 9;
        assert_ne!(a.lineage_hash("d").unwrap(), b.lineage_hash("d").unwrap());
        assert_ne!(a.lineage_hash("d").unwrap(), a.lineage_hash("e").unwrap());
    }

    #[test]
    fn ratio_rules() {
        assert_eq!(ratio(Cell::of(2.0), Cell::of(2.0)), Cell::of(1.0));
        assert_eq!(ratio(Cell::of(0.0), Cell::of(0.0)), Cell::of(1.0));
        assert_eq!(ratio(Cell::of(3.0), Cell::of(2.0)), Cell::of(1.5));
        assert_eq!(ratio(Cell::of(1.0), Cell::of(0.0)).flag, Some(Flag::Infinite));
        assert_eq!(ratio(Cell::of(f64::INFINITY), Cell::of(2.0)).flag, Some(Flag::Infinite));
        assert_eq!(
            ratio(Cell::flagged(Flag::Degenerate), Cell::of(2.0)).flag,
            Some(Flag::Degenerate)
        );
        assert_eq!(Cell::of(f64::NAN).flag, Some(Flag::Degenerate));
    }

    #[test]
    fn train_evaluate_compare_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(Method::Ensemble);
        let run = cmd_train(&cfg, dir.path()).unwrap();
        assert_eq!(run.manifest.models.len(), 3);
        for m in &run.manifest.models {
            assert!(dir.path().join(&m.checkpoint).exists());
        }
        let eval = cmd_evaluate(&run.manifest_path, &[], &dir.path().join("eval")).unwrap();
        assert_eq!(eval.summary.columns.len(), 3);
        assert_eq!(eval.summary.domain, Domain::In);
        assert!(eval.summary.mae <= eval.summary.mean_member_mae + 1e-12);
        let back = MetricsSummary::read(&dir.path().join("eval/summary.json")).unwrap();
        assert_eq!(back, eval.summary);
        let mirrored = MetricsSummary {
            domain: Domain::Out,
            ..back.clone()
        };
        assert!(matches!(cmd_compare(&mirrored, &back), Err(UqError::Lineage(_))));
        let report = cmd_compare(&back, &mirrored).unwrap();
        assert_eq!(report.mae_ratio, Cell::of(1.0));
        for c in &report.columns {
            for cell in c.indices.cells() {
                assert_eq!(cell, Cell::of(1.0));
            }
        }
    }

    #[test]
    fn mc_dropout_run_and_selector() {
        let dir = tempfile::tempdir().unwrap();
        let run = cmd_train(&tiny_config(Method::McDropout), dir.path()).unwrap();
        assert_eq!(run.manifest.models.len(), 1);
        let eval = evaluate_run(&run.manifest_path, &[UncertaintyKind::Epi]).unwrap();
        assert_eq!(eval.summary.columns.len(), 1);
        assert_eq!(eval.members.members(), 8);
    }

    #[test]
    fn group_split_is_out_of_domain_and_shares_lineage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(Method::Bootstrap);
        cfg.data = DataSource::Synthetic(SyntheticSpec {
            n: 400,
            layout: FeatureLayout::Clusters {
                count: 20,
                half_width: 2.0,
                spread: 0.2,
            },
            ..SyntheticSpec::default()
        });
        let a = cmd_train(&cfg, &dir.path().join("in")).unwrap();
        cfg.split.strategy = SplitStrategy::Group;
        let b = cmd_train(&cfg, &dir.path().join("out")).unwrap();
        let ea = evaluate_run(&a.manifest_path, &[]).unwrap();
        let eb = evaluate_run(&b.manifest_path, &[]).unwrap();
        assert_eq!(eb.summary.domain, Domain::Out);
        cmd_compare(&ea.summary, &eb.summary).unwrap();
    }

    #[test]
    fn tampered_config_is_a_lineage_error() {
        let dir = tempfile::tempdir().unwrap();
        let run = cmd_train(&tiny_config(Method::Ensemble), dir.path()).unwrap();
        let p = dir.path().join("config.json");
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push(' ');
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            evaluate_run(&run.manifest_path, &[]),
            Err(UqError::Lineage(_))
        ));
    }
}
