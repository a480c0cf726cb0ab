//! Regression calibration: interval coverage, binned error calibration and
//! dispersion.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::normal::inverse_normal_cdf;
use crate::error::{ensure_finite, Result, UqError};

/// How the per-bin discrepancy in ENCE is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnceForm {
    /// `|MV - MSE| / MV` on variances.
    #[default]
    Variance,
    /// `|RMV - RMSE| / RMV` on standard deviations.
    RootMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Number of confidence levels for interval coverage.
    pub levels: usize,
    /// Number of equal-count bins for error-based calibration.
    pub bins: usize,
    #[serde(default)]
    pub ence_form: EnceForm,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            levels: 100,
            bins: 10,
            ence_form: EnceForm::Variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub levels: Vec<f64>,
    pub empirical_coverage: Vec<f64>,
}

/// Summary of a coverage curve's distance from the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationErrors {
    /// `sum_k |coverage_k - p_k|` (unnormalized).
    pub auce: f64,
    /// `max_k |coverage_k - p_k|`.
    pub mce: f64,
    /// `auce / K`.
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCalibrationBins {
    pub mean_variance: Vec<f64>,
    pub mse: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Levels `p_k = k / (K + 1)`, `k = 1..K`.
pub fn confidence_levels(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / (k + 1) as f64).collect()
}

fn check_inputs(pred_mean: &[f64], pred_var: &[f64], targets: &[f64], allow_zero: bool) -> Result<()> {
    let n = pred_mean.len();
    for len in [pred_var.len(), targets.len()] {
        if len != n {
            return Err(UqError::Dimension {
                expected: n,
                actual: len,
            });
        }
    }
    if n == 0 {
        return Err(UqError::Input("no predictions".into()));
    }
    ensure_finite(pred_mean, "pred_mean")?;
    ensure_finite(pred_var, "pred_var")?;
    ensure_finite(targets, "targets")?;
    let bad = if allow_zero {
        pred_var.iter().position(|&v| v < 0.0)
    } else {
        pred_var.iter().position(|&v| v <= 0.0)
    };
    if let Some(i) = bad {
        return Err(UqError::Input(format!(
            "pred_var[{i}] = {} is not positive",
            pred_var[i]
        )));
    }
    Ok(())
}

/// Fraction of targets inside the symmetric Gaussian interval of each level.
pub fn coverage_curve(pred_mean: &[f64], pred_var: &[f64], targets: &[f64], levels: usize) -> Result<CoverageCurve> {
    check_inputs(pred_mean, pred_var, targets, false)?;
    coverage_unchecked(pred_mean, pred_var, targets, levels)
}

/// As [`coverage_curve`], but zero variances are accepted (their interval
/// collapses to the point prediction).
pub(crate) fn coverage_allow_degenerate(
    pred_mean: &[f64],
    pred_var: &[f64],
    targets: &[f64],
    levels: usize,
) -> Result<CoverageCurve> {
    check_inputs(pred_mean, pred_var, targets, true)?;
    coverage_unchecked(pred_mean, pred_var, targets, levels)
}

fn coverage_unchecked(pred_mean: &[f64], pred_var: &[f64], targets: &[f64], levels: usize) -> Result<CoverageCurve> {
    if levels < 2 {
        return Err(UqError::Config(format!(
            "need at least 2 confidence levels, got {levels}"
        )));
    }
    let ps = confidence_levels(levels);
    let coverage = ps
        .iter()
        .map(|&p| fraction_inside(pred_mean, pred_var, targets, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageCurve {
        levels: ps,
        empirical_coverage: coverage,
    })
}

/// Empirical coverage of the central interval with probability `p`.
pub fn coverage_at(pred_mean: &[f64], pred_var: &[f64], targets: &[f64], p: f64) -> Result<f64> {
    check_inputs(pred_mean, pred_var, targets, false)?;
    fraction_inside(pred_mean, pred_var, targets, p)
}

pub(crate) fn coverage_at_allow_degenerate(
    pred_mean: &[f64],
    pred_var: &[f64],
    targets: &[f64],
    p: f64,
) -> Result<f64> {
    check_inputs(pred_mean, pred_var, targets, true)?;
    fraction_inside(pred_mean, pred_var, targets, p)
}

fn fraction_inside(pred_mean: &[f64], pred_var: &[f64], targets: &[f64], p: f64) -> Result<f64> {
    let z = inverse_normal_cdf((1.0 + p) / 2.0)?;
    let inside = pred_mean
        .iter()
        .zip(pred_var)
        .zip(targets)
        .filter(|((m, v), y)| (*y - *m).abs() <= z * v.sqrt())
        .count();
    Ok(inside as f64 / pred_mean.len() as f64)
}

pub fn auce_mce(curve: &CoverageCurve) -> CalibrationErrors {
    let gaps = curve
        .empirical_coverage
        .iter()
        .zip(&curve.levels)
        .map(|(c, p)| (c - p).abs());
    let (mut auce, mut mce) = (0.0, 0.0f64);
    for g in gaps {
        auce += g;
        mce = mce.max(g);
    }
    CalibrationErrors {
        auce,
        mce,
        ece: auce / curve.levels.len() as f64,
    }
}

/// Equal-count bins ordered by predicted variance; returns per-bin statistics
/// and the expected normalized calibration error.
pub fn error_calibration(
    pred_mean: &[f64],
    pred_var: &[f64],
    targets: &[f64],
    bins: usize,
    form: EnceForm,
) -> Result<(ErrorCalibrationBins, f64)> {
    check_inputs(pred_mean, pred_var, targets, true)?;
    let n = pred_mean.len();
    if bins < 2 || bins * 2 > n {
        return Err(UqError::Config(format!("{bins} bins need 2 <= K <= N/2 with N = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pred_var[a].total_cmp(&pred_var[b]));

    let (base, extra) = (n / bins, n % bins);
    let mut out = ErrorCalibrationBins {
        mean_variance: Vec::with_capacity(bins),
        mse: Vec::with_capacity(bins),
        counts: Vec::with_capacity(bins),
    };
    let mut start = 0;
    for k in 0..bins {
        let len = base + usize::from(k < extra);
        let rows = &order[start..start + len];
        start += len;
        let mv = rows.iter().map(|&i| pred_var[i]).sum::<f64>() / len as f64;
        let mse = rows.iter().map(|&i| (targets[i] - pred_mean[i]).powi(2)).sum::<f64>() / len as f64;
        out.mean_variance.push(mv);
        out.mse.push(mse);
        out.counts.push(len);
    }
    let ence = ence_of(&out, form)?;
    Ok((out, ence))
}

pub fn ence_of(bins: &ErrorCalibrationBins, form: EnceForm) -> Result<f64> {
    let mut total = 0.0;
    for (k, (&mv, &mse)) in bins.mean_variance.iter().zip(&bins.mse).enumerate() {
        if mv <= 0.0 {
            return Err(UqError::DegenerateUncertainty(format!(
                "bin {k} has zero mean predicted variance"
            )));
        }
        total += match form {
            EnceForm::Variance => (mv - mse).abs() / mv,
            EnceForm::RootMean => (mv.sqrt() - mse.sqrt()).abs() / mv.sqrt(),
        };
    }
    Ok(total / bins.mean_variance.len() as f64)
}

/// Coefficient of variation (population std over mean) of predicted
/// standard deviations.
pub fn dispersion(uncertainty_std: &[f64]) -> Result<f64> {
    if uncertainty_std.is_empty() {
        return Err(UqError::Input("no uncertainties".into()));
    }
    ensure_finite(uncertainty_std, "uncertainty_std")?;
    if uncertainty_std.iter().any(|&s| s < 0.0) {
        return Err(UqError::Input("standard deviations must be non-negative".into()));
    }
    let n = uncertainty_std.len() as f64;
    let mean = uncertainty_std.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(UqError::DegenerateUncertainty("mean uncertainty is zero".into()));
    }
    let var = uncertainty_std.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// CSV `level, empirical_coverage, abs_gap`.
pub fn write_coverage_csv<W: Write>(out: W, curve: &CoverageCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "empirical_coverage", "abs_gap"])?;
    for (p, c) in curve.levels.iter().zip(&curve.empirical_coverage) {
        w.write_record(&[p.to_string(), c.to_string(), (c - p).abs().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `bin_index, mean_variance, mse, count`.
pub fn write_error_bins_csv<W: Write>(out: W, bins: &ErrorCalibrationBins) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_index", "mean_variance", "mse", "count"])?;
    for (k, ((mv, mse), n)) in bins.mean_variance.iter().zip(&bins.mse).zip(&bins.counts).enumerate() {
        w.write_record(&[k.to_string(), mv.to_string(), mse.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
