//! Confidence curves and the ranking indices derived from them.
//!
//! A confidence curve ranks predictions by uncertainty and reports the error
//! of progressively smaller, more confident subsets. Point `j` (1-based,
//! `j = 1..q-1`) is the error over the `ceil(N * (q - j + 1) / q)` most
//! confident predictions, so the first point is the full-set error and the
//! last covers the most confident `ceil(2N / q)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, UqError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    Mae,
    Rmse,
}

impl ErrorMetric {
    /// Error over a set of absolute errors.
    pub fn of(&self, abs_errors: impl IntoIterator<Item = f64>) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for e in abs_errors {
            sum += match self {
                ErrorMetric::Mae => e,
                ErrorMetric::Rmse => e * e,
            };
            n += 1;
        }
        let mean = sum / n as f64;
        match self {
            ErrorMetric::Mae => mean,
            ErrorMetric::Rmse => mean.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingConfig {
    /// Number of quantiles (100 = percentiles).
    pub q: usize,
    pub error_metric: ErrorMetric,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            q: 100,
            error_metric: ErrorMetric::Mae,
        }
    }
}

impl RankingConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.q < 2 {
            return Err(UqError::Config(format!("q must be at least 2, got {}", self.q)));
        }
        if n < self.q {
            return Err(UqError::Input(format!("{n} predictions are fewer than q = {}", self.q)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    /// `h[j - 1]` is point `j`, for `j = 1..q-1`.
    pub h: Vec<f64>,
    /// Error on the complete prediction set.
    pub full_error: f64,
    /// Subset size behind each point of `h`.
    pub counts: Vec<usize>,
    pub q: usize,
    pub error_metric: ErrorMetric,
}

impl ConfidenceCurve {
    /// The point sequence `(full_error, h_1, ..., h_{q-1})`.
    pub fn sequence(&self) -> Vec<f64> {
        std::iter::once(self.full_error).chain(self.h.iter().copied()).collect()
    }

    pub fn last(&self) -> f64 {
        *self.h.last().expect("curve has at least one point")
    }

    fn n(&self) -> usize {
        self.counts[0]
    }
}

/// Number of predictions kept at point `j` (1-based).
pub fn retained_count(n: usize, q: usize, j: usize) -> usize {
    (n * (q - j + 1)).div_ceil(q)
}

pub fn confidence_curve(abs_errors: &[f64], uncertainty: &[f64], config: &RankingConfig) -> Result<ConfidenceCurve> {
    if abs_errors.len() != uncertainty.len() {
        return Err(UqError::Dimension {
            expected: abs_errors.len(),
            actual: uncertainty.len(),
        });
    }
    ensure_finite(uncertainty, "uncertainty")?;
    check_errors(abs_errors)?;
    config.validate(abs_errors.len())?;
    let mut order: Vec<usize> = (0..abs_errors.len()).collect();
    // Stable: ties keep their original index order.
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]));
    Ok(curve_from_order(abs_errors, &order, config))
}

/// Confidence curve under the oracle ranking (true absolute errors).
pub fn oracle_curve(abs_errors: &[f64], config: &RankingConfig) -> Result<ConfidenceCurve> {
    confidence_curve(abs_errors, abs_errors, config)
}

fn check_errors(abs_errors: &[f64]) -> Result<()> {
    ensure_finite(abs_errors, "abs_errors")?;
    if let Some(i) = abs_errors.iter().position(|&e| e < 0.0) {
        return Err(UqError::Input(format!("abs_errors[{i}] is negative")));
    }
    Ok(())
}

fn curve_from_order(abs_errors: &[f64], order: &[usize], config: &RankingConfig) -> ConfidenceCurve {
    let n = abs_errors.len();
    let q = config.q;
    let metric = config.error_metric;
    let counts: Vec<usize> = (1..q).map(|j| retained_count(n, q, j)).collect();
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_by(|&a, &b| abs_errors[a].total_cmp(&abs_errors[b]));
    // Each subset is summed in ascending value order. Rounding is then a
    // function of the subset alone, and a curve point can never fall below
    // the oracle point of the same size.
    let error_of = |k: usize| metric.of(by_value.iter().filter(|&&i| rank[i] < k).map(|&i| abs_errors[i]));
    let h: Vec<f64> = counts.iter().map(|&k| error_of(k)).collect();
    ConfidenceCurve {
        full_error: error_of(n),
        h,
        counts,
        q,
        error_metric: metric,
    }
}

/// Area under the confidence-oracle gap: `sum_j (h_j - h_j^oracle)`.
pub fn auco(curve: &ConfidenceCurve, oracle: &ConfidenceCurve) -> Result<f64> {
    if curve.q != oracle.q || curve.error_metric != oracle.error_metric || curve.n() != oracle.n() {
        return Err(UqError::Input(
            "curve and oracle were built with different settings".into(),
        ));
    }
    Ok(curve.h.iter().zip(&oracle.h).map(|(a, b)| a - b).sum())
}

/// `h_1 / h_{q-1}`. A zero denominator yields `+inf` (or `1` when the whole
/// curve is zero).
pub fn error_drop(curve: &ConfidenceCurve) -> f64 {
    let (first, last) = (curve.h[0], curve.last());
    if last == 0.0 {
        return if first == 0.0 { 1.0 } else { f64::INFINITY };
    }
    first / last
}

/// Fraction of non-increasing steps over `(full_error, h_1, ..., h_{q-1})`.
pub fn decrease_ratio(curve: &ConfidenceCurve) -> f64 {
    decrease_ratio_of(&curve.sequence())
}

/// Fraction of consecutive pairs `(a, b)` in `seq` with `a >= b`.
pub fn decrease_ratio_of(seq: &[f64]) -> f64 {
    if seq.len() < 2 {
        return 1.0;
    }
    let ok = seq.windows(2).filter(|w| w[0] >= w[1]).count();
    ok as f64 / (seq.len() - 1) as f64
}

/// CSV with columns `quantile_index, retained_fraction, error, oracle_error,
/// confidence_oracle_gap`.
pub fn write_curve_csv<W: Write>(out: W, curve: &ConfidenceCurve, oracle: &ConfidenceCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "quantile_index",
        "retained_fraction",
        "error",
        "oracle_error",
        "confidence_oracle_gap",
    ])?;
    let n = curve.n() as f64;
    for (j, ((h, o), k)) in curve.h.iter().zip(&oracle.h).zip(&curve.counts).enumerate() {
        w.write_record(&[
            (j + 1).to_string(),
            (*k as f64 / n).to_string(),
            h.to_string(),
            o.to_string(),
            (h - o).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
