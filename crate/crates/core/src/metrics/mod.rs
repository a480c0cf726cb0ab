//! Uncertainty evaluation metrics.

mod calibration;
mod normal;
mod ranking;

pub use calibration::{
    auce_mce, confidence_levels, coverage_at, coverage_curve, dispersion, ence_of, error_calibration,
    write_coverage_csv, write_error_bins_csv, CalibrationConfig, CalibrationErrors, CoverageCurve, EnceForm,
    ErrorCalibrationBins,
};
pub(crate) use calibration::{coverage_allow_degenerate, coverage_at_allow_degenerate};
pub use normal::{inverse_normal_cdf, normal_cdf};
pub use ranking::{
    auco, confidence_curve, decrease_ratio, decrease_ratio_of, error_drop, oracle_curve, retained_count,
    write_curve_csv, ConfidenceCurve, ErrorMetric, RankingConfig,
};
