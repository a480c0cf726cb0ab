//! Synthetic regression data with known, input-dependent noise.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, UqError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFunction {
    /// `sum_j sin(frequency * x_j)`
    SumOfSines { frequency: f64 },
    /// `sum_j (0.5 * x_j^2 - x_j)`
    Polynomial,
}

impl MeanFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            MeanFunction::SumOfSines { frequency } => x.iter().map(|v| (frequency * v).sin()).sum(),
            MeanFunction::Polynomial => x.iter().map(|v| 0.5 * v * v - v).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFunction {
    Constant {
        sigma: f64,
    },
    /// `base + slope * ||x||_2`
    Affine {
        base: f64,
        slope: f64,
    },
}

impl NoiseFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            NoiseFunction::Constant { sigma } => sigma,
            NoiseFunction::Affine { base, slope } => base + slope * x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseFunction::Constant { sigma } => sigma > 0.0 && sigma.is_finite(),
            NoiseFunction::Affine { base, slope } => {
                base > 0.0 && slope >= 0.0 && base.is_finite() && slope.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(UqError::Config(format!(
                "noise function must be positive everywhere: {self:?}"
            )))
        }
    }
}

/// How feature vectors are placed in input space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureLayout {
    /// Uniform in `[-half_width, half_width]^d`; no group labels.
    Uniform { half_width: f64 },
    /// `count` Gaussian clusters with centers uniform in
    /// `[-half_width, half_width]^d`; the cluster index is the group label.
    Clusters { count: usize, half_width: f64, spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub mean: MeanFunction,
    pub noise: NoiseFunction,
    pub layout: FeatureLayout,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 5000,
            d: 2,
            mean: MeanFunction::SumOfSines { frequency: 1.5 },
            noise: NoiseFunction::Affine { base: 0.05, slope: 0.5 },
            layout: FeatureLayout::Uniform { half_width: 1.5 },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(UqError::Config("synthetic n and d must be positive".into()));
        }
        self.noise.validate()?;
        match self.layout {
            FeatureLayout::Uniform { half_width } if half_width > 0.0 => Ok(()),
            FeatureLayout::Clusters {
                count,
                half_width,
                spread,
            } if count > 0 && half_width > 0.0 && spread >= 0.0 => Ok(()),
            other => Err(UqError::Config(format!("invalid feature layout {other:?}"))),
        }
    }
}

/// Samples `y = f(x) + eps`, `eps ~ N(0, sigma(x)^2)`; also returns `sigma(x)`
/// per row.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let d = spec.d;
    let mut features = Vec::with_capacity(spec.n * d);
    let mut groups = Vec::new();
    match spec.layout {
        FeatureLayout::Uniform { half_width } => {
            for _ in 0..spec.n * d {
                features.push(rng.random_range(-half_width..half_width));
            }
        }
        FeatureLayout::Clusters {
            count,
            half_width,
            spread,
        } => {
            let centers: Vec<f64> = (0..count * d)
                .map(|_| rng.random_range(-half_width..half_width))
                .collect();
            for _ in 0..spec.n {
                let c = rng.random_range(0..count);
                groups.push(c);
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push(centers[c * d + j] + spread * z);
                }
            }
        }
    }
    let mut targets = Vec::with_capacity(spec.n);
    let mut sigma = Vec::with_capacity(spec.n);
    for x in features.chunks_exact(d) {
        let s = spec.noise.eval(x);
        let z: f64 = StandardNormal.sample(&mut rng);
        targets.push(spec.mean.eval(x) + s * z);
        sigma.push(s);
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    let groups = matches!(spec.layout, FeatureLayout::Clusters { .. }).then_some(groups);
    Ok((Dataset::new(features, d, targets, groups, names)?, sigma))
}
