//! Shared fixtures for the benchmarks.

use rand::Rng;
use uqeval::estimators::MemberOutputs;
use uqeval::rng::seeded;

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// `m` members over `n` points with means in `[-1, 1]` and variances in `[0.01, 1]`.
pub fn member_outputs(m: usize, n: usize, seed: u64) -> MemberOutputs {
    let means = (0..m as u64).map(|i| uniform(n, -1.0, 1.0, seed + 2 * i)).collect();
    let vars = (0..m as u64).map(|i| uniform(n, 0.01, 1.0, seed + 2 * i + 1)).collect();
    MemberOutputs::new(means, vars).expect("fixture outputs are valid")
}

/// Predictive means, variances and targets drawn so the variances are
/// roughly calibrated.
pub fn predictions(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mean = uniform(n, -1.0, 1.0, seed);
    let var = uniform(n, 0.05, 1.0, seed + 1);
    let noise = uniform(n, -1.0, 1.0, seed + 2);
    let targets = mean
        .iter()
        .zip(&var)
        .zip(&noise)
        .map(|((m, v), z)| m + 3f64.sqrt() * v.sqrt() * z)
        .collect();
    (mean, var, targets)
}
