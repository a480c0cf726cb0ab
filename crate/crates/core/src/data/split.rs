use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, UqError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    /// Seeded shuffle of rows (in-domain evaluation).
    Random,
    /// Whole groups assigned to a single part (out-of-domain evaluation).
    Group,
}

impl std::str::FromStr for SplitStrategy {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "group" => Ok(Self::Group),
            other => Err(UqError::Config(format!("unknown split strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub strategy: SplitStrategy,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            strategy: SplitStrategy::Random,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(UqError::Config(format!("split fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(UqError::Config(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }

    /// Target part sizes for `n` rows: train and validation rounded, test takes
    /// the remainder.
    pub fn target_counts(&self, n: usize) -> [usize; 3] {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train.min(n));
        [train.min(n), val, n - train.min(n) - val]
    }
}

/// Row indices of the three parts, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

const PART_NAMES: [&str; 3] = ["train", "validation", "test"];

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = dataset.len();
    let targets = spec.target_counts(n);
    let mut rng = rng::seeded(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();

    match spec.strategy {
        SplitStrategy::Random => {
            if let Some(p) = targets.iter().position(|&c| c == 0) {
                return Err(UqError::InfeasibleSplit(format!(
                    "{n} rows leave the {} part empty",
                    PART_NAMES[p]
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            parts[0] = order[..targets[0]].to_vec();
            parts[1] = order[targets[0]..targets[0] + targets[1]].to_vec();
            parts[2] = order[targets[0] + targets[1]..].to_vec();
        }
        SplitStrategy::Group => {
            let ids = dataset
                .group_ids()
                .ok_or_else(|| UqError::Config("group split requires group labels".into()))?;
            let n_groups = ids.iter().max().map_or(0, |m| m + 1);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
            for (row, &g) in ids.iter().enumerate() {
                members[g].push(row);
            }
            let mut order: Vec<usize> = (0..n_groups).filter(|&g| !members[g].is_empty()).collect();
            // Shuffle, then a stable sort: equal-size groups stay in shuffled order.
            order.shuffle(&mut rng);
            order.sort_by_key(|&g| std::cmp::Reverse(members[g].len()));
            let mut fill = [0usize; 3];
            for g in order {
                let part = (0..3)
                    .max_by_key(|&p| (targets[p] as i64 - fill[p] as i64, std::cmp::Reverse(p)))
                    .unwrap();
                fill[part] += members[g].len();
                parts[part].extend_from_slice(&members[g]);
            }
            if let Some(p) = parts.iter().position(Vec::is_empty) {
                let largest = members.iter().map(Vec::len).max().unwrap_or(0);
                return Err(UqError::InfeasibleSplit(format!(
                    "group assignment leaves the {} part empty ({} groups, largest holds {largest} of {n} rows)",
                    PART_NAMES[p], n_groups
                )));
            }
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::seeded(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize, groups: Option<Vec<usize>>) -> Dataset {
        Dataset::new(
            (0..n).map(|i| i as f64).collect(),
            1,
            vec![0.0; n],
            groups,
            vec!["x".into()],
        )
        .unwrap()
    }

    fn assert_partition(s: &Split, n: usize) {
        let mut all: Vec<usize> = s.parts().iter().flat_map(|p| p.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn random_sizes_for_ten_rows() {
        let s = split(&dataset(10, None), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_partition(&s, 10);
    }

    #[test]
    fn same_seed_same_split() {
        let spec = SplitSpec {
            seed: 99,
            ..SplitSpec::default()
        };
        let d = dataset(500, Some((0..500).map(|i| i % 37).collect()));
        assert_eq!(split(&d, &spec).unwrap(), split(&d, &spec).unwrap());
        let g = SplitSpec {
            strategy: SplitStrategy::Group,
            ..spec
        };
        assert_eq!(split(&d, &g).unwrap(), split(&d, &g).unwrap());
    }

    // Frozen output: guards cross-platform/cross-version reproducibility of
    // the seeded shuffle.
    #[test]
    fn random_split_is_frozen() {
        let s = split(
            &dataset(10, None),
            &SplitSpec {
                seed: 7,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert_eq!(s.train, vec![0, 1, 2, 5, 6, 7, 8, 9]);
        assert_eq!(s.val, vec![3]);
        assert_eq!(s.test, vec![4]);
        assert_eq!(bootstrap_indices(6, 7), vec![0, 0, 1, 1, 1, 4]);
    }

    #[test]
    fn group_split_requires_groups() {
        let spec = SplitSpec {
            strategy: SplitStrategy::Group,
            ..SplitSpec::default()
        };
        assert!(matches!(split(&dataset(10, None), &spec), Err(UqError::Config(_))));
    }

    #[test]
    fn one_dominant_group_is_infeasible() {
        let mut g = vec![0; 20];
        g[19] = 1;
        let spec = SplitSpec {
            strategy: SplitStrategy::Group,
            ..SplitSpec::default()
        };
        assert!(matches!(
            split(&dataset(20, Some(g)), &spec),
            Err(UqError::InfeasibleSplit(_))
        ));
    }

    #[test]
    fn rejects_bad_fractions() {
        let bad = SplitSpec {
            train: 0.7,
            ..SplitSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(split(&dataset(2, None), &SplitSpec::default()).is_err());
    }

    #[test]
    fn bootstrap_basics() {
        assert_eq!(bootstrap_indices(1, 5), vec![0]);
        for n in [1, 2, 17, 1000] {
            let b = bootstrap_indices(n, 3);
            assert_eq!(b.len(), n);
            assert!(b.iter().all(|&i| i < n));
        }
    }

    proptest! {
        #[test]
        fn group_split_is_exclusive_partition(
            sizes in proptest::collection::vec(1usize..12, 12..60),
            seed in any::<u64>(),
        ) {
            let groups: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect();
            let n = groups.len();
            let d = dataset(n, Some(groups.clone()));
            let spec = SplitSpec { strategy: SplitStrategy::Group, seed, ..SplitSpec::default() };
            let s = split(&d, &spec).unwrap();
            assert_partition(&s, n);
            let mut owner = vec![None; sizes.len()];
            for (p, part) in s.parts().iter().enumerate() {
                for &row in part.iter() {
                    let g = groups[row];
                    prop_assert!(owner[g].is_none() || owner[g] == Some(p));
                    owner[g] = Some(p);
                }
            }
            let max_group = *sizes.iter().max().unwrap();
            for (part, target) in s.parts().iter().zip(spec.target_counts(n)) {
                prop_assert!((part.len() as i64 - target as i64).unsigned_abs() as usize <= max_group);
            }
        }

        #[test]
        fn random_split_partitions(n in 10usize..400, seed in any::<u64>()) {
            let s = split(&dataset(n, None), &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
            assert_partition(&s, n);
        }
    }
}
