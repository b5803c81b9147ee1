use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

/// Student-disjoint train/validation/test partition for one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub fold: usize,
}

/// Shuffles students with `seed`, rotates the order by `fold · n / 5` and
/// cuts it into consecutive train/validation/test runs. Across the five folds
/// the test runs tile the shuffled order, and so do validation runs as long
/// as the validation share is at most one fifth.
pub fn split(students: &[String], ratios: SplitRatios, fold: usize, seed: u64) -> Result<DatasetSplit> {
    let total = ratios.train + ratios.validation + ratios.test;
    if (total - 1.0).abs() > 1e-9 || [ratios.train, ratios.validation, ratios.test].iter().any(|&r| r < 0.0) {
        return Err(Error::invalid("ratios", format!("must be non-negative and sum to 1, got {total}")));
    }
    if fold >= FOLDS {
        return Err(Error::invalid("fold", format!("must be below {FOLDS}, got {fold}")));
    }
    let mut order: Vec<String> = students.to_vec();
    order.sort();
    order.dedup();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    order.rotate_left(fold * n / FOLDS);

    let n_train = (ratios.train * n as f64).round() as usize;
    let n_val = ((ratios.validation * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    let out = DatasetSplit {
        train: order,
        validation,
        test,
        fold,
    };
    for (name, part) in [("train", &out.train), ("validation", &out.validation), ("test", &out.test)] {
        if part.is_empty() {
            return Err(Error::invalid("split", format!("{name} partition is empty ({n} students)")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn students(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn ten_students_split_seven_one_two() {
        let s = split(&students(10), SplitRatios::default(), 0, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn same_seed_same_split() {
        let a = split(&students(37), SplitRatios::default(), 2, 9).unwrap();
        let b = split(&students(37), SplitRatios::default(), 2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let all = students(53);
        let s = split(&all, SplitRatios::default(), 3, 4).unwrap();
        let mut seen = HashSet::new();
        for id in s.train.iter().chain(&s.validation).chain(&s.test) {
            assert!(seen.insert(id.clone()), "{id} appears twice");
        }
        assert_eq!(seen.len(), all.len());
    }

    #[test]
    fn validation_sets_across_folds_are_disjoint() {
        for n in [10, 12, 47, 100] {
            let all = students(n);
            let folds: Vec<HashSet<String>> = (0..FOLDS)
                .map(|f| split(&all, SplitRatios::default(), f, 5).unwrap().validation.into_iter().collect())
                .collect();
            for i in 0..FOLDS {
                for j in i + 1..FOLDS {
                    assert!(folds[i].is_disjoint(&folds[j]), "n={n} folds {i},{j}");
                }
            }
        }
    }

    #[test]
    fn too_few_students_is_an_error() {
        assert!(split(&students(3), SplitRatios::default(), 0, 0).is_err());
        assert!(split(&students(10), SplitRatios::default(), 5, 0).is_err());
        let bad = SplitRatios {
            train: 0.5,
            validation: 0.1,
            test: 0.1,
        };
        assert!(split(&students(10), bad, 0, 0).is_err());
    }
}
