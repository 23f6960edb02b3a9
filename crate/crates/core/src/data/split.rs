//! Seeded train/validation/test partitions of a pool.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Five equal partitions of a seeded shuffle; fold `k` tests on partition
/// `k`, validates on `k+1 (mod 5)` and trains on the remaining three.
pub fn five_fold_indices(n: usize, fold: usize, seed: u64) -> Result<SplitIndices> {
    if n < 5 {
        return Err(Error::Config(format!(
            "five-fold split needs at least 5 examples, got {n}"
        )));
    }
    if fold >= 5 {
        return Err(Error::Range {
            what: "fold",
            index: fold,
            len: 5,
        });
    }
    let order = shuffled(n, seed);
    let (base, extra) = (n / 5, n % 5);
    let mut parts = Vec::with_capacity(5);
    let mut start = 0;
    for p in 0..5 {
        let len = base + usize::from(p < extra);
        parts.push(order[start..start + len].to_vec());
        start += len;
    }
    let valid_part = (fold + 1) % 5;
    let train = (0..5)
        .filter(|&p| p != fold && p != valid_part)
        .flat_map(|p| parts[p].iter().copied())
        .collect();
    Ok(SplitIndices {
        train,
        valid: parts[valid_part].clone(),
        test: parts[fold].clone(),
    })
}

/// 70/10/20 split by contiguous slices of a seeded shuffle. Validation and
/// test sizes round down; training takes the remainder.
pub fn ratio_indices(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(Error::Config(format!(
            "ratio split needs at least 10 examples, got {n}"
        )));
    }
    let order = shuffled(n, seed);
    let n_valid = n / 10;
    let n_test = n / 5;
    let n_train = n - n_valid - n_test;
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_train + n_valid].to_vec(),
        test: order[n_train + n_valid..].to_vec(),
    })
}

fn gather<T: Clone>(pool: &[T], idx: SplitIndices) -> Split<T> {
    let pick = |v: Vec<usize>| v.into_iter().map(|i| pool[i].clone()).collect();
    Split {
        train: pick(idx.train),
        valid: pick(idx.valid),
        test: pick(idx.test),
    }
}

pub fn five_fold_split<T: Clone>(pool: &[T], fold: usize, seed: u64) -> Result<Split<T>> {
    Ok(gather(pool, five_fold_indices(pool.len(), fold, seed)?))
}

pub fn ratio_split<T: Clone>(pool: &[T], seed: u64) -> Result<Split<T>> {
    Ok(gather(pool, ratio_indices(pool.len(), seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn five_fold_sizes_for_two_thousand() {
        let s = five_fold_indices(2000, 0, 1).unwrap();
        assert_eq!(
            (s.train.len(), s.valid.len(), s.test.len()),
            (1200, 400, 400)
        );
    }

    #[test]
    fn ratio_sizes_for_two_thousand() {
        let s = ratio_indices(2000, 1).unwrap();
        assert_eq!(
            (s.train.len(), s.valid.len(), s.test.len()),
            (1400, 200, 400)
        );
        assert_eq!(s, ratio_indices(2000, 1).unwrap());
    }

    #[test]
    fn too_small_pools() {
        assert!(matches!(five_fold_indices(4, 0, 0), Err(Error::Config(_))));
        assert!(matches!(ratio_indices(9, 0), Err(Error::Config(_))));
        assert!(five_fold_indices(10, 5, 0).is_err());
    }

    #[test]
    fn generic_split_clones_items() {
        let pool: Vec<u32> = (100..120).collect();
        let s = five_fold_split(&pool, 2, 9).unwrap();
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), 20);
        assert!(s.test.iter().all(|v| (100..120).contains(v)));
    }

    proptest! {
        #[test]
        fn five_fold_is_a_partition_and_tests_cover(n in 5usize..300, seed in any::<u64>()) {
            let mut tests = BTreeSet::new();
            for fold in 0..5 {
                let s = five_fold_indices(n, fold, seed).unwrap();
                let all: BTreeSet<_> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
                prop_assert_eq!(all.len(), n);
                prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), n);
                for &t in &s.test {
                    prop_assert!(tests.insert(t), "test sets overlap");
                }
            }
            prop_assert_eq!(tests.len(), n);
        }

        #[test]
        fn ratio_is_a_partition(n in 10usize..500, seed in any::<u64>()) {
            let s = ratio_indices(n, seed).unwrap();
            let all: BTreeSet<_> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            prop_assert_eq!(all, (0..n).collect::<BTreeSet<_>>());
            prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), n);
        }
    }
}
