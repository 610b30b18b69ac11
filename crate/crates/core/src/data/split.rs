use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InteractionDataset;
use crate::error::{LatticeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Warm,
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Valid,
    Test,
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Partition::Valid => "valid",
            Partition::Test => "test",
        })
    }
}

impl std::str::FromStr for Partition {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Partition::Valid),
            "test" => Ok(Partition::Test),
            _ => Err(LatticeError::InvalidArgument(format!(
                "partition must be `valid` or `test`, got `{}`",
                s
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: InteractionDataset,
    pub valid: InteractionDataset,
    pub test: InteractionDataset,
    pub mode: SplitMode,
    pub seed: u64,
    /// Sorted; empty for warm splits.
    pub cold_items: Vec<usize>,
}

impl Split {
    pub fn partition(&self, p: Partition) -> &InteractionDataset {
        match p {
            Partition::Valid => &self.valid,
            Partition::Test => &self.test,
        }
    }
}

/// Per-user 80/10/10 split: each user's positives are shuffled, then
/// `floor(n/10)` go to validation, `floor(n/10)` to test and the rest to train.
/// Users with fewer than three positives keep everything in train.
pub fn split_warm(ds: &InteractionDataset, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for u in 0..ds.num_users() {
        let mut items = ds.positives(u).to_vec();
        if items.len() < 3 {
            train.extend(items.into_iter().map(|i| (u, i)));
            continue;
        }
        items.shuffle(&mut rng);
        let n_eval = items.len() / 10;
        for (rank, i) in items.into_iter().enumerate() {
            if rank < n_eval {
                valid.push((u, i));
            } else if rank < 2 * n_eval {
                test.push((u, i));
            } else {
                train.push((u, i));
            }
        }
    }
    Ok(Split {
        train: ds.view(train)?,
        valid: ds.view(valid)?,
        test: ds.view(test)?,
        mode: SplitMode::Warm,
        seed,
        cold_items: Vec::new(),
    })
}

/// Samples `floor(fraction * num_items)` items without replacement; the first
/// half (rounded down) is the validation group and the rest the test group.
pub fn select_cold_items(
    num_items: usize,
    item_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(item_fraction > 0.0 && item_fraction < 1.0) {
        return Err(LatticeError::InvalidArgument(format!(
            "item_fraction must lie in (0, 1), got {}",
            item_fraction
        )));
    }
    let n_cold = (item_fraction * num_items as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cold = rand::seq::index::sample(&mut rng, num_items, n_cold).into_vec();
    let n_valid = n_cold / 2;
    let mut valid = cold[..n_valid].to_vec();
    let mut test = cold[n_valid..].to_vec();
    valid.sort_unstable();
    test.sort_unstable();
    Ok((valid, test))
}

/// Item cold-start split: every pair touching a sampled cold item leaves train
/// and follows its item into the validation or test group.
pub fn split_cold(ds: &InteractionDataset, item_fraction: f64, seed: u64) -> Result<Split> {
    let (valid_items, test_items) = select_cold_items(ds.num_items(), item_fraction, seed)?;
    let valid_set: HashSet<usize> = valid_items.iter().copied().collect();
    let test_set: HashSet<usize> = test_items.iter().copied().collect();
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for &(u, i) in ds.pairs() {
        if valid_set.contains(&i) {
            valid.push((u, i));
        } else if test_set.contains(&i) {
            test.push((u, i));
        } else {
            train.push((u, i));
        }
    }
    let mut cold_items = valid_items;
    cold_items.extend(test_items);
    cold_items.sort_unstable();
    Ok(Split {
        train: ds.view(train)?,
        valid: ds.view(valid)?,
        test: ds.view(test)?,
        mode: SplitMode::Cold,
        seed,
        cold_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_user(n: usize) -> InteractionDataset {
        InteractionDataset::from_pairs(1, n, (0..n).map(|i| (0, i))).unwrap()
    }

    fn sorted(ds: &InteractionDataset) -> Vec<(usize, usize)> {
        let mut p = ds.pairs().to_vec();
        p.sort_unstable();
        p
    }

    #[test]
    fn warm_ten_positives_split_eight_one_one() {
        let s = split_warm(&one_user(10), 7).unwrap();
        assert_eq!(
            (s.train.num_pairs(), s.valid.num_pairs(), s.test.num_pairs()),
            (8, 1, 1)
        );
    }

    #[test]
    fn warm_small_users_stay_in_train() {
        let s = split_warm(&one_user(2), 7).unwrap();
        assert_eq!(
            (s.train.num_pairs(), s.valid.num_pairs(), s.test.num_pairs()),
            (2, 0, 0)
        );
    }

    #[test]
    fn warm_is_deterministic() {
        let ds = InteractionDataset::from_pairs(
            5,
            40,
            (0..5).flat_map(|u| (0..(u * 7 + 3)).map(move |i| (u, i))),
        )
        .unwrap();
        assert_eq!(split_warm(&ds, 11).unwrap(), split_warm(&ds, 11).unwrap());
        assert_ne!(
            sorted(&split_warm(&ds, 11).unwrap().test),
            sorted(&split_warm(&ds, 12).unwrap().test)
        );
    }

    #[test]
    fn cold_ten_items() {
        let ds = InteractionDataset::from_pairs(3, 10, (0..30).map(|k| (k % 3, k % 10))).unwrap();
        let s = split_cold(&ds, 0.2, 5).unwrap();
        assert_eq!(s.cold_items.len(), 2);
        let valid_items: HashSet<_> = s.valid.pairs().iter().map(|p| p.1).collect();
        let test_items: HashSet<_> = s.test.pairs().iter().map(|p| p.1).collect();
        assert_eq!(valid_items.len(), 1);
        assert_eq!(test_items.len(), 1);
        for &c in &s.cold_items {
            assert!(s.train.pairs().iter().all(|p| p.1 != c));
        }
        assert_eq!(s.cold_items, split_cold(&ds, 0.2, 5).unwrap().cold_items);
    }

    #[test]
    fn cold_rejects_bad_fraction() {
        let ds = one_user(10);
        assert!(split_cold(&ds, 0.0, 1).is_err());
        assert!(split_cold(&ds, 1.0, 1).is_err());
        assert!(split_cold(&ds, f64::NAN, 1).is_err());
    }
}
