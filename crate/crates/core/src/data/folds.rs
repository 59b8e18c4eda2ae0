use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Seeded shuffle followed by contiguous slicing into `k` folds whose sizes
/// differ by at most one; the first `n % k` folds hold the extra element.
pub fn kfold<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if items.len() < k {
        return Err(Error::invalid(format!(
            "cannot split {} examples into {k} folds",
            items.len()
        )));
    }
    let order = shuffled_indices(items.len(), seed);
    let (base, extra) = (items.len() / k, items.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(
            order[start..start + size]
                .iter()
                .map(|&i| items[i].clone())
                .collect(),
        );
        start += size;
    }
    Ok(folds)
}

/// Seeded random split holding out `fraction` of the items (at least one,
/// never all). Returns `(kept, held_out)`.
pub fn holdout_split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::invalid(format!(
            "cannot hold out a validation split from {} examples",
            items.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::invalid(format!(
            "holdout fraction {fraction} outside (0, 1)"
        )));
    }
    let n = items.len();
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let order = shuffled_indices(n, seed);
    let kept = order[held..].iter().map(|&i| items[i].clone()).collect();
    let out = order[..held].iter().map(|&i| items[i].clone()).collect();
    Ok((kept, out))
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fold_sizes() {
        let items: Vec<u32> = (0..10).collect();
        let f = kfold(&items, 5, 1).unwrap();
        assert!(f.iter().all(|f| f.len() == 2));
        let items: Vec<u32> = (0..11).collect();
        let sizes: Vec<usize> = kfold(&items, 5, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 2, 2, 2, 2]);
    }

    #[test]
    fn too_few_examples_or_bad_k() {
        assert!(kfold(&[1, 2], 3, 0).is_err());
        assert!(kfold(&[1, 2, 3], 1, 0).is_err());
    }

    #[test]
    fn holdout_split_sizes() {
        let items: Vec<u32> = (0..50).collect();
        let (kept, held) = holdout_split(&items, 0.1, 3).unwrap();
        assert_eq!((kept.len(), held.len()), (45, 5));
        let (kept, held) = holdout_split(&[1, 2], 0.1, 3).unwrap();
        assert_eq!((kept.len(), held.len()), (1, 1));
        assert!(holdout_split(&[1], 0.1, 3).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_the_input(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let items: Vec<usize> = (0..n).map(|i| i % 7).collect();
            let folds = kfold(&items, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut union: Vec<usize> = folds.concat();
            let mut orig = items.clone();
            union.sort_unstable();
            orig.sort_unstable();
            prop_assert_eq!(union, orig);
            prop_assert_eq!(kfold(&items, k, seed).unwrap(), folds);
        }

        #[test]
        fn fold_index_sets_are_disjoint(n in 2usize..100, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let items: Vec<usize> = (0..n).collect();
            let folds = kfold(&items, k, seed).unwrap();
            let mut seen = vec![false; n];
            for f in &folds {
                for &i in f {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
