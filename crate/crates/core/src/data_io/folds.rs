use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stratified, seeded k-fold assignment.
///
/// Samples are grouped by label (ascending), each group is shuffled, and the
/// groups are dealt one after another round-robin onto folds `0..k`, the
/// dealing position carrying over between groups. Fold sizes therefore
/// differ by at most one, and a label whose count is a multiple of `k` is
/// spread evenly.
pub fn kfold_split(n: usize, k: usize, seed: u64, labels: &[u8]) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("cannot split {n} samples into {k} folds")));
    }
    if labels.len() != n {
        return Err(Error::dim("kfold_split labels", &[labels.len()], &[n]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut folds = vec![0; n];
    let mut next = 0;
    for class in classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::fold_count;
    use proptest::prelude::*;

    fn study_labels() -> Vec<u8> {
        (0..100).map(|i| if i < 50 { 6 } else { 9 }).collect()
    }

    #[test]
    fn ten_folds_of_five_plus_five() {
        let labels = study_labels();
        let folds = kfold_split(100, 10, 3, &labels).unwrap();
        for f in 0..10 {
            let sixes = (0..100).filter(|&i| folds[i] == f && labels[i] == 6).count();
            let nines = (0..100).filter(|&i| folds[i] == f && labels[i] == 9).count();
            assert_eq!((sixes, nines), (5, 5));
        }
    }

    #[test]
    fn singleton_folds() {
        let labels = [1, 2, 3, 4, 5, 6, 7, 8, 9, 0];
        let mut folds = kfold_split(10, 10, 0, &labels).unwrap();
        folds.sort_unstable();
        assert_eq!(folds, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_and_checked() {
        let labels = study_labels();
        assert_eq!(kfold_split(100, 10, 8, &labels).unwrap(), kfold_split(100, 10, 8, &labels).unwrap());
        assert_ne!(kfold_split(100, 10, 8, &labels).unwrap(), kfold_split(100, 10, 9, &labels).unwrap());
        assert!(matches!(kfold_split(5, 6, 0, &[0; 5]), Err(Error::Domain(_))));
        assert!(kfold_split(5, 0, 0, &[0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn always_a_balanced_partition(labels in proptest::collection::vec(0u8..4, 1..80), k in 1usize..12, seed in any::<u64>()) {
            let n = labels.len();
            prop_assume!(k <= n);
            let folds = kfold_split(n, k, seed, &labels).unwrap();
            prop_assert_eq!(fold_count(&folds, n).unwrap(), k);
            let mut sizes = vec![0usize; k];
            for &f in &folds { sizes[f] += 1; }
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for class in 0..4u8 {
                let count = labels.iter().filter(|&&l| l == class).count();
                if count % k == 0 {
                    for f in 0..k {
                        let here = (0..n).filter(|&i| folds[i] == f && labels[i] == class).count();
                        prop_assert_eq!(here, count / k);
                    }
                }
            }
        }
    }
}
