use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::data::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Partitions `0..labels.len()` into `k` validation folds.
///
/// Indices are shuffled with `seed` and dealt round-robin. With `stratified`
/// each class is shuffled and dealt separately, continuing the deal where the
/// previous class stopped, so per-class counts and fold sizes both differ by
/// at most one.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64, stratified: bool) -> Result<Vec<Fold>, TrainError> {
    if k < 2 || k > labels.len() {
        return Err(TrainError::InvalidConfig(format!("{k} folds for {} samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for (class, members) in by_class.iter().enumerate() {
            if !members.is_empty() && members.len() < k {
                return Err(TrainError::ClassTooSmall {
                    class,
                    count: members.len(),
                    folds: k,
                });
            }
        }
        by_class
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut val = vec![Vec::new(); k];
    let mut next = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for i in group {
            val[next % k].push(i);
            next += 1;
        }
    }
    Ok(val
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            let mut in_val = vec![false; labels.len()];
            for &i in &v {
                in_val[i] = true;
            }
            Fold {
                train: (0..labels.len()).filter(|&i| !in_val[i]).collect(),
                val: v,
            }
        })
        .collect())
}
