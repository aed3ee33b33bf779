use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split. Each class is shuffled independently and dealt
/// round-robin into the test folds, with the second class continuing where
/// the first stopped so fold sizes differ by at most one.
pub fn kfold_split(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::domain("k must be at least 2"));
    }
    if labels.len() < k {
        return Err(Error::domain(format!("{} clips cannot fill {k} folds", labels.len())));
    }
    let mut rng = rng::substream(seed, "kfold");
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::domain(format!(
                "class {} has {} clips, fewer than {k} folds",
                if class { "bline" } else { "non_bline" },
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            tests[next % k].push(i);
            next += 1;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
            Fold { train, test }
        })
        .collect())
}
