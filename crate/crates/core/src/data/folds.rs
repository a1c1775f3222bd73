use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices of one cross-validation partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into `n_folds` near-equal chunks. Fold `i`
/// tests on chunk `i`, develops on chunk `i + 1 (mod n_folds)` and trains on
/// the rest; with five folds that is a 60/20/20 split.
pub fn make_folds(n: usize, n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if n_folds < 3 {
        return Err(Error::Validation(format!("need at least 3 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(Error::Validation(format!("{n} records cannot fill {n_folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut chunks = Vec::with_capacity(n_folds);
    let mut start = 0;
    for i in 0..n_folds {
        let size = n / n_folds + usize::from(i < n % n_folds);
        chunks.push(&order[start..start + size]);
        start += size;
    }
    Ok((0..n_folds)
        .map(|i| {
            let dev_chunk = (i + 1) % n_folds;
            FoldSplit {
                test: chunks[i].to_vec(),
                dev: chunks[dev_chunk].to_vec(),
                train: (0..n_folds)
                    .filter(|&c| c != i && c != dev_chunk)
                    .flat_map(|c| chunks[c].iter().copied())
                    .collect(),
            }
        })
        .collect())
}
