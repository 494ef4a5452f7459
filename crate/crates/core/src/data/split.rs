use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Random disjoint partition of identities into `(train, test)`. The train
/// side gets `floor(n · fraction)` persons, kept within `1..n`. Both halves
/// come back sorted.
pub fn split_identities(ids: &[String], fraction: f64, trial_seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let mut ids: Vec<String> = ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 persons to split, got {}",
            ids.len()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Argument(format!("split fraction {fraction} not in [0, 1]")));
    }
    let n = ids.len();
    let n_train = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    ids.shuffle(&mut rng);
    let mut test = ids.split_off(n_train);
    ids.sort();
    test.sort();
    Ok((ids, test))
}
