use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SurvivalDataset;
use crate::error::{invalid, Error, Result};

fn strata(events: &[bool]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &e) in events.iter().enumerate() {
        out[usize::from(e)].push(i);
    }
    out
}

/// Sorted `(train, test)` indices; events and censored subjects are shuffled
/// and split separately so both parts keep the event rate.
pub fn stratified_split_indices(events: &[bool], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut stratum) in ["censored", "event"].into_iter().zip(strata(events)) {
        if stratum.is_empty() {
            continue;
        }
        stratum.shuffle(&mut rng);
        let n_test = (stratum.len() as f64 * test_fraction).round() as usize;
        if n_test == stratum.len() {
            return Err(Error::Stratification(format!(
                "all {} {label} subjects would land in the test part",
                stratum.len()
            )));
        }
        test.extend_from_slice(&stratum[..n_test]);
        train.extend_from_slice(&stratum[n_test..]);
    }
    if test.is_empty() {
        return Err(Error::Stratification(format!(
            "test fraction {test_fraction} of {} rows leaves the test part empty",
            events.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(data: &SurvivalDataset, test_fraction: f64, seed: u64) -> Result<(SurvivalDataset, SurvivalDataset)> {
    let (train, test) = stratified_split_indices(data.events(), test_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Stratified `k`-fold partition; returns the sorted held-out indices of each fold.
pub fn stratified_folds(events: &[bool], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > events.len() {
        return Err(invalid(format!("cannot build {folds} folds from {} rows", events.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut slot = 0;
    for mut stratum in strata(events) {
        stratum.shuffle(&mut rng);
        for i in stratum {
            out[slot % folds].push(i);
            slot += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}
