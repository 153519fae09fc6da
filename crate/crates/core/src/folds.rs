use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoxError, Result};

const MAX_ATTEMPTS: usize = 20;

/// Random balanced fold labels in `0..folds`, re-drawn (on a fresh stream of
/// the same seed) until every training part keeps at least one event.
pub fn assign_folds(status: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let n = status.len();
    if folds < 2 {
        return Err(CoxError::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(CoxError::InvalidArgument(format!("{folds} folds but only {n} observations")));
    }
    let total_events = status.iter().filter(|&&d| d).count();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut labels = vec![0; n];
        for (rank, &i) in perm.iter().enumerate() {
            labels[i] = rank % folds;
        }
        let mut held_out_events = vec![0usize; folds];
        for (i, &d) in status.iter().enumerate() {
            if d {
                held_out_events[labels[i]] += 1;
            }
        }
        if held_out_events.iter().all(|&e| e < total_events) {
            return Ok(labels);
        }
    }
    Err(CoxError::FoldAssignment { attempts: MAX_ATTEMPTS })
}

/// `(training rows, held-out rows)` of fold `k`.
pub fn split(labels: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| labels[i] != k)
}
