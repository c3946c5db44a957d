use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::Dataset;

/// Result of a k-shot split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    /// Item indices chosen as the labeled support pool, ascending.
    pub support: Vec<usize>,
    /// Everything else with a label, ascending; the evaluation pool.
    pub remainder: Vec<usize>,
    /// Set when some class had fewer than `k` items, in which case all of
    /// its items went to the support.
    pub truncated: bool,
}

/// Uniformly samples min(k, available) items per class without replacement,
/// deterministically under `seed`. Support and remainder are disjoint and
/// together cover every labeled item.
pub fn sample_few_shot(ds: &Dataset, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::invalid("sample_few_shot: k must be >= 1"));
    }
    if ds.classes.is_empty() {
        return Err(Error::invalid("sample_few_shot: empty class vocabulary"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut support = Vec::new();
    let mut remainder = Vec::new();
    let mut truncated = false;
    for class in 0..ds.num_classes() {
        let mut members = ds.class_members(class);
        members.shuffle(&mut rng);
        if members.len() < k {
            truncated = true;
        }
        let take = k.min(members.len());
        support.extend_from_slice(&members[..take]);
        remainder.extend_from_slice(&members[take..]);
    }
    support.sort_unstable();
    remainder.sort_unstable();
    Ok(FewShotSplit {
        support,
        remainder,
        truncated,
    })
}
