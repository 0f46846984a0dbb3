use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::Manifest;
use crate::error::{Error, Result};

/// Number of stratum members that go to training: `⌈fraction · n⌉`.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    // guard against 0.8 * n landing a hair above an integer
    ((train_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Splits every `system_id` stratum into train/dev with the ceiling rule.
///
/// Strata are visited in ascending id order and shuffled with one seeded
/// generator, so the split depends only on the manifest content and `seed`.
/// Output manifests keep the input order.
pub fn stratified_split(
    manifest: &Manifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &manifest.entries {
        strata
            .entry(e.system_id.as_str())
            .or_default()
            .push(e.utt_id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = BTreeSet::new();
    for (system, mut ids) in strata {
        if ids.len() == 1 {
            log::warn!("stratum `{system}` has a single utterance; assigning it to train");
        }
        ids.shuffle(&mut rng);
        let k = train_count(ids.len(), train_fraction);
        train_ids.extend(ids.into_iter().take(k));
    }
    let dev_ids: BTreeSet<&str> = manifest
        .entries
        .iter()
        .map(|e| e.utt_id.as_str())
        .filter(|id| !train_ids.contains(id))
        .collect();
    Ok((
        manifest.filter_ids(&train_ids),
        manifest.filter_ids(&dev_ids),
    ))
}
