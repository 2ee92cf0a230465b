use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::probing::BehavioralDataset;

/// Swaps each observation's level to a uniformly chosen adjacent level with
/// probability `epsilon`. Boundary levels have one neighbour and move to it
/// with the full probability.
pub fn corrupt_labels(
    dataset: &BehavioralDataset,
    epsilon: f64,
    seed: u64,
) -> Result<BehavioralDataset> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("corruption rate {epsilon} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for obs in &mut out.observations {
        if rng.random_bool(epsilon) {
            obs.level = *obs
                .level
                .neighbors()
                .choose(&mut rng)
                .expect("every level has a neighbour");
        }
    }
    out.provenance.label_noise = Some((epsilon, seed));
    Ok(out)
}
