//! Seed plumbing. Every random component draws from its own ChaCha stream, so
//! adding draws to one component never shifts another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream labels for the components of a single release or trial.
pub mod label {
    pub const THETA1: u64 = 1;
    pub const THETA2: u64 = 2;
    pub const CROSSPROD_NOISE: u64 = 3;
    pub const ESTIMATE_NOISE: u64 = 4;
    pub const DATA: u64 = 16;
    pub const RELEASE: u64 = 17;
    pub const TRIAL: u64 = 32;
}

pub fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

/// A child seed that is a pure function of `(seed, label)`.
pub fn child_seed(seed: u64, label: u64) -> u64 {
    stream(seed, label).next_u64()
}

/// Per-trial seed, a pure function of the base seed and the grid and trial
/// indices.
pub fn trial_seed(base_seed: u64, n_index: usize, trial_index: usize) -> u64 {
    let mut rng = stream(base_seed, label::TRIAL);
    rng.set_word_pos(((n_index as u128) << 40 | trial_index as u128) * 2);
    rng.next_u64()
}
