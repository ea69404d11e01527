//! Counter-based seed expansion.
//!
//! A single global seed is expanded into independent per-stage seeds so that
//! each stage (corpus synthesis, poison selection, initialisation, shuffling)
//! can be reproduced on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pipeline stages that draw randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Corpus,
    Overlays,
    Selection,
    Init,
    Shuffle,
    Training,
}

impl Stage {
    fn counter(self) -> u64 {
        match self {
            Stage::Corpus => 1,
            Stage::Overlays => 2,
            Stage::Selection => 3,
            Stage::Init => 4,
            Stage::Shuffle => 5,
            Stage::Training => 6,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `stage` from `global`.
pub fn derive(global: u64, stage: Stage) -> u64 {
    derive_indexed(global, stage, 0)
}

/// Derives a seed for the `index`-th item within `stage`.
pub fn derive_indexed(global: u64, stage: Stage, index: u64) -> u64 {
    let a = splitmix64(global);
    let b = splitmix64(a ^ stage.counter().wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn rng(global: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(global, stage))
}

pub fn rng_indexed(global: u64, stage: Stage, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(global, stage, index))
}
