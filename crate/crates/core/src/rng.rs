//! Deterministic, splittable random streams.
//!
//! Every stream is a ChaCha20 keystream whose key is derived from a
//! `(seed, trial)` pair and whose stream id is a [`StreamTag`]. Controllers in
//! the same trial therefore see identical noise, while the planner's random
//! initialization draws from its own stream and never shifts the noise.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    InitState,
    Process,
    Measurement,
    PlannerInit,
    /// Random system generation.
    System,
    /// Synthetic beliefs and other experiment-level draws.
    Auxiliary,
}

impl StreamTag {
    fn id(self) -> u64 {
        match self {
            StreamTag::InitState => 1,
            StreamTag::Process => 2,
            StreamTag::Measurement => 3,
            StreamTag::PlannerInit => 4,
            StreamTag::System => 5,
            StreamTag::Auxiliary => 6,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for trial `trial` of experiment `experiment_id` under `master_seed`.
pub fn trial_seed(master_seed: u64, experiment_id: &str, trial: u64) -> u64 {
    mix64(mix64(master_seed ^ fnv1a(experiment_id.as_bytes())) ^ mix64(trial.wrapping_add(1)))
}

/// Independent generator for `(seed, index, tag)`.
pub fn stream(seed: u64, index: u64, tag: StreamTag) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    let words = [
        mix64(seed),
        mix64(seed ^ 0x5851_f42d_4c95_7f2d),
        mix64(index),
        mix64(index ^ 0x1405_7b7e_f767_814f),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(tag.id());
    rng
}
