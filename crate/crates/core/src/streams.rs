//! Seed derivation for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Who consumes a stream within one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    Oracle,
    Learner,
    Reward,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Oracle => 0x6f72_6163_6c65,
            StreamRole::Learner => 0x6c65_6172_6e65,
            StreamRole::Reward => 0x7265_7761_7264,
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

pub fn stream_seed(master: u64, replicate: u64, role: StreamRole) -> u64 {
    mix64(mix64(mix64(master) ^ replicate) ^ role.tag())
}

pub fn stream_rng(master: u64, replicate: u64, role: StreamRole) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, replicate, role))
}

/// The three seeds of one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub replicate: u64,
    pub oracle: u64,
    pub learner: u64,
    pub reward: u64,
}

impl SeedRecord {
    pub fn new(master: u64, replicate: u64) -> Self {
        Self {
            master,
            replicate,
            oracle: stream_seed(master, replicate, StreamRole::Oracle),
            learner: stream_seed(master, replicate, StreamRole::Learner),
            reward: stream_seed(master, replicate, StreamRole::Reward),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn splitmix_reference_value() {
        // first output of SplitMix64 seeded with 0
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn seeds_are_distinct_across_roles_and_replicates() {
        let mut seen = HashSet::new();
        for rep in 0..1000 {
            let s = SeedRecord::new(42, rep);
            assert!(seen.insert(s.oracle) && seen.insert(s.learner) && seen.insert(s.reward));
        }
    }
}
