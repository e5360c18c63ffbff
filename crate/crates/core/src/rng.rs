//! Hierarchical seeding.
//!
//! Every random stream in the crate is derived from one 64-bit root seed by
//! walking a path of string labels (`"finetune" / "dropout"` and so on). A
//! stream depends only on its own path, so adding a consumer never shifts the
//! numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, label: &str) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(label))),
        }
    }

    pub fn indexed(&self, label: &str, index: u64) -> SeedTree {
        let c = self.child(label);
        SeedTree {
            seed: splitmix64(c.seed ^ splitmix64(index.wrapping_add(1))),
        }
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.seed)
    }
}
