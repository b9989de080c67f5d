//! Hierarchical seed derivation.
//!
//! Every random draw in a benchmark run comes from a stream identified by a
//! root seed plus a labeled path, e.g. `root -> "dgp" -> "dose" -> 17`.
//! Adding a new estimator or scenario introduces new paths but never shifts
//! the streams that already exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTree {
    root: u64,
    path: Vec<(String, u64)>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root, path: Vec::new() }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Child stream identified by `label` alone.
    pub fn child(&self, label: &str) -> Self {
        self.child_idx(label, 0)
    }

    /// Child stream identified by `(label, index)`, e.g. one stream per unit.
    pub fn child_idx(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_string(), index));
        Self { root: self.root, path }
    }

    /// The 64-bit seed of this node.
    pub fn seed(&self) -> u64 {
        self.path.iter().fold(splitmix64(self.root), |acc, (label, idx)| {
            let h = splitmix64(acc ^ fnv1a(label.as_bytes()));
            splitmix64(h ^ splitmix64(idx.wrapping_add(0x632B_E59B_D9B4_E019)))
        })
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.seed())
    }

    /// Human-readable path, used in manifests and seed records.
    pub fn describe(&self) -> String {
        let mut s = self.root.to_string();
        for (label, idx) in &self.path {
            s.push('/');
            s.push_str(label);
            if *idx != 0 {
                s.push_str(&format!("[{idx}]"));
            }
        }
        s
    }
}
