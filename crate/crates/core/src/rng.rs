//! Splittable, keyed random streams.
//!
//! Every random draw in the engine comes from a stream identified by a path
//! of `(tag, index)` pairs below a master seed. The 256-bit key of a child is
//! the SHA-256 of the parent key, the tag and the index, and a ChaCha20
//! generator is seeded from the key. Draw `i` therefore depends only on its
//! path, never on scheduling or on how many other draws ran before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    #[serde(with = "hex_key")]
    key: [u8; 32],
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RngStream({})", &hex::encode(self.key)[..16])
    }
}

impl RngStream {
    pub fn from_seed(master_seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"forensics/master");
        hasher.update(master_seed.to_le_bytes());
        Self {
            key: hasher.finalize().into(),
        }
    }

    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(index.to_le_bytes());
        Self {
            key: hasher.finalize().into(),
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key)
    }

    /// A 64-bit seed for remote services that accept an integer seed.
    pub fn seed_u64(&self) -> u64 {
        self.rng().next_u64()
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("stream key must be 32 bytes"))
    }
}
