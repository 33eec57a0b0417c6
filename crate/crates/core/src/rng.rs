//! Seeded, splittable random streams.
//!
//! Every random draw in the simulator comes from a [`ChaCha20Rng`] whose
//! 32-byte key is `SHA-256("qvote/seed/v1" || master_le || label || 0x00 || index_le)`.
//! Child seeds use the first eight bytes of the same digest, so a run is a
//! tree of streams addressed by `(label, index)` paths from one master seed.
//! Streams never share state, which keeps transcripts reproducible bit for
//! bit no matter how trials are scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"qvote/seed/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn new(master: u64) -> Self {
        Seed(master)
    }

    fn digest(&self, label: &str, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update(self.0.to_le_bytes());
        h.update(label.as_bytes());
        h.update([0u8]);
        h.update(index.to_le_bytes());
        h.finalize().into()
    }

    /// Child seed for a sub-computation (a repetition, a trial, a restart).
    pub fn derive(&self, label: &str, index: u64) -> Seed {
        let d = self.digest(label, index);
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[..8]);
        Seed(u64::from_le_bytes(b))
    }

    /// Independent generator for one role within this seed's scope.
    pub fn stream(&self, label: &str, index: u64) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.digest(label, index))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
