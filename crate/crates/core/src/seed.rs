//! Named random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives independent generators from a root seed and a component name,
/// so adding or reordering components never perturbs the others.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed_for(&self, name: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update(name.as_bytes());
        h.finalize().into()
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_for(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = SeedStream::new(11);
        let a: u64 = s.rng("trainer").random();
        let b: u64 = s.rng("trainer").random();
        let c: u64 = s.rng("executor").random();
        let d: u64 = SeedStream::new(12).rng("trainer").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
