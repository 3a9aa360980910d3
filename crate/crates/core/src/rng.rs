//! Randomness policy: every stochastic routine takes an explicit `u64` seed
//! and expands it through a counter-based, platform-stable generator, so any
//! result can be reproduced from its recorded seed alone.

pub use rand_chacha::ChaCha8Rng;

use rand::SeedableRng;

/// Builds the crate's standard generator from a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let mut r1 = rng_from_seed(42);
        let mut r2 = rng_from_seed(42);
        for _ in 0..100 {
            assert_eq!(
                r1.random::<u64>(),
                r2.random::<u64>(),
                "identical seeds must replay identical streams"
            );
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut r1 = rng_from_seed(1);
        let mut r2 = rng_from_seed(2);
        let same = (0..16).filter(|_| r1.random::<u64>() == r2.random::<u64>()).count();
        assert!(same == 0, "distinct seeds should not replay the same stream");
    }
}
