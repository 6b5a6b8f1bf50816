//! Fixtures shared by the benchmarks.

use ciql_core::env::{generate_dataset, mixed_demonstrators};
use ciql_core::{oracle, rng, Batch, Dataset, EnvConfig};

/// The 90-trajectory mixed demonstration set in the default environment.
pub fn mixed_dataset() -> Dataset {
    generate_dataset(&EnvConfig::default(), &mixed_demonstrators()).expect("default env is valid")
}

/// A batch of `n` random expert and agent transitions with random scores.
pub fn random_batch(n: usize, seed: u64) -> Batch {
    let mut r = rng::seeded(seed);
    oracle::random_batch(&EnvConfig::default(), &mut r, n, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_documented_sizes() {
        assert_eq!(mixed_dataset().trajectories.len(), 90);
        let b = random_batch(64, 1);
        assert_eq!((b.expert.len(), b.agent.len()), (64, 64));
    }
}
