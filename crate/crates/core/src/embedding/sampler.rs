use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// O(1) draws from a vocabulary's noise distribution via an alias table.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    table: WeightedAliasIndex<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary) -> Self {
        let table = WeightedAliasIndex::new(vocab.noise_distribution().to_vec())
            .expect("noise distribution is nonempty, finite and positive");
        Self { table }
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

/// `k` independent draws from the noise distribution.
pub fn sample_negatives<R: Rng + ?Sized>(
    sampler: &NegativeSampler,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("negative sample count must be at least 1".into()));
    }
    Ok((0..k).map(|_| sampler.draw(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token() {
        let v = Vocabulary::from_counts([("a", 3)], 1).unwrap();
        let s = NegativeSampler::new(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_negatives(&s, 10, &mut rng).unwrap(), vec![0; 10]);
    }

    #[test]
    fn zero_draws_rejected() {
        let v = Vocabulary::from_counts([("a", 3)], 1).unwrap();
        let s = NegativeSampler::new(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&s, 0, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn two_token_frequencies() {
        let v = Vocabulary::from_counts([("a", 16), ("b", 1)], 1).unwrap();
        let s = NegativeSampler::new(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = sample_negatives(&s, 100_000, &mut rng).unwrap();
        let freq_a = draws.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((freq_a - 8.0 / 9.0).abs() < 0.01, "freq(a) = {freq_a}");
    }
}
