use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::EmbedError;
use crate::sequence::Vocabulary;

/// Smoothed unigram noise distribution, `q(t) ∝ count(t)^alpha`, over the
/// context vocabulary.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    alpha: f64,
    sampler: WeightedIndex<f64>,
}

impl NoiseDistribution {
    pub fn from_counts(counts: &[u64], alpha: f64) -> Result<Self, EmbedError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(EmbedError::InvalidConfig(format!("alpha must be in [0, 1], got {alpha}")));
        }
        if counts.is_empty() {
            return Err(EmbedError::EmptyVocabulary);
        }
        let raw: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(alpha)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| EmbedError::InvalidConfig(format!("noise weights: {e}")))?;
        Ok(NoiseDistribution { probs, alpha, sampler })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

pub fn build_noise_distribution(vocab: &Vocabulary, alpha: f64) -> Result<NoiseDistribution, EmbedError> {
    NoiseDistribution::from_counts(vocab.counts(), alpha)
}
