//! N-gram replacement proposals and normalized pay-off weighting.
//!
//! The proposal perturbs a reference by substituting a random n-gram of its
//! content with uniformly drawn non-eos tokens. Because every draw gets the
//! same unnormalized proposal mass, the proposal term cancels from the
//! importance weights and the normalized weights reduce to a softmax of the
//! pay-offs over the batch.

use rand::Rng;
use thiserror::Error;

use crate::numerics::softmax;
use crate::reward::{payoff, Payoff};
use crate::seq::{Prefix, SeqSpace, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("reference has no content tokens to replace")]
    EmptyReference,
}

#[derive(Debug, Clone, Copy)]
pub struct ProposalConfig {
    /// Largest n-gram length eligible for replacement.
    pub max_ngram: usize,
    /// Batch size M, including the reference when `include_reference`.
    pub num_samples: usize,
    /// Whether the reference itself is appended as the last sample.
    pub include_reference: bool,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            max_ngram: 4,
            num_samples: 5,
            include_reference: true,
        }
    }
}

/// Complete sequences with normalized nonnegative weights.
#[derive(Debug, Clone)]
pub struct WeightedBatch {
    samples: Vec<Prefix>,
    weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn samples(&self) -> &[Prefix] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Prefix, f64)> {
        self.samples.iter().zip(self.weights.iter().copied())
    }
}

/// Replaces one random n-gram of the reference content with uniformly drawn
/// non-eos tokens. The span length is uniform on
/// `1..=min(max_ngram, content length)`, the start position uniform over
/// valid positions, and the eos position is unchanged. Identity
/// replacements and duplicate draws are allowed.
pub fn ngram_replace(
    space: &SeqSpace,
    reference: &Prefix,
    rng: &mut impl Rng,
    config: &ProposalConfig,
) -> Result<Prefix, SamplingError> {
    debug_assert!(reference.is_terminated());
    let content_len = reference.content().len();
    if content_len == 0 {
        return Err(SamplingError::EmptyReference);
    }
    let vocab = space.vocab();
    let content_tokens: Vec<TokenId> = vocab.content_tokens().collect();
    let n = rng.gen_range(1..=config.max_ngram.min(content_len));
    let start = rng.gen_range(0..=content_len - n);
    let mut content = reference.content().to_vec();
    for slot in content.iter_mut().skip(start).take(n) {
        *slot = content_tokens[rng.gen_range(0..content_tokens.len())];
    }
    Ok(Prefix::reference(&content, vocab).expect("replacement stays in vocabulary"))
}

/// Draws `M - 1` proposal samples and appends the reference last (or `M`
/// proposal samples when the reference is excluded).
pub fn draw_proposal_batch(
    space: &SeqSpace,
    reference: &Prefix,
    rng: &mut impl Rng,
    config: &ProposalConfig,
) -> Result<Vec<Prefix>, SamplingError> {
    let draws = if config.include_reference {
        config.num_samples.saturating_sub(1)
    } else {
        config.num_samples
    };
    let mut batch = Vec::with_capacity(config.num_samples);
    for _ in 0..draws {
        batch.push(ngram_replace(space, reference, rng, config)?);
    }
    if config.include_reference {
        batch.push(reference.clone());
    }
    Ok(batch)
}

/// Normalized importance weights `exp(R_i / tau) / sum_j exp(R_j / tau)`,
/// computed with max subtraction.
pub fn normalized_payoff_weights(
    samples: Vec<Prefix>,
    reference: &Prefix,
    tau: f64,
    spec: &dyn Payoff,
) -> WeightedBatch {
    assert!(!samples.is_empty(), "batch must be nonempty");
    assert!(tau > 0.0, "tau must be positive");
    let scores: Vec<f64> = samples
        .iter()
        .map(|y| payoff(spec, y, reference) / tau)
        .collect();
    let weights = softmax(&scores);
    WeightedBatch { samples, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardSpec;
    use crate::seq::Vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn space() -> SeqSpace {
        SeqSpace::new(Vocab::with_eos_last(4).unwrap(), 4)
    }

    #[test]
    fn replacement_keeps_length_and_termination() {
        let space = space();
        let reference = Prefix::reference(&[0, 1, 2], space.vocab()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let config = ProposalConfig::default();
        for _ in 0..200 {
            let sample = ngram_replace(&space, &reference, &mut rng, &config).unwrap();
            assert!(sample.is_terminated());
            assert_eq!(sample.len(), reference.len());
            assert!(sample
                .content()
                .iter()
                .all(|&t| t != space.vocab().eos() && space.vocab().contains(t)));
        }
    }

    #[test]
    fn single_content_token_limits_span() {
        let space = space();
        let reference = Prefix::reference(&[0], space.vocab()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let config = ProposalConfig::default();
        for _ in 0..50 {
            let sample = ngram_replace(&space, &reference, &mut rng, &config).unwrap();
            assert_eq!(sample.content().len(), 1);
        }
    }

    #[test]
    fn empty_reference_is_an_error() {
        let space = space();
        let reference = Prefix::reference(&[], space.vocab()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(
            ngram_replace(&space, &reference, &mut rng, &ProposalConfig::default()),
            Err(SamplingError::EmptyReference)
        );
    }

    #[test]
    fn batch_of_one_is_just_the_reference() {
        let space = space();
        let reference = Prefix::reference(&[0, 1], space.vocab()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let config = ProposalConfig {
            num_samples: 1,
            ..Default::default()
        };
        let batch = draw_proposal_batch(&space, &reference, &mut rng, &config).unwrap();
        assert_eq!(batch, vec![reference]);
    }

    #[test]
    fn batch_has_m_samples_with_reference_last() {
        let space = space();
        let reference = Prefix::reference(&[0, 1, 2], space.vocab()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let batch =
            draw_proposal_batch(&space, &reference, &mut rng, &ProposalConfig::default()).unwrap();
        assert_eq!(batch.len(), 5);
        assert_eq!(batch.last().unwrap(), &reference);
    }

    #[test]
    fn seeded_batches_are_identical() {
        let space = space();
        let reference = Prefix::reference(&[0, 1, 2], space.vocab()).unwrap();
        let draw = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            draw_proposal_batch(&space, &reference, &mut rng, &ProposalConfig::default()).unwrap()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn weights_are_a_softmax_of_payoffs() {
        let space = space();
        let reference = Prefix::reference(&[0], space.vocab()).unwrap();
        let hit = reference.clone();
        let miss = Prefix::reference(&[1], space.vocab()).unwrap();
        let batch = normalized_payoff_weights(
            vec![hit, miss],
            &reference,
            1.0,
            &RewardSpec::ExactMatch,
        );
        let e = std::f64::consts::E;
        assert!((batch.weights()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((batch.weights()[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((batch.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn equal_rewards_give_uniform_weights() {
        let space = space();
        let reference = Prefix::reference(&[0], space.vocab()).unwrap();
        let miss_a = Prefix::reference(&[1], space.vocab()).unwrap();
        let miss_b = Prefix::reference(&[2], space.vocab()).unwrap();
        let batch = normalized_payoff_weights(
            vec![miss_a, miss_b],
            &reference,
            0.7,
            &RewardSpec::ExactMatch,
        );
        for &w in batch.weights() {
            assert!((w - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn low_temperature_concentrates_on_argmax() {
        let space = space();
        let reference = Prefix::reference(&[0], space.vocab()).unwrap();
        let hit = reference.clone();
        let miss = Prefix::reference(&[1], space.vocab()).unwrap();
        let batch = normalized_payoff_weights(
            vec![miss, hit],
            &reference,
            1e-6,
            &RewardSpec::ExactMatch,
        );
        assert!(batch.weights()[1] > 1.0 - 1e-12);
    }
}
