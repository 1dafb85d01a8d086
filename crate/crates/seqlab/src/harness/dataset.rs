//! Synthetic datasets: ground-truth pairs over a shared space and reward.

use rand::Rng;

use crate::reward::RewardSpec;
use crate::seq::{GroundTruthPair, Prefix, SeqSpace, TokenId, Vocab};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// One split of a task: example pairs plus the space and reward they share.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<GroundTruthPair>,
    pub vocab: Vocab,
    pub horizon: usize,
    pub reward: RewardSpec,
    pub split: Split,
}

impl Dataset {
    pub fn space(&self) -> SeqSpace {
        SeqSpace::new(self.vocab, self.horizon)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// With a different split tag, same examples.
    pub fn relabeled(&self, split: Split) -> Dataset {
        Dataset {
            split,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = std::collections::BTreeSet::new();
        for pair in &self.pairs {
            if !seen.insert(pair.example_id) {
                return Err(HarnessError::InvalidConfig(format!(
                    "duplicate example id {}",
                    pair.example_id
                )));
            }
            if pair.reference.len() > self.horizon {
                return Err(HarnessError::InvalidConfig(format!(
                    "reference longer than horizon {}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

/// Copy task: each reference is a uniformly random content sequence of
/// length `horizon - 1` followed by eos. Example ids start at `id_offset`.
pub fn make_copy_task(
    vocab_size: u32,
    horizon: usize,
    num_examples: usize,
    reward: RewardSpec,
    split: Split,
    id_offset: u64,
    rng: &mut impl Rng,
) -> Result<Dataset, HarnessError> {
    if num_examples == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    if vocab_size < 2 {
        return Err(HarnessError::InvalidConfig(
            "copy task needs at least one content token plus eos".into(),
        ));
    }
    if horizon < 2 {
        return Err(HarnessError::InvalidConfig(
            "copy task needs horizon of at least 2".into(),
        ));
    }
    let vocab = Vocab::with_eos_last(vocab_size)?;
    let content_tokens: Vec<TokenId> = vocab.content_tokens().collect();
    let mut pairs = Vec::with_capacity(num_examples);
    for i in 0..num_examples {
        let content: Vec<TokenId> = (0..horizon - 1)
            .map(|_| content_tokens[rng.gen_range(0..content_tokens.len())])
            .collect();
        let reference = Prefix::reference(&content, vocab)?;
        pairs.push(GroundTruthPair::new(id_offset + i as u64, reference)?);
    }
    let dataset = Dataset {
        pairs,
        vocab,
        horizon,
        reward,
        split,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn copy_task_is_deterministic_under_seed() {
        let make = || {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            make_copy_task(3, 3, 2, RewardSpec::ExactMatch, Split::Train, 0, &mut rng).unwrap()
        };
        let a = make();
        let b = make();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.pairs.len(), 2);
        for pair in &a.pairs {
            assert_eq!(pair.reference.len(), 3);
        }
    }

    #[test]
    fn minimal_vocab_forces_the_single_content_token() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let data =
            make_copy_task(2, 2, 4, RewardSpec::ExactMatch, Split::Train, 0, &mut rng).unwrap();
        for pair in &data.pairs {
            assert_eq!(pair.reference.tokens(), &[0, 1]);
        }
    }

    #[test]
    fn zero_examples_is_an_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            make_copy_task(3, 3, 0, RewardSpec::ExactMatch, Split::Train, 0, &mut rng),
            Err(HarnessError::EmptyDataset)
        ));
    }
}
