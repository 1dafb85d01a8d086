//! Sequence-level pay-offs and their extension to unfinished prefixes.
//!
//! A pay-off scores a complete sequence against a reference. An unfinished
//! prefix is scored as if eos were appended, which makes the incremental
//! pay-off of emitting eos exactly zero: `R(y + eos) - R(y) = 0`.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::seq::{Prefix, SeqError, SeqSpace, TokenId};

/// A deterministic, finite pay-off on complete sequences, given by content
/// tokens (eos already stripped).
pub trait Payoff {
    fn complete(&self, candidate: &[TokenId], reference: &[TokenId]) -> f64;
}

/// Pay-off of a possibly-unfinished sequence against a terminated reference.
/// Unfinished sequences are scored with eos appended, so only content
/// tokens matter.
pub fn payoff(spec: &dyn Payoff, y: &Prefix, reference: &Prefix) -> f64 {
    debug_assert!(reference.is_terminated());
    spec.complete(y.content(), reference.content())
}

/// One-token pay-off difference `R(prefix + token) - R(prefix)`: the
/// per-step reward of the concatenation MDP.
pub fn incremental_payoff(
    space: &SeqSpace,
    spec: &dyn Payoff,
    prefix: &Prefix,
    token: TokenId,
    reference: &Prefix,
) -> Result<f64, SeqError> {
    let next = space.transition(prefix, token)?;
    Ok(payoff(spec, &next, reference) - payoff(spec, prefix, reference))
}

/// The built-in pay-off kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardSpec {
    /// 1.0 iff the content tokens equal the reference content.
    ExactMatch,
    /// Longest common prefix length divided by reference content length.
    PrefixMatch,
    /// Smoothed sentence BLEU scaled by candidate content length.
    ScaledSentenceBleu { max_order: usize },
}

impl RewardSpec {
    pub fn scaled_bleu() -> Self {
        RewardSpec::ScaledSentenceBleu { max_order: 4 }
    }

    /// Name used in config files.
    pub fn name(&self) -> &'static str {
        match self {
            RewardSpec::ExactMatch => "exact-match",
            RewardSpec::PrefixMatch => "prefix-match",
            RewardSpec::ScaledSentenceBleu { .. } => "scaled-bleu",
        }
    }
}

impl Payoff for RewardSpec {
    fn complete(&self, candidate: &[TokenId], reference: &[TokenId]) -> f64 {
        match *self {
            RewardSpec::ExactMatch => {
                if candidate == reference {
                    1.0
                } else {
                    0.0
                }
            }
            RewardSpec::PrefixMatch => {
                if reference.is_empty() {
                    return if candidate.is_empty() { 1.0 } else { 0.0 };
                }
                let lcp = candidate
                    .iter()
                    .zip(reference)
                    .take_while(|(a, b)| a == b)
                    .count();
                lcp as f64 / reference.len() as f64
            }
            RewardSpec::ScaledSentenceBleu { max_order } => {
                bleu_scaled_content(candidate, reference, max_order)
            }
        }
    }
}

/// Smoothed sentence BLEU of a terminated candidate against a terminated
/// reference, scaled by the candidate content length. N-gram orders
/// `1..=4`, add-one smoothing on every precision numerator and denominator,
/// standard brevity penalty. Range `[0, |candidate content|]`; sequences
/// with empty content score 0.
pub fn sentence_bleu_scaled(candidate: &Prefix, reference: &Prefix) -> f64 {
    debug_assert!(candidate.is_terminated() && reference.is_terminated());
    bleu_scaled_content(candidate.content(), reference.content(), 4)
}

fn bleu_scaled_content(candidate: &[TokenId], reference: &[TokenId], max_order: usize) -> f64 {
    let clen = candidate.len();
    if clen == 0 {
        return 0.0;
    }
    let mut log_precision_sum = 0.0;
    for n in 1..=max_order {
        let (clipped, total) = modified_precision_counts(candidate, reference, n);
        log_precision_sum += ((clipped + 1) as f64 / (total + 1) as f64).ln();
    }
    let log_bp = (1.0 - reference.len() as f64 / clen as f64).min(0.0);
    (log_precision_sum / max_order as f64 + log_bp).exp() * clen as f64
}

/// Clipped n-gram matches and total candidate n-grams of a given order.
fn modified_precision_counts(
    candidate: &[TokenId],
    reference: &[TokenId],
    n: usize,
) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let mut cand_counts: HashMap<&[TokenId], usize> = HashMap::new();
    for w in candidate.windows(n) {
        *cand_counts.entry(w).or_default() += 1;
    }
    let mut ref_counts: HashMap<&[TokenId], usize> = HashMap::new();
    for w in reference.windows(n) {
        *ref_counts.entry(w).or_default() += 1;
    }
    let clipped = cand_counts
        .iter()
        .map(|(w, c)| (*c).min(ref_counts.get(w).copied().unwrap_or(0)))
        .sum();
    (clipped, candidate.len() - n + 1)
}

/// Pay-off given by an explicit per-sequence table keyed by content tokens.
/// Used by the randomized-instance checks, where every complete sequence
/// gets an arbitrary finite score. Missing entries score 0.
#[derive(Debug, Clone)]
pub struct TableReward {
    values: HashMap<Vec<TokenId>, f64>,
}

impl TableReward {
    pub fn new(values: HashMap<Vec<TokenId>, f64>) -> Self {
        TableReward { values }
    }

    /// Independent uniform [0, 1] score for every complete sequence.
    pub fn uniform_random(space: &SeqSpace, rng: &mut impl Rng) -> Result<Self, SeqError> {
        let mut values = HashMap::new();
        for y in space.enumerate_complete()? {
            values.insert(y.content().to_vec(), rng.gen::<f64>());
        }
        Ok(TableReward { values })
    }
}

impl Payoff for TableReward {
    fn complete(&self, candidate: &[TokenId], _reference: &[TokenId]) -> f64 {
        self.values.get(candidate).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::Vocab;

    fn abc_vocab() -> Vocab {
        Vocab::with_eos_last(3).unwrap()
    }

    fn prefix(tokens: &[TokenId]) -> Prefix {
        Prefix::from_tokens(tokens.to_vec(), abc_vocab()).unwrap()
    }

    #[test]
    fn exact_match_extends_to_prefixes() {
        let referenced = prefix(&[0, 2]); // a eos
        let spec = RewardSpec::ExactMatch;
        assert_eq!(payoff(&spec, &prefix(&[0, 2]), &referenced), 1.0);
        assert_eq!(payoff(&spec, &prefix(&[0]), &referenced), 1.0);
        assert_eq!(payoff(&spec, &prefix(&[1, 2]), &referenced), 0.0);
    }

    #[test]
    fn incremental_payoff_hand_values() {
        let space = SeqSpace::new(abc_vocab(), 2);
        let referenced = prefix(&[0, 2]);
        let spec = RewardSpec::ExactMatch;
        let r_a = incremental_payoff(&space, &spec, &Prefix::empty(), 0, &referenced).unwrap();
        assert_eq!(r_a, 1.0);
        let r_b = incremental_payoff(&space, &spec, &Prefix::empty(), 1, &referenced).unwrap();
        assert_eq!(r_b, 0.0);
    }

    #[test]
    fn eos_increment_is_exactly_zero() {
        let space = SeqSpace::new(abc_vocab(), 3);
        let referenced = prefix(&[0, 1, 2]);
        for spec in [
            RewardSpec::ExactMatch,
            RewardSpec::PrefixMatch,
            RewardSpec::scaled_bleu(),
        ] {
            for p in space.enumerate_prefixes().unwrap() {
                let r = incremental_payoff(&space, &spec, &p, 2, &referenced).unwrap();
                assert_eq!(r, 0.0);
            }
        }
    }

    #[test]
    fn telescoping_over_complete_sequences() {
        let vocab = abc_vocab();
        let space = SeqSpace::new(vocab, 4);
        let referenced = prefix(&[0, 1, 0, 2]);
        for spec in [
            RewardSpec::ExactMatch,
            RewardSpec::PrefixMatch,
            RewardSpec::scaled_bleu(),
        ] {
            for y in space.enumerate_complete().unwrap() {
                let mut acc = 0.0;
                let mut p = Prefix::empty();
                for &t in y.tokens() {
                    acc += incremental_payoff(&space, &spec, &p, t, &referenced).unwrap();
                    p = space.transition(&p, t).unwrap();
                }
                let total = payoff(&spec, &y, &referenced)
                    - payoff(&spec, &Prefix::empty(), &referenced);
                assert!((acc - total).abs() <= 1e-12, "telescoping failed: {acc} vs {total}");
            }
        }
    }

    #[test]
    fn bleu_perfect_match_scores_length() {
        let vocab = Vocab::with_eos_last(5).unwrap();
        let cand = Prefix::reference(&[0, 1, 2, 3], vocab).unwrap();
        assert!((sentence_bleu_scaled(&cand, &cand) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_empty_content_scores_zero() {
        let vocab = abc_vocab();
        let empty = Prefix::reference(&[], vocab).unwrap();
        let referenced = Prefix::reference(&[0, 1], vocab).unwrap();
        assert_eq!(sentence_bleu_scaled(&empty, &referenced), 0.0);
    }

    #[test]
    fn prefix_match_counts_leading_agreement() {
        let spec = RewardSpec::PrefixMatch;
        assert_eq!(spec.complete(&[0, 1, 0], &[0, 1, 1]), 2.0 / 3.0);
        assert_eq!(spec.complete(&[1], &[0, 1]), 0.0);
        assert_eq!(spec.complete(&[], &[]), 1.0);
        assert_eq!(spec.complete(&[0], &[]), 0.0);
    }

    #[test]
    fn table_reward_is_deterministic_per_sequence() {
        use rand::SeedableRng;
        let space = SeqSpace::new(abc_vocab(), 3);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let table = TableReward::uniform_random(&space, &mut rng).unwrap();
        for y in space.enumerate_complete().unwrap() {
            let a = table.complete(y.content(), &[]);
            let b = table.complete(y.content(), &[0]);
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a));
        }
    }
}
