//! Token alphabet, partial/complete sequences, and the deterministic
//! concatenation MDP.
//!
//! A sequence is a list of dense token ids with a single distinguished
//! end-of-sequence token. States of the MDP are unterminated prefixes,
//! actions are tokens, and transitions are string concatenation. Once a
//! prefix reaches length `horizon - 1` only eos may be emitted, so every
//! complete sequence has at most `horizon` tokens and the space is finite.

use std::fmt;
use thiserror::Error;

/// Dense token identifier in `0..vocab.size()`.
pub type TokenId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeqError {
    #[error("prefix is already terminated")]
    AlreadyTerminated,
    #[error("prefix length {len} has reached the horizon {horizon}")]
    HorizonExceeded { len: usize, horizon: usize },
    #[error("token {token} is not allowed after this prefix")]
    ForbiddenToken { token: TokenId },
    #[error("enumerating {size} sequences exceeds the budget {budget}")]
    EnumerationBudgetExceeded { size: u128, budget: u128 },
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
}

/// Token alphabet with exactly one end-of-sequence token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: u32,
    eos: TokenId,
}

impl Vocab {
    pub fn new(size: u32, eos: TokenId) -> Result<Self, SeqError> {
        if size == 0 {
            return Err(SeqError::InvalidSequence("vocabulary is empty".into()));
        }
        if eos >= size {
            return Err(SeqError::InvalidSequence(format!(
                "eos id {eos} outside vocabulary of size {size}"
            )));
        }
        Ok(Vocab { size, eos })
    }

    /// Alphabet with `size` tokens where the last id is eos.
    pub fn with_eos_last(size: u32) -> Result<Self, SeqError> {
        Vocab::new(size, size.saturating_sub(1))
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token < self.size
    }

    /// All token ids in ascending order.
    pub fn tokens(&self) -> impl Iterator<Item = TokenId> {
        0..self.size
    }

    /// All non-eos token ids in ascending order.
    pub fn content_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.size).filter(move |&t| t != self.eos)
    }
}

/// A partial or complete sequence. `terminated` is true iff the last token
/// is eos; eos appears at most once and only at the last position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    tokens: Vec<TokenId>,
    terminated: bool,
}

impl Prefix {
    pub fn empty() -> Self {
        Prefix {
            tokens: Vec::new(),
            terminated: false,
        }
    }

    /// Builds a prefix from raw tokens, validating eos placement.
    pub fn from_tokens(tokens: Vec<TokenId>, vocab: Vocab) -> Result<Self, SeqError> {
        let last = tokens.len().wrapping_sub(1);
        for (i, &t) in tokens.iter().enumerate() {
            if !vocab.contains(t) {
                return Err(SeqError::InvalidSequence(format!(
                    "token {t} outside vocabulary of size {}",
                    vocab.size()
                )));
            }
            if t == vocab.eos() && i != last {
                return Err(SeqError::InvalidSequence(
                    "eos may only appear at the last position".into(),
                ));
            }
        }
        let terminated = tokens.last() == Some(&vocab.eos());
        Ok(Prefix { tokens, terminated })
    }

    /// Builds a terminated sequence from content tokens by appending eos.
    pub fn reference(content: &[TokenId], vocab: Vocab) -> Result<Self, SeqError> {
        let mut tokens = Vec::with_capacity(content.len() + 1);
        for &t in content {
            if !vocab.contains(t) || t == vocab.eos() {
                return Err(SeqError::InvalidSequence(format!(
                    "content token {t} invalid"
                )));
            }
            tokens.push(t);
        }
        tokens.push(vocab.eos());
        Ok(Prefix {
            tokens,
            terminated: true,
        })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens with the trailing eos stripped.
    pub fn content(&self) -> &[TokenId] {
        if self.terminated {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    fn child(&self, token: TokenId, eos: TokenId) -> Prefix {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);
        Prefix {
            tokens,
            terminated: token == eos,
        }
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&encode_tokens(&self.tokens))
    }
}

/// Canonical text encoding of a token-id list: ids joined by `.`, the empty
/// list written as `-`. Used by the checkpoint and oracle dump formats.
pub fn encode_tokens(tokens: &[TokenId]) -> String {
    if tokens.is_empty() {
        "-".to_string()
    } else {
        tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(".")
    }
}

/// Inverse of [`encode_tokens`].
pub fn decode_tokens(text: &str) -> Result<Vec<TokenId>, SeqError> {
    if text == "-" {
        return Ok(Vec::new());
    }
    text.split('.')
        .map(|part| {
            part.parse::<TokenId>()
                .map_err(|_| SeqError::InvalidSequence(format!("bad token id {part:?}")))
        })
        .collect()
}

/// A training example: an id standing in for the conditioning input, and a
/// terminated reference sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthPair {
    pub example_id: u64,
    pub reference: Prefix,
}

impl GroundTruthPair {
    pub fn new(example_id: u64, reference: Prefix) -> Result<Self, SeqError> {
        if !reference.is_terminated() {
            return Err(SeqError::InvalidSequence(
                "reference must be terminated".into(),
            ));
        }
        Ok(GroundTruthPair {
            example_id,
            reference,
        })
    }
}

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;

/// The finite sequence space over a vocabulary up to a horizon, together
/// with the eos enforcement rule and brute-force enumeration.
#[derive(Debug, Clone, Copy)]
pub struct SeqSpace {
    vocab: Vocab,
    horizon: usize,
    budget: u128,
}

impl SeqSpace {
    pub fn new(vocab: Vocab, horizon: usize) -> Self {
        assert!(horizon >= 1, "horizon must be at least 1");
        SeqSpace {
            vocab,
            horizon,
            budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: u128) -> Self {
        self.budget = budget;
        self
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Tokens that may follow `prefix`: the full alphabet below the
    /// enforcement boundary, `{eos}` at length `horizon - 1`.
    pub fn allowed_tokens(&self, prefix: &Prefix) -> Result<Vec<TokenId>, SeqError> {
        if prefix.is_terminated() {
            return Err(SeqError::AlreadyTerminated);
        }
        if prefix.len() >= self.horizon {
            return Err(SeqError::HorizonExceeded {
                len: prefix.len(),
                horizon: self.horizon,
            });
        }
        if prefix.len() == self.horizon - 1 {
            Ok(vec![self.vocab.eos()])
        } else {
            Ok(self.vocab.tokens().collect())
        }
    }

    /// Appends a token; the result is terminated iff the token is eos.
    pub fn transition(&self, prefix: &Prefix, token: TokenId) -> Result<Prefix, SeqError> {
        let allowed = self.allowed_tokens(prefix)?;
        if !allowed.contains(&token) {
            return Err(SeqError::ForbiddenToken { token });
        }
        Ok(prefix.child(token, self.vocab.eos()))
    }

    fn check_budget(&self) -> Result<(), SeqError> {
        let size = (self.vocab.size() as u128)
            .checked_pow(self.horizon as u32)
            .unwrap_or(u128::MAX);
        if size > self.budget {
            Err(SeqError::EnumerationBudgetExceeded {
                size,
                budget: self.budget,
            })
        } else {
            Ok(())
        }
    }

    /// All complete sequences, ordered by length then lexicographically.
    pub fn enumerate_complete(&self) -> Result<Vec<Prefix>, SeqError> {
        self.check_budget()?;
        let eos = self.vocab.eos();
        let mut out = Vec::new();
        for layer in self.content_layers() {
            for content in layer {
                let mut tokens = content;
                tokens.push(eos);
                out.push(Prefix {
                    tokens,
                    terminated: true,
                });
            }
        }
        Ok(out)
    }

    /// All unterminated prefixes (length `< horizon`), ordered by length
    /// then lexicographically.
    pub fn enumerate_prefixes(&self) -> Result<Vec<Prefix>, SeqError> {
        self.check_budget()?;
        let mut out = Vec::new();
        for layer in self.content_layers() {
            for content in layer {
                out.push(Prefix {
                    tokens: content,
                    terminated: false,
                });
            }
        }
        Ok(out)
    }

    /// Content-token strings grouped by length 0 ..= horizon-1.
    fn content_layers(&self) -> Vec<Vec<Vec<TokenId>>> {
        let content: Vec<TokenId> = self.vocab.content_tokens().collect();
        let mut layers = Vec::with_capacity(self.horizon);
        let mut layer: Vec<Vec<TokenId>> = vec![Vec::new()];
        for len in 0..self.horizon {
            layers.push(layer.clone());
            if len + 1 < self.horizon {
                let mut next = Vec::with_capacity(layer.len() * content.len());
                for seq in &layer {
                    for &t in &content {
                        let mut child = seq.clone();
                        child.push(t);
                        next.push(child);
                    }
                }
                layer = next;
            }
        }
        layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc_vocab() -> Vocab {
        // a=0, b=1, eos=2
        Vocab::with_eos_last(3).unwrap()
    }

    #[test]
    fn transition_appends_and_terminates() {
        let space = SeqSpace::new(abc_vocab(), 4);
        let a = space.transition(&Prefix::empty(), 0).unwrap();
        assert_eq!(a.tokens(), &[0]);
        assert!(!a.is_terminated());
        let done = space.transition(&a, 2).unwrap();
        assert_eq!(done.tokens(), &[0, 2]);
        assert!(done.is_terminated());
        assert_eq!(
            space.transition(&done, 1),
            Err(SeqError::AlreadyTerminated)
        );
    }

    #[test]
    fn allowed_tokens_respects_enforcement_boundary() {
        let space = SeqSpace::new(abc_vocab(), 2);
        assert_eq!(space.allowed_tokens(&Prefix::empty()).unwrap(), vec![0, 1, 2]);
        let a = space.transition(&Prefix::empty(), 0).unwrap();
        assert_eq!(space.allowed_tokens(&a).unwrap(), vec![2]);
        assert_eq!(space.transition(&a, 1), Err(SeqError::ForbiddenToken { token: 1 }));

        let space4 = SeqSpace::new(abc_vocab(), 4);
        let ab = Prefix::from_tokens(vec![0, 1], abc_vocab()).unwrap();
        assert_eq!(space4.allowed_tokens(&ab).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn enumerate_complete_matches_hand_lists() {
        let space = SeqSpace::new(abc_vocab(), 2);
        let ys = space.enumerate_complete().unwrap();
        let toks: Vec<&[TokenId]> = ys.iter().map(|y| y.tokens()).collect();
        assert_eq!(toks, vec![&[2][..], &[0, 2][..], &[1, 2][..]]);

        let space = SeqSpace::new(Vocab::with_eos_last(2).unwrap(), 3);
        let ys = space.enumerate_complete().unwrap();
        let toks: Vec<&[TokenId]> = ys.iter().map(|y| y.tokens()).collect();
        assert_eq!(toks, vec![&[1][..], &[0, 1][..], &[0, 0, 1][..]]);

        let space = SeqSpace::new(Vocab::with_eos_last(1).unwrap(), 1);
        let ys = space.enumerate_complete().unwrap();
        assert_eq!(ys.len(), 1);
        assert_eq!(ys[0].tokens(), &[0]);
    }

    #[test]
    fn enumeration_sizes_match_closed_form() {
        for vocab_size in 2..=4u32 {
            for horizon in 1..=5usize {
                let space = SeqSpace::new(Vocab::with_eos_last(vocab_size).unwrap(), horizon);
                let expected: u128 = (0..horizon)
                    .map(|l| ((vocab_size - 1) as u128).pow(l as u32))
                    .sum();
                assert_eq!(space.enumerate_complete().unwrap().len() as u128, expected);
                assert_eq!(space.enumerate_prefixes().unwrap().len() as u128, expected);
            }
        }
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let space = SeqSpace::new(abc_vocab(), 4).with_budget(10);
        assert!(matches!(
            space.enumerate_complete(),
            Err(SeqError::EnumerationBudgetExceeded { .. })
        ));
    }

    #[test]
    fn transition_is_injective_on_prefix_token_pairs() {
        let space = SeqSpace::new(abc_vocab(), 4);
        let mut seen = std::collections::BTreeSet::new();
        for p in space.enumerate_prefixes().unwrap() {
            for t in space.allowed_tokens(&p).unwrap() {
                let child = space.transition(&p, t).unwrap();
                assert!(seen.insert((child.tokens().to_vec(), child.is_terminated())));
            }
        }
    }

    #[test]
    fn over_length_prefixes_report_horizon_exceeded() {
        let space = SeqSpace::new(abc_vocab(), 2);
        let too_long = Prefix::from_tokens(vec![0, 1, 0], abc_vocab()).unwrap();
        assert_eq!(
            space.allowed_tokens(&too_long),
            Err(SeqError::HorizonExceeded {
                len: 3,
                horizon: 2
            })
        );
    }

    #[test]
    fn prefix_validation_rejects_interior_eos() {
        let v = abc_vocab();
        assert!(Prefix::from_tokens(vec![2, 0], v).is_err());
        assert!(Prefix::from_tokens(vec![0, 2], v).unwrap().is_terminated());
        assert!(Prefix::from_tokens(vec![9], v).is_err());
    }

    #[test]
    fn token_encoding_round_trips() {
        for toks in [vec![], vec![0], vec![3, 1, 4, 1, 5]] {
            assert_eq!(decode_tokens(&encode_tokens(&toks)).unwrap(), toks);
        }
        assert!(decode_tokens("0..1").is_err());
    }
}
