//! Property tests over randomized spaces, rewards, and tables.

use proptest::prelude::*;

use seqlab::models::{ParamKey, ParamTable, TableKind};
use seqlab::reward::{incremental_payoff, payoff, Payoff, RewardSpec};
use seqlab::sampling::{draw_proposal_batch, normalized_payoff_weights, ProposalConfig};
use seqlab::seq::{Prefix, SeqSpace, TokenId, Vocab};

fn space_strategy() -> impl Strategy<Value = SeqSpace> {
    (2u32..=5, 2usize..=5).prop_map(|(vocab_size, horizon)| {
        SeqSpace::new(Vocab::with_eos_last(vocab_size).unwrap(), horizon)
    })
}

fn reward_strategy() -> impl Strategy<Value = RewardSpec> {
    prop_oneof![
        Just(RewardSpec::ExactMatch),
        Just(RewardSpec::PrefixMatch),
        Just(RewardSpec::scaled_bleu()),
    ]
}

proptest! {
    #[test]
    fn telescoping_holds_for_random_instances(
        space in space_strategy(),
        spec in reward_strategy(),
        seed in 0u64..1000,
    ) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        use rand::{Rng, SeedableRng};
        let content_count = (space.vocab().size() - 1) as usize;
        let ref_len = rng.gen_range(0..space.horizon());
        let content: Vec<TokenId> =
            (0..ref_len).map(|_| rng.gen_range(0..content_count) as TokenId).collect();
        let reference = Prefix::reference(&content, space.vocab()).unwrap();
        for y in space.enumerate_complete().unwrap() {
            let mut acc = 0.0;
            let mut prefix = Prefix::empty();
            for &t in y.tokens() {
                acc += incremental_payoff(&space, &spec, &prefix, t, &reference).unwrap();
                prefix = space.transition(&prefix, t).unwrap();
            }
            let direct = payoff(&spec, &y, &reference)
                - payoff(&spec, &Prefix::empty(), &reference);
            prop_assert!((acc - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn proposal_draws_stay_in_the_sequence_space(
        space in space_strategy(),
        seed in 0u64..1000,
        num_samples in 1usize..8,
    ) {
        use rand::SeedableRng;
        let horizon = space.horizon();
        prop_assume!(horizon >= 2);
        let content: Vec<TokenId> = vec![0; horizon - 1];
        let reference = Prefix::reference(&content, space.vocab()).unwrap();
        let config = ProposalConfig { num_samples, ..Default::default() };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let batch = draw_proposal_batch(&space, &reference, &mut rng, &config).unwrap();
        prop_assert_eq!(batch.len(), num_samples);
        for sample in &batch {
            prop_assert!(sample.is_terminated());
            prop_assert_eq!(sample.len(), reference.len());
            let reparsed = Prefix::from_tokens(sample.tokens().to_vec(), space.vocab());
            prop_assert!(reparsed.is_ok());
        }
    }

    #[test]
    fn normalized_weights_sum_to_one(
        space in space_strategy(),
        spec in reward_strategy(),
        seed in 0u64..1000,
        tau in 0.01f64..5.0,
    ) {
        use rand::SeedableRng;
        let horizon = space.horizon();
        prop_assume!(horizon >= 2);
        let content: Vec<TokenId> = vec![0; horizon - 1];
        let reference = Prefix::reference(&content, space.vocab()).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let samples = draw_proposal_batch(
            &space,
            &reference,
            &mut rng,
            &ProposalConfig::default(),
        ).unwrap();
        let batch = normalized_payoff_weights(samples, &reference, tau, &spec);
        let sum: f64 = batch.weights().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(batch.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn policy_dist_is_shift_invariant_and_normalized(
        space in space_strategy(),
        content in prop::collection::vec(0u32..1, 0..3),
        shift in -50.0f64..50.0,
        logits in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let content: Vec<TokenId> = content
            .into_iter()
            .map(|t| t.min(space.vocab().size() - 2))
            .collect();
        prop_assume!(content.len() < space.horizon());
        let prefix = Prefix::from_tokens(content, space.vocab());
        prop_assume!(prefix.is_ok());
        let prefix = prefix.unwrap();
        let allowed = space.allowed_tokens(&prefix).unwrap();

        let mut table = ParamTable::new(TableKind::PolicyLogits);
        let mut shifted = ParamTable::new(TableKind::PolicyLogits);
        for (i, &w) in allowed.iter().enumerate() {
            let logit = logits[i % logits.len()];
            table.set(ParamKey::new(0, prefix.tokens(), w), logit);
            shifted.set(ParamKey::new(0, prefix.tokens(), w), logit + shift);
        }
        let p = table.policy_dist(&space, 0, &prefix).unwrap();
        let q = shifted.policy_dist(&space, 0, &prefix).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exact(
        entries in prop::collection::vec(
            (0u64..4, prop::collection::vec(0u32..2, 0..3), 0u32..3, -1e6f64..1e6),
            0..20,
        ),
    ) {
        let space = SeqSpace::new(Vocab::with_eos_last(3).unwrap(), 4);
        let mut table = ParamTable::new(TableKind::QValues);
        for (example, prefix, token, value) in entries {
            // keep prefixes legal: content tokens only
            let prefix: Vec<TokenId> = prefix.into_iter().map(|t| t.min(1)).collect();
            table.set(ParamKey { example, prefix, token: token.min(2) }, value);
        }
        let text = table.write_checkpoint(&space);
        let (parsed, vocab, horizon) = ParamTable::read_checkpoint(&text).unwrap();
        prop_assert_eq!(vocab, space.vocab());
        prop_assert_eq!(horizon, space.horizon());
        for (key, &value) in table.iter() {
            prop_assert_eq!(parsed.get(key).to_bits(), value.to_bits());
        }
        prop_assert_eq!(parsed.write_checkpoint(&space), text);
    }

    #[test]
    fn bleu_is_bounded_by_candidate_length(
        candidate in prop::collection::vec(0u32..4, 0..8),
        reference in prop::collection::vec(0u32..4, 1..8),
    ) {
        let spec = RewardSpec::scaled_bleu();
        let score = spec.complete(&candidate, &reference);
        prop_assert!(score >= 0.0);
        prop_assert!(score <= candidate.len() as f64 + 1e-12);
    }
}
