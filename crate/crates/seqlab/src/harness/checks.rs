//! Invariant and gradient-check battery.
//!
//! Every module's numerical invariants are exercised here against
//! brute-force constructions: randomized marginal-match instances, the
//! three-way oracle equivalence, fixed-point certificates, the
//! entropy-regularized policy-gradient identity, the cross-entropy
//! decomposition, estimator consistency, and finite-difference checks of
//! every loss. The CLI `check` subcommand runs the battery and fails on
//! any violation; the acceptance suite reuses the same functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::models::{
    fd_gradcheck, GradAccumulator, OptimizerKind, ParamKey, ParamTable, TableKind,
};
use crate::numerics::{entropy, logsumexp, softmax};
use crate::oracle::{
    exact_pr, induced_marginal, oracle_from_marginals, policy_evaluation, solve_soft_oracle,
    soft_value_iteration, SoftOracle,
};
use crate::reward::{incremental_payoff, payoff, Payoff, RewardSpec, TableReward};
use crate::sampling::normalized_payoff_weights;
use crate::seq::{GroundTruthPair, Prefix, SeqSpace, TokenId, Vocab};
use crate::trainers::{
    ac_actor_loss, ac_critic_loss, erac_actor_loss, erac_critic_loss, mle_loss, raml_loss,
    softq_loss, vaml_loss, Algorithm, CriticPair, TrainerConfig,
};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: true,
            detail,
        }
    }

    fn of(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

/// One randomized instance: a small space, a reference, a temperature, and
/// an i.i.d. uniform[0,1] per-sequence reward table.
pub struct RandomInstance {
    pub space: SeqSpace,
    pub pair: GroundTruthPair,
    pub tau: f64,
    pub reward: TableReward,
}

/// Deterministic set of randomized instances covering vocab sizes {3, 4},
/// horizons {3, 4, 5}, and temperatures {0.3, 1, 3}.
pub fn random_instances(count: usize, seed: u64) -> Vec<RandomInstance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let vocab_sizes = [3u32, 4];
    let horizons = [3usize, 4, 5];
    let taus = [0.3, 1.0, 3.0];
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let vocab = Vocab::with_eos_last(vocab_sizes[i % vocab_sizes.len()]).unwrap();
        let horizon = horizons[(i / vocab_sizes.len()) % horizons.len()];
        let tau = taus[i % taus.len()];
        let space = SeqSpace::new(vocab, horizon);
        let reward = TableReward::uniform_random(&space, &mut rng).unwrap();
        let complete = space.enumerate_complete().unwrap();
        let reference = complete[rng.gen_range(0..complete.len())].clone();
        instances.push(RandomInstance {
            space,
            pair: GroundTruthPair::new(i as u64, reference).unwrap(),
            tau,
            reward,
        });
    }
    instances
}

pub fn check_enumeration_sizes() -> CheckResult {
    for vocab_size in 2..=4u32 {
        for horizon in 1..=5usize {
            let space = SeqSpace::new(Vocab::with_eos_last(vocab_size).unwrap(), horizon);
            let expected: usize = (0..horizon)
                .map(|l| ((vocab_size - 1) as usize).pow(l as u32))
                .sum();
            let complete = space.enumerate_complete().unwrap().len();
            let prefixes = space.enumerate_prefixes().unwrap().len();
            if complete != expected || prefixes != expected {
                return CheckResult::of(
                    "enumeration-sizes",
                    false,
                    format!("|W|={vocab_size} T={horizon}: got {complete}/{prefixes}, want {expected}"),
                );
            }
        }
    }
    CheckResult::pass("enumeration-sizes", "closed form matches".into())
}

pub fn check_telescoping() -> CheckResult {
    let vocab = Vocab::with_eos_last(3).unwrap();
    let space = SeqSpace::new(vocab, 4);
    let reference = Prefix::reference(&[0, 1, 0], vocab).unwrap();
    let mut worst = 0.0_f64;
    for spec in [
        RewardSpec::ExactMatch,
        RewardSpec::PrefixMatch,
        RewardSpec::scaled_bleu(),
    ] {
        for y in space.enumerate_complete().unwrap() {
            let mut acc = 0.0;
            let mut prefix = Prefix::empty();
            for &t in y.tokens() {
                acc += incremental_payoff(&space, &spec, &prefix, t, &reference).unwrap();
                prefix = space.transition(&prefix, t).unwrap();
            }
            let total =
                payoff(&spec, &y, &reference) - payoff(&spec, &Prefix::empty(), &reference);
            worst = worst.max((acc - total).abs());
        }
    }
    CheckResult::of(
        "telescoping",
        worst <= 1e-12,
        format!("max |sum r - (R(y) - R(empty))| = {worst:.3e}"),
    )
}

pub fn check_eos_increment_zero() -> CheckResult {
    let vocab = Vocab::with_eos_last(3).unwrap();
    let space = SeqSpace::new(vocab, 4);
    let reference = Prefix::reference(&[1, 0], vocab).unwrap();
    for spec in [
        RewardSpec::ExactMatch,
        RewardSpec::PrefixMatch,
        RewardSpec::scaled_bleu(),
    ] {
        for p in space.enumerate_prefixes().unwrap() {
            let r = incremental_payoff(&space, &spec, &p, vocab.eos(), &reference).unwrap();
            if r != 0.0 {
                return CheckResult::of(
                    "eos-increment-zero",
                    false,
                    format!("nonzero eos increment {r:e} at {p}"),
                );
            }
        }
    }
    CheckResult::pass("eos-increment-zero", "exactly zero everywhere".into())
}

pub fn check_transition_injective() -> CheckResult {
    let space = SeqSpace::new(Vocab::with_eos_last(4).unwrap(), 4);
    let mut seen = std::collections::BTreeSet::new();
    let mut total = 0usize;
    for p in space.enumerate_prefixes().unwrap() {
        for t in space.allowed_tokens(&p).unwrap() {
            let child = space.transition(&p, t).unwrap();
            seen.insert((child.tokens().to_vec(), child.is_terminated()));
            total += 1;
        }
    }
    CheckResult::of(
        "transition-injective",
        seen.len() == total,
        format!("{} distinct children of {} pairs", seen.len(), total),
    )
}

/// Independent n-gram counter used as the BLEU oracle: quadratic scans, no
/// hash maps, geometric mean via powf.
pub fn naive_bleu_scaled(candidate: &[TokenId], reference: &[TokenId]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut product = 1.0_f64;
    for n in 1..=4usize {
        let total = candidate.len().saturating_sub(n - 1);
        let mut clipped = 0usize;
        // count each distinct candidate n-gram once, at its first position
        for i in 0..total {
            let gram = &candidate[i..i + n];
            let first = (0..total).find(|&j| &candidate[j..j + n] == gram).unwrap();
            if first != i {
                continue;
            }
            let cand_count = (0..total).filter(|&j| &candidate[j..j + n] == gram).count();
            let ref_count = if reference.len() >= n {
                (0..=reference.len() - n)
                    .filter(|&j| &reference[j..j + n] == gram)
                    .count()
            } else {
                0
            };
            clipped += cand_count.min(ref_count);
        }
        product *= (clipped + 1) as f64 / (total + 1) as f64;
    }
    let geometric_mean = product.powf(0.25);
    let bp = if candidate.len() < reference.len() {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    } else {
        1.0
    };
    geometric_mean * bp * candidate.len() as f64
}

pub fn check_bleu_against_naive_oracle() -> CheckResult {
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    let spec = RewardSpec::scaled_bleu();
    let mut worst = 0.0_f64;
    for _ in 0..300 {
        let clen = rng.gen_range(0..=6);
        let rlen = rng.gen_range(1..=6);
        let candidate: Vec<TokenId> = (0..clen).map(|_| rng.gen_range(0..3)).collect();
        let reference: Vec<TokenId> = (0..rlen).map(|_| rng.gen_range(0..3)).collect();
        let fast = spec.complete(&candidate, &reference);
        let naive = naive_bleu_scaled(&candidate, &reference);
        worst = worst.max((fast - naive).abs());
    }
    CheckResult::of(
        "bleu-naive-oracle",
        worst <= 1e-12,
        format!("max |fast - naive| = {worst:.3e}"),
    )
}

pub fn check_marginal_match(instances: &[RandomInstance]) -> CheckResult {
    let mut worst = 0.0_f64;
    for inst in instances {
        let oracle =
            solve_soft_oracle(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        let induced = induced_marginal(&oracle).unwrap();
        let pr = exact_pr(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        worst = worst.max(induced.max_abs_diff(&pr));
    }
    CheckResult::of(
        "marginal-match",
        worst <= 1e-9,
        format!("max |induced - exact| = {worst:.3e} over {} instances", instances.len()),
    )
}

pub fn check_terminal_condition(instances: &[RandomInstance]) -> CheckResult {
    let mut worst = 0.0_f64;
    for inst in instances {
        let oracle =
            solve_soft_oracle(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        let eos = inst.space.vocab().eos();
        for key in oracle.q_map().keys() {
            let prefix = Prefix::from_tokens(key.clone(), inst.space.vocab()).unwrap();
            worst = worst.max(oracle.q(&prefix, eos).unwrap().abs());
        }
    }
    CheckResult::of(
        "terminal-condition",
        worst <= 1e-12,
        format!("max |q(prefix, eos)| = {worst:.3e}"),
    )
}

pub fn check_three_way_equivalence(instances: &[RandomInstance]) -> CheckResult {
    let mut worst = 0.0_f64;
    for inst in instances {
        let solved =
            solve_soft_oracle(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        let from_marginals =
            oracle_from_marginals(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        let iterated = soft_value_iteration(
            &inst.space,
            &inst.pair,
            inst.tau,
            &inst.reward,
            inst.space.horizon(),
        )
        .unwrap();
        worst = worst.max(solved.max_abs_diff(&from_marginals));
        worst = worst.max(solved.max_abs_diff(&iterated));
    }
    CheckResult::of(
        "three-way-oracle-equivalence",
        worst <= 1e-9,
        format!("max entrywise gap = {worst:.3e}"),
    )
}

pub fn check_shift_invariance() -> CheckResult {
    let inst = &random_instances(1, 77)[0];
    let oracle = solve_soft_oracle(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
    let mut worst = 0.0_f64;
    for row in oracle.q_map().values() {
        let base: Vec<f64> = row.iter().map(|&q| q / inst.tau).collect();
        let shifted: Vec<f64> = row.iter().map(|&q| (q + 3.7) / inst.tau).collect();
        for (a, b) in softmax(&base).iter().zip(softmax(&shifted)) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::of(
        "shift-invariance",
        worst <= 1e-12,
        format!("max token-target change under constant shift = {worst:.3e}"),
    )
}

/// The root value is the log-partition of the sequence distribution up to
/// the pay-off of the empty sequence: telescoping gives
/// `v(empty) = tau * log sum_y exp(R(y)/tau) - R(empty)`, which collapses
/// to the plain log-partition for pay-offs that score the empty sequence
/// zero (exact match against nonempty references, scaled BLEU).
pub fn check_log_partition(instances: &[RandomInstance]) -> CheckResult {
    let mut worst = 0.0_f64;
    let log_partition = |space: &SeqSpace, pair: &GroundTruthPair, tau: f64, reward: &dyn Payoff| {
        let scores: Vec<f64> = space
            .enumerate_complete()
            .unwrap()
            .iter()
            .map(|y| payoff(reward, y, &pair.reference) / tau)
            .collect();
        tau * logsumexp(&scores)
    };
    for inst in instances {
        let oracle =
            solve_soft_oracle(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        let empty_payoff = payoff(&inst.reward, &Prefix::empty(), &inst.pair.reference);
        let expected =
            log_partition(&inst.space, &inst.pair, inst.tau, &inst.reward) - empty_payoff;
        worst = worst.max((oracle.v(&Prefix::empty()).unwrap() - expected).abs());
    }
    // literal form on a pay-off with zero empty-sequence score
    let vocab = Vocab::with_eos_last(3).unwrap();
    let space = SeqSpace::new(vocab, 4);
    let pair = GroundTruthPair::new(
        0,
        Prefix::reference(&[0, 1, 0], vocab).unwrap(),
    )
    .unwrap();
    for tau in [0.3, 1.0] {
        let spec = RewardSpec::scaled_bleu();
        let oracle = solve_soft_oracle(&space, &pair, tau, &spec).unwrap();
        let expected = log_partition(&space, &pair, tau, &spec);
        worst = worst.max((oracle.v(&Prefix::empty()).unwrap() - expected).abs());
    }
    CheckResult::of(
        "log-partition",
        worst <= 1e-9,
        format!("max |v(empty) - (tau log Z - R(empty))| = {worst:.3e}"),
    )
}

pub fn check_policy_eval_fixed_point() -> CheckResult {
    let mut worst = 0.0_f64;
    for inst in random_instances(4, 101) {
        let oracle = solve_soft_oracle(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        let pe = policy_evaluation(&inst.space, &inst.pair, inst.tau, &inst.reward, |p, _| {
            oracle.token_target(p).unwrap()
        })
        .unwrap();
        for (key, row) in oracle.q_map() {
            for (a, b) in row.iter().zip(&pe.q_map()[key]) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((oracle.v_map()[key] - pe.v_map()[key]).abs());
        }
    }
    CheckResult::of(
        "policy-evaluation-fixed-point",
        worst <= 1e-9,
        format!("max |pe(optimal policy) - oracle| = {worst:.3e}"),
    )
}

pub fn check_weights_match_exact_pr() -> CheckResult {
    let mut worst = 0.0_f64;
    for inst in random_instances(6, 55) {
        let support = inst.space.enumerate_complete().unwrap();
        let batch = normalized_payoff_weights(
            support,
            &inst.pair.reference,
            inst.tau,
            &inst.reward,
        );
        let pr = exact_pr(&inst.space, &inst.pair, inst.tau, &inst.reward).unwrap();
        for (w, p) in batch.weights().iter().zip(pr.probs()) {
            worst = worst.max((w - p).abs());
        }
        let sum: f64 = batch.weights().iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    CheckResult::of(
        "weights-match-exact-pr",
        worst <= 1e-10,
        format!("max |weight - P_R| = {worst:.3e}"),
    )
}

fn toy_space_and_pair() -> (SeqSpace, GroundTruthPair) {
    let vocab = Vocab::with_eos_last(3).unwrap();
    let space = SeqSpace::new(vocab, 3);
    let reference = Prefix::reference(&[0, 1], vocab).unwrap();
    (space, GroundTruthPair::new(0, reference).unwrap())
}

fn random_actor(space: &SeqSpace, example: u64, rng: &mut impl Rng) -> ParamTable {
    let mut table = ParamTable::new(TableKind::PolicyLogits);
    for prefix in space.enumerate_prefixes().unwrap() {
        for w in space.allowed_tokens(&prefix).unwrap() {
            table.set(
                ParamKey::new(example, prefix.tokens(), w),
                rng.gen_range(-1.0..1.0),
            );
        }
    }
    table
}

fn random_critic(space: &SeqSpace, example: u64, rng: &mut impl Rng) -> ParamTable {
    let mut table = ParamTable::new(TableKind::QValues);
    for prefix in space.enumerate_prefixes().unwrap() {
        for w in space.allowed_tokens(&prefix).unwrap() {
            table.set(
                ParamKey::new(example, prefix.tokens(), w),
                rng.gen_range(-1.0..1.0),
            );
        }
    }
    table
}

fn sequence_log_prob(
    actor: &ParamTable,
    space: &SeqSpace,
    example: u64,
    y: &Prefix,
) -> f64 {
    let mut log_prob = 0.0;
    let mut prefix = Prefix::empty();
    for &t in y.tokens() {
        let allowed = space.allowed_tokens(&prefix).unwrap();
        let probs = actor.policy_dist(space, example, &prefix).unwrap();
        let idx = allowed.iter().position(|&w| w == t).unwrap();
        log_prob += probs[idx].ln();
        prefix = space.transition(&prefix, t).unwrap();
    }
    log_prob
}

/// Sequence-level cross-entropy of the actor against the marginal induced
/// by a critic's token targets, computed by enumeration.
fn sequence_ce(
    critic: &ParamTable,
    actor: &ParamTable,
    space: &SeqSpace,
    example: u64,
    tau: f64,
) -> f64 {
    let mut ce = 0.0;
    for y in space.enumerate_complete().unwrap() {
        let mut marginal = 1.0;
        let mut prefix = Prefix::empty();
        for &t in y.tokens() {
            let allowed = space.allowed_tokens(&prefix).unwrap();
            let row = critic.row(space, example, &prefix).unwrap();
            let scaled: Vec<f64> = row.iter().map(|&q| q / tau).collect();
            let target = softmax(&scaled);
            let idx = allowed.iter().position(|&w| w == t).unwrap();
            marginal *= target[idx];
            prefix = space.transition(&prefix, t).unwrap();
        }
        ce -= marginal * sequence_log_prob(actor, space, example, &y);
    }
    ce
}

/// Expected per-step token-level cross-entropy under the critic's induced
/// marginal, computed by enumeration.
fn expected_token_ce(
    critic: &ParamTable,
    actor: &ParamTable,
    space: &SeqSpace,
    example: u64,
    tau: f64,
) -> f64 {
    let mut total = 0.0;
    for y in space.enumerate_complete().unwrap() {
        let mut marginal = 1.0;
        let mut ce_sum = 0.0;
        let mut prefix = Prefix::empty();
        for &t in y.tokens() {
            let allowed = space.allowed_tokens(&prefix).unwrap();
            let row = critic.row(space, example, &prefix).unwrap();
            let scaled: Vec<f64> = row.iter().map(|&q| q / tau).collect();
            let target = softmax(&scaled);
            let actor_probs = actor.policy_dist(space, example, &prefix).unwrap();
            let ce: f64 = target
                .iter()
                .zip(&actor_probs)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &q)| -p * q.ln())
                .sum();
            ce_sum += ce;
            let idx = allowed.iter().position(|&w| w == t).unwrap();
            marginal *= target[idx];
            prefix = space.transition(&prefix, t).unwrap();
        }
        total += marginal * ce_sum;
    }
    total
}

pub fn check_ce_decomposition() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let tau = 0.7;
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let critic = random_critic(&space, pair.example_id, &mut rng);
        let actor = random_actor(&space, pair.example_id, &mut rng);
        let lhs = sequence_ce(&critic, &actor, &space, pair.example_id, tau);
        let rhs = expected_token_ce(&critic, &actor, &space, pair.example_id, tau);
        worst = worst.max((lhs - rhs).abs());
    }
    CheckResult::of(
        "ce-decomposition",
        worst <= 1e-10,
        format!("max |sequence CE - expected token CE| = {worst:.3e}"),
    )
}

pub fn check_kappa_linearity() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    let actor = random_actor(&space, pair.example_id, &mut rng);
    let critic = random_critic(&space, pair.example_id, &mut rng);
    let batch = normalized_payoff_weights(
        space.enumerate_complete().unwrap(),
        &pair.reference,
        1.0,
        &RewardSpec::ExactMatch,
    );
    let at = |kappa: f64| {
        vaml_loss(&actor, &critic, &space, &pair, &batch, 1.0, kappa)
            .unwrap()
            .0
    };
    let full = at(1.0);
    let none = at(0.0);
    let mut worst = 0.0_f64;
    for kappa in [0.2, 0.5, 0.8] {
        worst = worst.max((at(kappa) - (kappa * full + (1.0 - kappa) * none)).abs());
    }
    CheckResult::of(
        "kappa-linearity",
        worst <= 1e-12,
        format!("max deviation from linear mixture = {worst:.3e}"),
    )
}

pub fn check_vaml_full_support_equals_sequence_ce() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let tau = 1.0;
    let spec = RewardSpec::ExactMatch;
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let actor = random_actor(&space, pair.example_id, &mut rng);
    let oracle = solve_soft_oracle(&space, &pair, tau, &spec).unwrap();
    let mut critic = ParamTable::new(TableKind::QValues);
    oracle.load_into_table(&mut critic, pair.example_id);
    let support = space.enumerate_complete().unwrap();
    let pr = exact_pr(&space, &pair, tau, &spec).unwrap();
    let batch = normalized_payoff_weights(support, &pair.reference, tau, &spec);
    let (loss, _) = vaml_loss(&actor, &critic, &space, &pair, &batch, tau, 1.0).unwrap();
    // with an exact critic the induced marginal is P_R, so the kappa = 1
    // objective collapses to the sequence-level cross-entropy
    let mut ce = 0.0;
    for (y, &p) in pr.support().iter().zip(pr.probs()) {
        ce -= p * sequence_log_prob(&actor, &space, pair.example_id, y);
    }
    let gap = (loss - ce).abs();
    CheckResult::of(
        "vaml-sequence-ce-equivalence",
        gap <= 1e-9,
        format!("|vaml(kappa=1, exact critic) - CE(P_R, P_theta)| = {gap:.3e}"),
    )
}

pub fn check_fixed_point_certificates() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let tau = 1.0;
    let spec = RewardSpec::ExactMatch;
    let mut worst_softq = 0.0_f64;
    let oracle = solve_soft_oracle(&space, &pair, tau, &spec).unwrap();
    let mut critic = ParamTable::new(TableKind::QValues);
    oracle.load_into_table(&mut critic, pair.example_id);
    for y in space.enumerate_complete().unwrap() {
        let (loss, _) = softq_loss(&critic, &space, &spec, &pair, &y, tau).unwrap();
        worst_softq = worst_softq.max(loss);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(123);
    let actor = random_actor(&space, pair.example_id, &mut rng);
    let pe = policy_evaluation(&space, &pair, tau, &spec, |p, _| {
        actor.policy_dist(&space, pair.example_id, p).unwrap()
    })
    .unwrap();
    let mut pair_tables = CriticPair::new();
    pe.load_into_table(&mut pair_tables.online, pair.example_id);
    pair_tables.sync();
    let mut worst_td = 0.0_f64;
    for y in space.enumerate_complete().unwrap() {
        let terms =
            erac_critic_loss(&pair_tables, &actor, &space, &spec, &pair, &y, tau, 0.0).unwrap();
        worst_td = worst_td.max(terms.td);
    }
    CheckResult::of(
        "fixed-point-certificates",
        worst_softq <= 1e-9 && worst_td <= 1e-9,
        format!("max softq residual = {worst_softq:.3e}, max TD residual = {worst_td:.3e}"),
    )
}

/// Entropy-regularized return of a tabular policy, by enumeration.
fn enumerated_return(
    actor: &ParamTable,
    space: &SeqSpace,
    pair: &GroundTruthPair,
    spec: &dyn Payoff,
    tau: f64,
) -> f64 {
    let mut total = 0.0;
    for y in space.enumerate_complete().unwrap() {
        let mut prob = 1.0;
        let mut entropy_sum = 0.0;
        let mut prefix = Prefix::empty();
        for &t in y.tokens() {
            let allowed = space.allowed_tokens(&prefix).unwrap();
            let probs = actor.policy_dist(space, pair.example_id, &prefix).unwrap();
            entropy_sum += entropy(&probs);
            let idx = allowed.iter().position(|&w| w == t).unwrap();
            prob *= probs[idx];
            prefix = space.transition(&prefix, t).unwrap();
        }
        total += prob * (payoff(spec, &y, &pair.reference) + tau * entropy_sum);
    }
    total
}

/// Expected analytic actor gradient with the exact q-tables of the current
/// policy, by enumeration over trajectories.
fn enumerated_actor_gradient(
    actor: &ParamTable,
    space: &SeqSpace,
    pair: &GroundTruthPair,
    spec: &dyn Payoff,
    tau: f64,
) -> GradAccumulator {
    let pe = policy_evaluation(space, pair, tau, spec, |p, _| {
        actor.policy_dist(space, pair.example_id, p).unwrap()
    })
    .unwrap();
    let mut critic = ParamTable::new(TableKind::QValues);
    pe.load_into_table(&mut critic, pair.example_id);
    let mut expected = GradAccumulator::new();
    for y in space.enumerate_complete().unwrap() {
        let mut prob = 1.0;
        let mut prefix = Prefix::empty();
        for &t in y.tokens() {
            let allowed = space.allowed_tokens(&prefix).unwrap();
            let probs = actor.policy_dist(space, pair.example_id, &prefix).unwrap();
            let idx = allowed.iter().position(|&w| w == t).unwrap();
            prob *= probs[idx];
            prefix = space.transition(&prefix, t).unwrap();
        }
        // ascent gradient of the trajectory's actor objective
        let (_, grads) =
            erac_actor_loss(actor, &critic, space, pair, &y, tau, 0.0).unwrap();
        expected.add_scaled(&grads, -prob);
    }
    expected
}

pub fn check_policy_gradient_theorem() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let spec = RewardSpec::ExactMatch;
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut worst = 0.0_f64;
    for &tau in &[0.05, 0.5] {
        for _ in 0..5 {
            let mut actor = random_actor(&space, pair.example_id, &mut rng);
            let analytic = enumerated_actor_gradient(&actor, &space, &pair, &spec, tau);
            let keys: Vec<ParamKey> = analytic.keys().cloned().collect();
            let epsilon = 1e-5;
            for key in keys {
                let original = actor.get(&key);
                actor.set(key.clone(), original + epsilon);
                let plus = enumerated_return(&actor, &space, &pair, &spec, tau);
                actor.set(key.clone(), original - epsilon);
                let minus = enumerated_return(&actor, &space, &pair, &spec, tau);
                actor.set(key.clone(), original);
                let fd = (plus - minus) / (2.0 * epsilon);
                let a = analytic.get(&key);
                let rel = (a - fd).abs() / f64::max(1e-8, a.abs() + fd.abs());
                worst = worst.max(rel);
            }
        }
    }
    CheckResult::of(
        "entropy-policy-gradient-theorem",
        worst <= 1e-4,
        format!("max relative error vs finite differences = {worst:.3e}"),
    )
}

/// Finite-difference validation of every loss. Returns one result per loss
/// so failures are attributable.
pub fn check_fd_suite() -> Vec<CheckResult> {
    let (space, pair) = toy_space_and_pair();
    let spec = RewardSpec::ExactMatch;
    let tau = 0.9;
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let trajectory = Prefix::reference(&[1, 0], space.vocab()).unwrap();
    let batch = normalized_payoff_weights(
        space.enumerate_complete().unwrap(),
        &pair.reference,
        tau,
        &spec,
    );
    let mut results = Vec::new();
    let epsilon = 1e-5;
    let tolerance = 1e-5;

    {
        let mut actor = random_actor(&space, pair.example_id, &mut rng);
        let (_, analytic) = mle_loss(&actor, &space, &pair).unwrap();
        let rel = fd_gradcheck(&mut actor, &analytic, epsilon, |t| {
            mle_loss(t, &space, &pair).unwrap().0
        })
        .unwrap();
        results.push(CheckResult::of(
            "fd-mle",
            rel <= tolerance,
            format!("max rel err = {rel:.3e}"),
        ));
    }
    {
        let mut actor = random_actor(&space, pair.example_id, &mut rng);
        let (_, analytic) = raml_loss(&actor, &space, &pair, &batch).unwrap();
        let rel = fd_gradcheck(&mut actor, &analytic, epsilon, |t| {
            raml_loss(t, &space, &pair, &batch).unwrap().0
        })
        .unwrap();
        results.push(CheckResult::of(
            "fd-raml",
            rel <= tolerance,
            format!("max rel err = {rel:.3e}"),
        ));
    }
    {
        let mut critic = random_critic(&space, pair.example_id, &mut rng);
        let (_, analytic) =
            softq_loss(&critic, &space, &spec, &pair, &trajectory, tau).unwrap();
        let rel = fd_gradcheck(&mut critic, &analytic, epsilon, |t| {
            softq_loss(t, &space, &spec, &pair, &trajectory, tau).unwrap().0
        })
        .unwrap();
        results.push(CheckResult::of(
            "fd-softq",
            rel <= tolerance,
            format!("max rel err = {rel:.3e}"),
        ));
    }
    for &kappa in &[0.0, 0.2, 1.0] {
        let mut actor = random_actor(&space, pair.example_id, &mut rng);
        let critic = random_critic(&space, pair.example_id, &mut rng);
        let (_, analytic) =
            vaml_loss(&actor, &critic, &space, &pair, &batch, tau, kappa).unwrap();
        let rel = fd_gradcheck(&mut actor, &analytic, epsilon, |t| {
            vaml_loss(t, &critic, &space, &pair, &batch, tau, kappa)
                .unwrap()
                .0
        })
        .unwrap();
        let name: &'static str = if kappa == 0.0 {
            "fd-vaml-kappa-0.0"
        } else if kappa == 0.2 {
            "fd-vaml-kappa-0.2"
        } else {
            "fd-vaml-kappa-1.0"
        };
        results.push(CheckResult::of(
            name,
            rel <= tolerance,
            format!("max rel err = {rel:.3e}"),
        ));
    }
    {
        let actor = random_actor(&space, pair.example_id, &mut rng);
        let mut critic_pair = CriticPair::new();
        critic_pair.online = random_critic(&space, pair.example_id, &mut rng);
        critic_pair.target = random_critic(&space, pair.example_id, &mut rng);
        let lambda_var = 0.7;
        let terms = erac_critic_loss(
            &critic_pair,
            &actor,
            &space,
            &spec,
            &pair,
            &trajectory,
            tau,
            lambda_var,
        )
        .unwrap();
        let analytic = terms.grads;
        let target = critic_pair.target.clone();
        let rel = fd_gradcheck(&mut critic_pair.online, &analytic, epsilon, |t| {
            let probe = CriticPair {
                online: t.clone(),
                target: target.clone(),
            };
            erac_critic_loss(&probe, &actor, &space, &spec, &pair, &trajectory, tau, lambda_var)
                .unwrap()
                .total()
        })
        .unwrap();
        results.push(CheckResult::of(
            "fd-erac-critic",
            rel <= tolerance,
            format!("max rel err = {rel:.3e}"),
        ));
    }
    {
        let mut actor = random_actor(&space, pair.example_id, &mut rng);
        let critic = random_critic(&space, pair.example_id, &mut rng);
        let (_, analytic) =
            erac_actor_loss(&actor, &critic, &space, &pair, &trajectory, tau, 0.3).unwrap();
        let rel = fd_gradcheck(&mut actor, &analytic, epsilon, |t| {
            erac_actor_loss(t, &critic, &space, &pair, &trajectory, tau, 0.3)
                .unwrap()
                .0
        })
        .unwrap();
        results.push(CheckResult::of(
            "fd-erac-actor",
            rel <= tolerance,
            format!("max rel err = {rel:.3e}"),
        ));
    }
    results
}

/// The gradient checker must catch a deliberately corrupted gradient: flip
/// the sign of the analytic accumulator and the reported error explodes.
pub fn check_gradcheck_detects_sign_errors() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let mut rng = ChaCha12Rng::seed_from_u64(808);
    let mut actor = random_actor(&space, pair.example_id, &mut rng);
    let (_, mut analytic) = mle_loss(&actor, &space, &pair).unwrap();
    analytic.scale(-1.0);
    let rel = fd_gradcheck(&mut actor, &analytic, 1e-5, |t| {
        mle_loss(t, &space, &pair).unwrap().0
    })
    .unwrap();
    CheckResult::of(
        "gradcheck-detects-sign-error",
        rel > 1e-2,
        format!("corrupted gradient reports rel err = {rel:.3e}"),
    )
}

pub fn check_smoothing_properties() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let spec = RewardSpec::ExactMatch;
    let actor = ParamTable::new(TableKind::PolicyLogits);
    let trajectory = pair.reference.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(5005);

    let mut constant = CriticPair::new();
    for prefix in space.enumerate_prefixes().unwrap() {
        for w in space.allowed_tokens(&prefix).unwrap() {
            constant
                .online
                .set(ParamKey::new(pair.example_id, prefix.tokens(), w), 1.25);
        }
    }
    constant.sync();
    let zero_terms =
        erac_critic_loss(&constant, &actor, &space, &spec, &pair, &trajectory, 0.5, 0.9).unwrap();

    let mut random_pair = CriticPair::new();
    random_pair.online = random_critic(&space, pair.example_id, &mut rng);
    random_pair.sync();
    let positive_terms =
        erac_critic_loss(&random_pair, &actor, &space, &spec, &pair, &trajectory, 0.5, 0.9)
            .unwrap();
    CheckResult::of(
        "smoothing-properties",
        zero_terms.smoothing == 0.0 && positive_terms.smoothing > 0.0,
        format!(
            "constant rows -> {}, random rows -> {:.3e}",
            zero_terms.smoothing, positive_terms.smoothing
        ),
    )
}

pub fn check_ac_is_erac_at_tau_zero() -> CheckResult {
    let (space, pair) = toy_space_and_pair();
    let spec = RewardSpec::ExactMatch;
    let mut rng = ChaCha12Rng::seed_from_u64(31337);
    let actor = random_actor(&space, pair.example_id, &mut rng);
    let mut critic = CriticPair::new();
    critic.online = random_critic(&space, pair.example_id, &mut rng);
    critic.target = random_critic(&space, pair.example_id, &mut rng);
    let trajectory = Prefix::reference(&[1, 1], space.vocab()).unwrap();

    let erac = erac_critic_loss(&critic, &actor, &space, &spec, &pair, &trajectory, 0.0, 0.3)
        .unwrap();
    let ac = ac_critic_loss(&critic, &actor, &space, &spec, &pair, &trajectory, 0.3).unwrap();
    let critic_match = erac.td == ac.td && erac.smoothing == ac.smoothing;

    let (erac_loss, erac_grads) =
        erac_actor_loss(&actor, &critic.online, &space, &pair, &trajectory, 0.0, 0.1).unwrap();
    let (ac_loss, ac_grads) =
        ac_actor_loss(&actor, &critic.online, &space, &pair, &trajectory, 0.1).unwrap();
    let mut grads_match = erac_loss == ac_loss;
    for (key, &g) in ac_grads.iter() {
        if erac_grads.get(key) != g {
            grads_match = false;
        }
    }
    CheckResult::of(
        "ac-equals-erac-at-tau-zero",
        critic_match && grads_match,
        "losses and gradients agree bitwise".into(),
    )
}

pub fn check_config_round_trip() -> CheckResult {
    use super::RunConfig;
    let mut config = RunConfig::default();
    config.trainer.tau = 0.4;
    config.trainer.joint.optimizer = OptimizerKind::Sgd;
    config.task.num_val = 5;
    let ok = RunConfig::parse(&config.to_text()).map(|p| p == config);
    CheckResult::of(
        "config-round-trip",
        matches!(ok, Ok(true)),
        "parse(serialize(config)) == config".into(),
    )
}

pub fn check_run_determinism() -> CheckResult {
    use super::{build_datasets, TaskConfig};
    use crate::trainers::PhaseConfig;
    let task = TaskConfig {
        vocab_size: 3,
        horizon: 3,
        num_train: 2,
        num_val: 0,
        reward: RewardSpec::ExactMatch,
        data_seed: 11,
    };
    let (train, val) = build_datasets(&task).unwrap();
    let config = TrainerConfig {
        seed: 5,
        pretrain_actor: PhaseConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.5,
            epochs: 2,
        },
        pretrain_critic: PhaseConfig {
            optimizer: OptimizerKind::adam_default(),
            learning_rate: 0.01,
            epochs: 2,
        },
        joint: PhaseConfig {
            optimizer: OptimizerKind::adam_default(),
            learning_rate: 0.001,
            epochs: 2,
        },
        ..Default::default()
    };
    let space = train.space();
    let one = crate::trainers::run(Algorithm::Erac, &train, &val, &config).unwrap();
    let two = crate::trainers::run(Algorithm::Erac, &train, &val, &config).unwrap();
    let logs_match = one.log.to_jsonl() == two.log.to_jsonl();
    let actors_match = one.actor.as_ref().unwrap().write_checkpoint(&space)
        == two.actor.as_ref().unwrap().write_checkpoint(&space);
    let critics_match = one.critic.as_ref().unwrap().write_checkpoint(&space)
        == two.critic.as_ref().unwrap().write_checkpoint(&space);
    CheckResult::of(
        "run-determinism",
        logs_match && actors_match && critics_match,
        "identical seeds give byte-identical logs and checkpoints".into(),
    )
}

/// Max deviation of normalized weight sums from 1 over seeded sampled
/// batches, for the estimator-consistency criterion.
pub fn max_weight_sum_deviation() -> f64 {
    use crate::sampling::{draw_proposal_batch, ProposalConfig};
    let space = SeqSpace::new(Vocab::with_eos_last(5).unwrap(), 5);
    let reference = Prefix::reference(&[0, 1, 2, 3], space.vocab()).unwrap();
    let spec = RewardSpec::scaled_bleu();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let samples =
            draw_proposal_batch(&space, &reference, &mut rng, &ProposalConfig::default()).unwrap();
        let batch = normalized_payoff_weights(samples, &reference, 0.05, &spec);
        worst = worst.max((batch.weights().iter().sum::<f64>() - 1.0).abs());
    }
    worst
}

pub fn check_ngram_proposal_validity() -> CheckResult {
    use crate::sampling::{draw_proposal_batch, ProposalConfig};
    let space = SeqSpace::new(Vocab::with_eos_last(5).unwrap(), 5);
    let reference = Prefix::reference(&[0, 1, 2, 3], space.vocab()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let config = ProposalConfig::default();
    for _ in 0..100 {
        let batch = draw_proposal_batch(&space, &reference, &mut rng, &config).unwrap();
        if batch.len() != config.num_samples || batch.last() != Some(&reference) {
            return CheckResult::of("ngram-proposal-validity", false, "bad batch shape".into());
        }
        for sample in &batch {
            if !sample.is_terminated() || sample.len() != reference.len() {
                return CheckResult::of(
                    "ngram-proposal-validity",
                    false,
                    format!("invalid sample {sample}"),
                );
            }
        }
    }
    CheckResult::pass(
        "ngram-proposal-validity",
        "all draws are valid terminated sequences of unchanged length".into(),
    )
}

/// Soft Q-learning convergence on the elementary instance: full-batch
/// training drives the critic to the oracle q-table close enough that the
/// induced token targets match to tight KL.
pub fn check_softq_convergence() -> (CheckResult, ParamTable, SoftOracle, GroundTruthPair, SeqSpace)
{
    let vocab = Vocab::with_eos_last(3).unwrap();
    let space = SeqSpace::new(vocab, 2);
    let pair = GroundTruthPair::new(
        0,
        Prefix::reference(&[0], vocab).unwrap(),
    )
    .unwrap();
    let tau = 1.0;
    let spec = RewardSpec::ExactMatch;
    let oracle = solve_soft_oracle(&space, &pair, tau, &spec).unwrap();
    let trajectories = space.enumerate_complete().unwrap();
    let mut critic = ParamTable::new(TableKind::QValues);
    let mut opt = crate::models::Optimizer::new(OptimizerKind::adam_default(), 0.05);
    let mut steps_taken = 0;
    for step in 0..5000 {
        let mut combined = GradAccumulator::new();
        for y in &trajectories {
            let (_, grads) = softq_loss(&critic, &space, &spec, &pair, y, tau).unwrap();
            combined.add_scaled(&grads, 1.0 / trajectories.len() as f64);
        }
        opt.step(&mut critic, &combined).unwrap();
        steps_taken = step + 1;
        if oracle.max_table_diff(&critic, pair.example_id) <= 1e-3 {
            break;
        }
    }
    let q_gap = oracle.max_table_diff(&critic, pair.example_id);
    let mut worst_kl = 0.0_f64;
    for prefix in space.enumerate_prefixes().unwrap() {
        let target = oracle.token_target(&prefix).unwrap();
        let row = critic.row(&space, pair.example_id, &prefix).unwrap();
        let scaled: Vec<f64> = row.iter().map(|&q| q / tau).collect();
        let learned = softmax(&scaled);
        worst_kl = worst_kl.max(crate::numerics::kl_divergence(&target, &learned));
    }
    let result = CheckResult::of(
        "softq-convergence",
        q_gap <= 1e-3 && worst_kl <= 1e-5,
        format!("max |Q - Q_R| = {q_gap:.3e}, max KL = {worst_kl:.3e} after {steps_taken} steps"),
    );
    (result, critic, oracle, pair, space)
}

/// Runs the whole battery in a stable order.
pub fn run_all() -> Vec<CheckResult> {
    let instances = random_instances(50, 40);
    let mut results = vec![
        check_enumeration_sizes(),
        check_telescoping(),
        check_eos_increment_zero(),
        check_transition_injective(),
        check_bleu_against_naive_oracle(),
        check_marginal_match(&instances),
        check_terminal_condition(&instances),
        check_three_way_equivalence(&instances),
        check_shift_invariance(),
        check_log_partition(&instances),
        check_policy_eval_fixed_point(),
        check_weights_match_exact_pr(),
        check_ce_decomposition(),
        check_kappa_linearity(),
        check_vaml_full_support_equals_sequence_ce(),
        check_fixed_point_certificates(),
        check_policy_gradient_theorem(),
        check_smoothing_properties(),
        check_gradcheck_detects_sign_errors(),
        check_ac_is_erac_at_tau_zero(),
        check_ngram_proposal_validity(),
        check_config_round_trip(),
        check_run_determinism(),
        check_softq_convergence().0,
    ];
    results.extend(check_fd_suite());
    results
}
