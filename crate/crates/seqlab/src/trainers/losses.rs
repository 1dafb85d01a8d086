//! Loss and gradient computations for every training procedure.
//!
//! Each loss returns its scalar value together with exact analytic
//! gradients. Critic targets are handled inline (squared errors on raw
//! table entries); actor losses decompose into the three gradient atoms.

use crate::models::{
    entropy_atom, expectation_atom, nll_atom, GradAccumulator, ParamKey, ParamTable,
};
use crate::numerics::{entropy, logsumexp, softmax};
use crate::reward::{incremental_payoff, Payoff};
use crate::sampling::WeightedBatch;
use crate::seq::{GroundTruthPair, Prefix, SeqSpace};

use super::{CriticPair, TrainError};

/// Negative log-likelihood of the reference under the actor.
pub fn mle_loss(
    actor: &ParamTable,
    space: &SeqSpace,
    example: &GroundTruthPair,
) -> Result<(f64, GradAccumulator), TrainError> {
    let mut acc = GradAccumulator::new();
    let mut loss = 0.0;
    let mut prefix = Prefix::empty();
    for &t in example.reference.tokens() {
        loss += nll_atom(actor, space, example.example_id, &prefix, t, 1.0, &mut acc)?;
        prefix = space.transition(&prefix, t)?;
    }
    Ok((loss, acc))
}

/// Importance-weighted negative log-likelihood over a proposal batch.
pub fn raml_loss(
    actor: &ParamTable,
    space: &SeqSpace,
    example: &GroundTruthPair,
    batch: &WeightedBatch,
) -> Result<(f64, GradAccumulator), TrainError> {
    let mut acc = GradAccumulator::new();
    let mut loss = 0.0;
    for (sample, weight) in batch.iter() {
        let mut prefix = Prefix::empty();
        for &t in sample.tokens() {
            loss += nll_atom(actor, space, example.example_id, &prefix, t, weight, &mut acc)?;
            prefix = space.transition(&prefix, t)?;
        }
    }
    Ok((loss, acc))
}

/// Mean squared soft Bellman residual along one trajectory. The target is
/// `r + tau * logsumexp(Q(next, .) / tau)` for interior steps and `r` at
/// the terminal step; gradients flow through both occurrences of the
/// critic, with no target network.
pub fn softq_loss(
    critic: &ParamTable,
    space: &SeqSpace,
    spec: &dyn Payoff,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    tau: f64,
) -> Result<(f64, GradAccumulator), TrainError> {
    debug_assert!(trajectory.is_terminated());
    assert!(tau > 0.0, "soft Q-learning requires tau > 0");
    let ex = example.example_id;
    let mut acc = GradAccumulator::new();
    let mut loss = 0.0;
    let mut prefix = Prefix::empty();
    for &t in trajectory.tokens() {
        let r = incremental_payoff(space, spec, &prefix, t, &example.reference)?;
        let next = space.transition(&prefix, t)?;
        let online = critic.get(&ParamKey::new(ex, prefix.tokens(), t));
        let (target, lookahead) = if next.is_terminated() {
            (r, None)
        } else {
            let allowed = space.allowed_tokens(&next)?;
            let row = critic.row(space, ex, &next)?;
            let scaled: Vec<f64> = row.iter().map(|&q| q / tau).collect();
            let value = tau * logsumexp(&scaled);
            // d(tau * lse(q/tau))/dq_w is the Boltzmann probability of w
            let probs = softmax(&scaled);
            (r + value, Some((next.tokens().to_vec(), allowed, probs)))
        };
        let delta = online - target;
        loss += delta * delta;
        acc.add(ParamKey::new(ex, prefix.tokens(), t), 2.0 * delta);
        if let Some((next_tokens, allowed, probs)) = lookahead {
            for (i, &w) in allowed.iter().enumerate() {
                acc.add(
                    ParamKey::new(ex, &next_tokens, w),
                    -2.0 * delta * probs[i],
                );
            }
        }
        prefix = next;
    }
    Ok((loss, acc))
}

/// Mixture of token-target cross-entropy (weight `kappa`) and ground-truth
/// log-likelihood (weight `1 - kappa`), importance-weighted over the batch.
/// The critic is frozen; the mixture expectation is computed exactly.
pub fn vaml_loss(
    actor: &ParamTable,
    critic: &ParamTable,
    space: &SeqSpace,
    example: &GroundTruthPair,
    batch: &WeightedBatch,
    tau: f64,
    kappa: f64,
) -> Result<(f64, GradAccumulator), TrainError> {
    assert!(tau > 0.0, "token targets require tau > 0");
    let ex = example.example_id;
    let mut acc = GradAccumulator::new();
    let mut loss = 0.0;
    for (sample, weight) in batch.iter() {
        let mut prefix = Prefix::empty();
        for &t in sample.tokens() {
            if kappa > 0.0 {
                let allowed = space.allowed_tokens(&prefix)?;
                let row = critic.row(space, ex, &prefix)?;
                let scaled: Vec<f64> = row.iter().map(|&q| q / tau).collect();
                let target_probs = softmax(&scaled);
                for (i, &w) in allowed.iter().enumerate() {
                    let atom_weight = weight * kappa * target_probs[i];
                    if atom_weight > 0.0 {
                        loss += nll_atom(actor, space, ex, &prefix, w, atom_weight, &mut acc)?;
                    }
                }
            }
            if kappa < 1.0 {
                loss +=
                    nll_atom(actor, space, ex, &prefix, t, weight * (1.0 - kappa), &mut acc)?;
            }
            prefix = space.transition(&prefix, t)?;
        }
    }
    Ok((loss, acc))
}

/// TD and smoothing components of a critic loss, with gradients for the
/// online table only.
#[derive(Debug, Clone)]
pub struct CriticLossTerms {
    pub td: f64,
    /// Already weighted by lambda_var.
    pub smoothing: f64,
    pub grads: GradAccumulator,
}

impl CriticLossTerms {
    pub fn total(&self) -> f64 {
        self.td + self.smoothing
    }
}

/// Entropy-regularized TD error against the target critic, plus the
/// variance-smoothing penalty. The target
/// `r + tau * H(pi(.|next)) + sum_w pi(w|next) Q_target(next, w)` is a
/// constant under differentiation.
#[allow(clippy::too_many_arguments)]
pub fn erac_critic_loss(
    critic: &CriticPair,
    actor: &ParamTable,
    space: &SeqSpace,
    spec: &dyn Payoff,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    tau: f64,
    lambda_var: f64,
) -> Result<CriticLossTerms, TrainError> {
    critic_loss_impl(
        critic,
        actor,
        space,
        spec,
        example,
        trajectory,
        Some(tau),
        lambda_var,
    )
}

/// Plain actor-critic TD error: the same construction with no entropy term
/// anywhere in the target.
pub fn ac_critic_loss(
    critic: &CriticPair,
    actor: &ParamTable,
    space: &SeqSpace,
    spec: &dyn Payoff,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    lambda_var: f64,
) -> Result<CriticLossTerms, TrainError> {
    critic_loss_impl(
        critic,
        actor,
        space,
        spec,
        example,
        trajectory,
        None,
        lambda_var,
    )
}

#[allow(clippy::too_many_arguments)]
fn critic_loss_impl(
    critic: &CriticPair,
    actor: &ParamTable,
    space: &SeqSpace,
    spec: &dyn Payoff,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    tau: Option<f64>,
    lambda_var: f64,
) -> Result<CriticLossTerms, TrainError> {
    debug_assert!(trajectory.is_terminated());
    let ex = example.example_id;
    let mut acc = GradAccumulator::new();
    let mut td = 0.0;
    let mut smoothing = 0.0;
    let mut prefix = Prefix::empty();
    for &t in trajectory.tokens() {
        let r = incremental_payoff(space, spec, &prefix, t, &example.reference)?;
        let next = space.transition(&prefix, t)?;
        let target = if next.is_terminated() {
            r
        } else {
            let allowed = space.allowed_tokens(&next)?;
            let probs = actor.policy_dist(space, ex, &next)?;
            let expected: f64 = allowed
                .iter()
                .zip(&probs)
                .map(|(&w, &p)| p * critic.target.get(&ParamKey::new(ex, next.tokens(), w)))
                .sum();
            match tau {
                Some(tau) => r + tau * entropy(&probs) + expected,
                None => r + expected,
            }
        };
        let online = critic.online.get(&ParamKey::new(ex, prefix.tokens(), t));
        let delta = online - target;
        td += delta * delta;
        acc.add(ParamKey::new(ex, prefix.tokens(), t), 2.0 * delta);
        if lambda_var > 0.0 {
            let allowed = space.allowed_tokens(&prefix)?;
            let row = critic.online.row(space, ex, &prefix)?;
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let deviations: Vec<f64> = row.iter().map(|&q| q - mean).collect();
            let deviation_sum: f64 = deviations.iter().sum();
            smoothing += lambda_var * deviations.iter().map(|d| d * d).sum::<f64>();
            for (i, &w) in allowed.iter().enumerate() {
                acc.add(
                    ParamKey::new(ex, prefix.tokens(), w),
                    lambda_var
                        * (2.0 * deviations[i] - 2.0 * deviation_sum / row.len() as f64),
                );
            }
        }
        prefix = next;
    }
    Ok(CriticLossTerms {
        td,
        smoothing,
        grads: acc,
    })
}

/// Negated entropy-regularized expected return along a trajectory, plus an
/// MLE anchor on the reference. The critic is frozen.
pub fn erac_actor_loss(
    actor: &ParamTable,
    critic_online: &ParamTable,
    space: &SeqSpace,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    tau: f64,
    lambda_mle: f64,
) -> Result<(f64, GradAccumulator), TrainError> {
    actor_loss_impl(
        actor,
        critic_online,
        space,
        example,
        trajectory,
        Some(tau),
        lambda_mle,
    )
}

/// Plain actor-critic actor loss: no entropy bonus.
pub fn ac_actor_loss(
    actor: &ParamTable,
    critic_online: &ParamTable,
    space: &SeqSpace,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    lambda_mle: f64,
) -> Result<(f64, GradAccumulator), TrainError> {
    actor_loss_impl(
        actor,
        critic_online,
        space,
        example,
        trajectory,
        None,
        lambda_mle,
    )
}

fn actor_loss_impl(
    actor: &ParamTable,
    critic_online: &ParamTable,
    space: &SeqSpace,
    example: &GroundTruthPair,
    trajectory: &Prefix,
    tau: Option<f64>,
    lambda_mle: f64,
) -> Result<(f64, GradAccumulator), TrainError> {
    debug_assert!(trajectory.is_terminated());
    let ex = example.example_id;
    let mut acc = GradAccumulator::new();
    let mut loss = 0.0;
    let mut prefix = Prefix::empty();
    for &t in trajectory.tokens() {
        let costs = critic_online.row(space, ex, &prefix)?;
        loss += expectation_atom(actor, space, ex, &prefix, &costs, -1.0, &mut acc)?;
        if let Some(tau) = tau {
            loss += entropy_atom(actor, space, ex, &prefix, -tau, &mut acc)?;
        }
        prefix = space.transition(&prefix, t)?;
    }
    if lambda_mle > 0.0 {
        let mut prefix = Prefix::empty();
        for &t in example.reference.tokens() {
            loss += nll_atom(actor, space, ex, &prefix, t, lambda_mle, &mut acc)?;
            prefix = space.transition(&prefix, t)?;
        }
    }
    Ok((loss, acc))
}

/// Interpolates the target critic toward the online critic:
/// `target <- beta * online + (1 - beta) * target`. Target keys missing
/// for a new online key are initialized to the online value.
pub fn polyak_update(critic: &mut CriticPair, beta: f64) {
    let CriticPair { online, target } = critic;
    for (key, &value) in online.iter() {
        match target.get_mut(key) {
            Some(old) => *old = beta * value + (1.0 - beta) * *old,
            None => target.set(key.clone(), value),
        }
    }
}
