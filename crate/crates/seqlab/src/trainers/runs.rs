//! Run drivers: the per-epoch training loops for every algorithm, with
//! deterministic seeded sampling, per-epoch metrics, validation-based step
//! size halving, and clean divergence handling.
//!
//! Random streams are split per role so degenerate configurations stay
//! comparable: proposal/actor sampling and critic sampling never share a
//! stream, and the value-augmented phase 2 consumes the same stream as a
//! standalone reward-augmented run.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::harness::{corpus_eval, Dataset, EpochRecord, RunLog, RunLogHeader, METRICS_FORMAT_VERSION};
use crate::models::{Optimizer, ParamTable, TableKind};
use crate::numerics::{entropy, softmax};
use crate::seq::{Prefix, SeqSpace, TokenId};

use super::losses::{
    ac_actor_loss, ac_critic_loss, erac_actor_loss, erac_critic_loss, mle_loss, polyak_update,
    raml_loss, softq_loss, vaml_loss,
};
use super::{Algorithm, CriticPair, PhaseConfig, TrainError, TrainerConfig};
use crate::sampling::{draw_proposal_batch, normalized_payoff_weights};

const STREAM_CRITIC: u64 = 1;
const STREAM_ACTOR: u64 = 2;
const STREAM_JOINT: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trained tables and the structured metrics log of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub actor: Option<ParamTable>,
    pub critic: Option<ParamTable>,
    pub log: RunLog,
}

/// Ancestral sampling from the actor's softmax policy, truncated by the
/// eos enforcement rule.
pub fn sample_trajectory(
    actor: &ParamTable,
    space: &SeqSpace,
    example: u64,
    rng: &mut impl Rng,
) -> Result<Prefix, TrainError> {
    let mut prefix = Prefix::empty();
    loop {
        let allowed = space.allowed_tokens(&prefix)?;
        let probs = actor.policy_dist(space, example, &prefix)?;
        let draw: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut chosen = *allowed.last().expect("allowed tokens nonempty");
        for (i, &w) in allowed.iter().enumerate() {
            cumulative += probs[i];
            if draw < cumulative {
                chosen = w;
                break;
            }
        }
        prefix = space.transition(&prefix, chosen)?;
        if prefix.is_terminated() {
            return Ok(prefix);
        }
    }
}

/// Runs the requested algorithm end to end and returns the trained tables
/// plus the run log. Divergence aborts the run and attaches the partial
/// log to the error.
pub fn run(
    alg: Algorithm,
    train: &Dataset,
    val: &Dataset,
    config: &TrainerConfig,
) -> Result<RunOutcome, TrainError> {
    if train.pairs.is_empty() || val.pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    config.validate(alg)?;
    let mut driver = Driver::new(alg, train, val, config);
    match alg {
        Algorithm::Mle => {
            let mut actor = ParamTable::new(TableKind::PolicyLogits);
            driver.run_mle_phase(&mut actor, config.pretrain_actor, "actor")?;
            Ok(driver.finish(Some(actor), None))
        }
        Algorithm::Raml => {
            let mut actor = ParamTable::new(TableKind::PolicyLogits);
            let mut rng = stream_rng(config.seed, STREAM_ACTOR);
            driver.run_raml_phase(&mut actor, None, config.pretrain_actor, "actor", &mut rng)?;
            Ok(driver.finish(Some(actor), None))
        }
        Algorithm::Softq => {
            let mut critic = ParamTable::new(TableKind::QValues);
            let mut rng = stream_rng(config.seed, STREAM_CRITIC);
            driver.run_softq_phase(&mut critic, config.pretrain_critic, "critic", &mut rng)?;
            Ok(driver.finish(None, Some(critic)))
        }
        Algorithm::Vaml => {
            let mut critic = ParamTable::new(TableKind::QValues);
            let mut rng = stream_rng(config.seed, STREAM_CRITIC);
            driver.run_softq_phase(&mut critic, config.pretrain_critic, "critic", &mut rng)?;
            let mut actor = ParamTable::new(TableKind::PolicyLogits);
            let mut rng = stream_rng(config.seed, STREAM_ACTOR);
            driver.run_raml_phase(
                &mut actor,
                Some(&critic),
                config.pretrain_actor,
                "actor",
                &mut rng,
            )?;
            Ok(driver.finish(Some(actor), Some(critic)))
        }
        Algorithm::Ac | Algorithm::Erac => {
            let mut actor = ParamTable::new(TableKind::PolicyLogits);
            driver.run_mle_phase(&mut actor, config.pretrain_actor, "pretrain-actor")?;
            let mut critic = CriticPair::new();
            critic.sync();
            let mut rng = stream_rng(config.seed, STREAM_CRITIC);
            driver.run_ac_phase(
                alg,
                &mut critic,
                &mut actor,
                config.pretrain_critic,
                false,
                "pretrain-critic",
                &mut rng,
            )?;
            let mut rng = stream_rng(config.seed, STREAM_JOINT);
            driver.run_ac_phase(
                alg,
                &mut critic,
                &mut actor,
                config.joint,
                true,
                "joint",
                &mut rng,
            )?;
            Ok(driver.finish(Some(actor), Some(critic.online)))
        }
    }
}

/// Halves the optimizer step size after `patience` epochs without
/// improvement of the tracked metric.
struct StallTracker {
    best: f64,
    stall: usize,
    higher_is_better: bool,
}

impl StallTracker {
    fn new(higher_is_better: bool) -> Self {
        StallTracker {
            best: if higher_is_better {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            },
            stall: 0,
            higher_is_better,
        }
    }

    fn observe(&mut self, metric: f64, patience: usize) -> bool {
        let improved = if self.higher_is_better {
            metric > self.best
        } else {
            metric < self.best
        };
        if improved {
            self.best = metric;
            self.stall = 0;
            false
        } else {
            self.stall += 1;
            if self.stall >= patience {
                self.stall = 0;
                true
            } else {
                false
            }
        }
    }
}

#[derive(Default)]
struct EpochAgg {
    losses: BTreeMap<String, f64>,
    entropy_sum: f64,
    entropy_count: usize,
}

impl EpochAgg {
    fn add_loss(&mut self, name: &str, value: f64) {
        *self.losses.entry(name.to_string()).or_insert(0.0) += value;
    }

    fn add_entropy(&mut self, value: f64) {
        self.entropy_sum += value;
        self.entropy_count += 1;
    }

    fn mean_losses(&self, examples: usize) -> BTreeMap<String, f64> {
        self.losses
            .iter()
            .map(|(k, v)| (k.clone(), v / examples as f64))
            .collect()
    }

    fn mean_entropy(&self) -> f64 {
        if self.entropy_count == 0 {
            0.0
        } else {
            self.entropy_sum / self.entropy_count as f64
        }
    }
}

struct Driver<'a> {
    alg: Algorithm,
    train: &'a Dataset,
    val: &'a Dataset,
    config: &'a TrainerConfig,
    space: SeqSpace,
    log: RunLog,
    epoch: usize,
}

impl<'a> Driver<'a> {
    fn new(alg: Algorithm, train: &'a Dataset, val: &'a Dataset, config: &'a TrainerConfig) -> Self {
        let header = RunLogHeader {
            format_version: METRICS_FORMAT_VERSION,
            alg: alg.name().to_string(),
            seed: config.seed,
            config: serde_json::to_value(config).expect("config serializes"),
            task: serde_json::json!({
                "vocab_size": train.vocab.size(),
                "horizon": train.horizon,
                "reward": train.reward.name(),
                "num_train": train.pairs.len(),
                "num_val": val.pairs.len(),
            }),
        };
        Driver {
            alg,
            train,
            val,
            config,
            space: train.space(),
            log: RunLog::new(header),
            epoch: 0,
        }
    }

    fn finish(self, actor: Option<ParamTable>, critic: Option<ParamTable>) -> RunOutcome {
        RunOutcome {
            actor,
            critic,
            log: self.log,
        }
    }

    fn eval(&self, table: &ParamTable) -> Result<(f64, f64), TrainError> {
        Ok((corpus_eval(table, self.train)?, corpus_eval(table, self.val)?))
    }

    fn push_record(
        &mut self,
        phase: &str,
        losses: BTreeMap<String, f64>,
        rewards: (f64, f64),
        actor_entropy: f64,
        wall_clock_secs: f64,
    ) {
        self.log.push(EpochRecord {
            epoch: self.epoch,
            alg: self.alg.name().to_string(),
            phase: phase.to_string(),
            losses,
            reward_train: rewards.0,
            reward_val: rewards.1,
            actor_entropy,
            diverged: false,
            wall_clock_secs,
        });
        self.epoch += 1;
    }

    /// Records a final divergence marker (finite fields only, empty loss
    /// map) and returns the run-aborting error carrying the log.
    fn diverge<T>(
        &mut self,
        phase: &str,
        eval_table: &ParamTable,
        mean_entropy: f64,
    ) -> Result<T, TrainError> {
        let rewards = self.eval(eval_table)?;
        self.log.push(EpochRecord {
            epoch: self.epoch,
            alg: self.alg.name().to_string(),
            phase: phase.to_string(),
            losses: BTreeMap::new(),
            reward_train: rewards.0,
            reward_val: rewards.1,
            actor_entropy: mean_entropy,
            diverged: true,
            wall_clock_secs: 0.0,
        });
        Err(TrainError::DivergenceDetected(Box::new(self.log.clone())))
    }

    /// Mean policy entropy along the prefixes of one token path.
    fn entropy_along(
        &self,
        actor: &ParamTable,
        example: u64,
        tokens: &[TokenId],
        agg: &mut EpochAgg,
    ) -> Result<(), TrainError> {
        let mut prefix = Prefix::empty();
        for &t in tokens {
            let probs = actor.policy_dist(&self.space, example, &prefix)?;
            agg.add_entropy(entropy(&probs));
            prefix = self.space.transition(&prefix, t)?;
        }
        Ok(())
    }

    /// Same for a critic table, whose induced policy is the Boltzmann
    /// distribution of its q-values at temperature tau.
    fn boltzmann_entropy_along(
        &self,
        critic: &ParamTable,
        example: u64,
        tokens: &[TokenId],
        tau: f64,
        agg: &mut EpochAgg,
    ) -> Result<(), TrainError> {
        let mut prefix = Prefix::empty();
        for &t in tokens {
            let row = critic.row(&self.space, example, &prefix)?;
            let scaled: Vec<f64> = row.iter().map(|&q| q / tau).collect();
            agg.add_entropy(entropy(&softmax(&scaled)));
            prefix = self.space.transition(&prefix, t)?;
        }
        Ok(())
    }

    fn run_mle_phase(
        &mut self,
        actor: &mut ParamTable,
        phase_cfg: PhaseConfig,
        phase: &str,
    ) -> Result<(), TrainError> {
        let mut opt = Optimizer::new(phase_cfg.optimizer, phase_cfg.learning_rate);
        let mut stall = StallTracker::new(true);
        for _ in 0..phase_cfg.epochs {
            let t0 = Instant::now();
            let mut agg = EpochAgg::default();
            for pair in &self.train.pairs {
                let (loss, mut grads) = mle_loss(actor, &self.space, pair)?;
                if !loss.is_finite() || !grads.is_finite() {
                    return self.diverge(phase, actor, agg.mean_entropy());
                }
                grads.clip_global_norm(self.config.grad_clip);
                if opt.step(actor, &grads).is_err() {
                    return self.diverge(phase, actor, agg.mean_entropy());
                }
                agg.add_loss("mle", loss);
                self.entropy_along(actor, pair.example_id, pair.reference.tokens(), &mut agg)?;
            }
            let rewards = self.eval(actor)?;
            let losses = agg.mean_losses(self.train.pairs.len());
            self.push_record(
                phase,
                losses,
                rewards,
                agg.mean_entropy(),
                t0.elapsed().as_secs_f64(),
            );
            if stall.observe(rewards.1, self.config.patience) {
                opt.halve_step_size();
            }
        }
        Ok(())
    }

    /// Shared driver for the reward-augmented objective and the
    /// value-augmented phase 2 (which adds a frozen critic).
    fn run_raml_phase(
        &mut self,
        actor: &mut ParamTable,
        critic: Option<&ParamTable>,
        phase_cfg: PhaseConfig,
        phase: &str,
        rng: &mut ChaCha12Rng,
    ) -> Result<(), TrainError> {
        let proposal = self.config.proposal();
        let loss_name = if critic.is_some() { "vaml" } else { "raml" };
        let mut opt = Optimizer::new(phase_cfg.optimizer, phase_cfg.learning_rate);
        let mut stall = StallTracker::new(true);
        for _ in 0..phase_cfg.epochs {
            let t0 = Instant::now();
            let mut agg = EpochAgg::default();
            for pair in &self.train.pairs {
                let samples =
                    draw_proposal_batch(&self.space, &pair.reference, rng, &proposal)?;
                let batch = normalized_payoff_weights(
                    samples,
                    &pair.reference,
                    self.config.tau,
                    &self.train.reward,
                );
                let (loss, mut grads) = match critic {
                    Some(critic) => vaml_loss(
                        actor,
                        critic,
                        &self.space,
                        pair,
                        &batch,
                        self.config.tau,
                        self.config.kappa,
                    )?,
                    None => raml_loss(actor, &self.space, pair, &batch)?,
                };
                if !loss.is_finite() || !grads.is_finite() {
                    return self.diverge(phase, actor, agg.mean_entropy());
                }
                grads.clip_global_norm(self.config.grad_clip);
                if opt.step(actor, &grads).is_err() {
                    return self.diverge(phase, actor, agg.mean_entropy());
                }
                agg.add_loss(loss_name, loss);
                for sample in batch.samples() {
                    self.entropy_along(actor, pair.example_id, sample.tokens(), &mut agg)?;
                }
            }
            let rewards = self.eval(actor)?;
            let losses = agg.mean_losses(self.train.pairs.len());
            self.push_record(
                phase,
                losses,
                rewards,
                agg.mean_entropy(),
                t0.elapsed().as_secs_f64(),
            );
            if stall.observe(rewards.1, self.config.patience) {
                opt.halve_step_size();
            }
        }
        Ok(())
    }

    /// Deterministic validation metric for critic-only phases: the critic
    /// loss along the validation references (no sampling), so step-size
    /// halving reacts to genuine plateaus rather than batch noise.
    fn validation_softq_loss(&self, critic: &ParamTable) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for pair in &self.val.pairs {
            let (loss, _) = softq_loss(
                critic,
                &self.space,
                &self.val.reward,
                pair,
                &pair.reference,
                self.config.tau,
            )?;
            total += loss;
        }
        Ok(total / self.val.pairs.len() as f64)
    }

    fn validation_critic_loss(
        &self,
        alg: Algorithm,
        critic: &CriticPair,
        actor: &ParamTable,
    ) -> Result<f64, TrainError> {
        let cfg = self.config;
        let mut total = 0.0;
        for pair in &self.val.pairs {
            let terms = match alg {
                Algorithm::Erac => erac_critic_loss(
                    critic,
                    actor,
                    &self.space,
                    &self.val.reward,
                    pair,
                    &pair.reference,
                    cfg.tau,
                    cfg.lambda_var,
                )?,
                _ => ac_critic_loss(
                    critic,
                    actor,
                    &self.space,
                    &self.val.reward,
                    pair,
                    &pair.reference,
                    cfg.lambda_var,
                )?,
            };
            total += terms.total();
        }
        Ok(total / self.val.pairs.len() as f64)
    }

    /// Soft Q-learning over proposal batches (reference always included).
    fn run_softq_phase(
        &mut self,
        critic: &mut ParamTable,
        phase_cfg: PhaseConfig,
        phase: &str,
        rng: &mut ChaCha12Rng,
    ) -> Result<(), TrainError> {
        let proposal = self.config.proposal();
        let mut opt = Optimizer::new(phase_cfg.optimizer, phase_cfg.learning_rate);
        let mut stall = StallTracker::new(false);
        for _ in 0..phase_cfg.epochs {
            let t0 = Instant::now();
            let mut agg = EpochAgg::default();
            for pair in &self.train.pairs {
                let samples =
                    draw_proposal_batch(&self.space, &pair.reference, rng, &proposal)?;
                let scale = 1.0 / samples.len() as f64;
                let mut combined = crate::models::GradAccumulator::new();
                let mut batch_loss = 0.0;
                for sample in &samples {
                    let (loss, grads) = softq_loss(
                        critic,
                        &self.space,
                        &self.train.reward,
                        pair,
                        sample,
                        self.config.tau,
                    )?;
                    batch_loss += scale * loss;
                    combined.add_scaled(&grads, scale);
                }
                if !batch_loss.is_finite() || !combined.is_finite() {
                    return self.diverge(phase, critic, agg.mean_entropy());
                }
                combined.clip_global_norm(self.config.grad_clip);
                if opt.step(critic, &combined).is_err() {
                    return self.diverge(phase, critic, agg.mean_entropy());
                }
                agg.add_loss("softq", batch_loss);
                for sample in &samples {
                    self.boltzmann_entropy_along(
                        critic,
                        pair.example_id,
                        sample.tokens(),
                        self.config.tau,
                        &mut agg,
                    )?;
                }
            }
            let rewards = self.eval(critic)?;
            let losses = agg.mean_losses(self.train.pairs.len());
            self.push_record(
                phase,
                losses,
                rewards,
                agg.mean_entropy(),
                t0.elapsed().as_secs_f64(),
            );
            let val_loss = self.validation_softq_loss(critic)?;
            if stall.observe(val_loss, self.config.patience) {
                opt.halve_step_size();
            }
        }
        Ok(())
    }

    /// One actor-critic phase: per sampled trajectory, a critic update,
    /// then (in joint training) an actor update, then the target
    /// interpolation.
    #[allow(clippy::too_many_arguments)]
    fn run_ac_phase(
        &mut self,
        alg: Algorithm,
        critic: &mut CriticPair,
        actor: &mut ParamTable,
        phase_cfg: PhaseConfig,
        update_actor: bool,
        phase: &str,
        rng: &mut ChaCha12Rng,
    ) -> Result<(), TrainError> {
        let cfg = self.config;
        let mut critic_opt = Optimizer::new(phase_cfg.optimizer, phase_cfg.learning_rate);
        let mut actor_opt = Optimizer::new(phase_cfg.optimizer, phase_cfg.learning_rate);
        let mut stall = StallTracker::new(update_actor);
        for _ in 0..phase_cfg.epochs {
            let t0 = Instant::now();
            let mut agg = EpochAgg::default();
            for pair in &self.train.pairs {
                let trajectory =
                    sample_trajectory(actor, &self.space, pair.example_id, rng)?;
                let terms = match alg {
                    Algorithm::Erac => erac_critic_loss(
                        critic,
                        actor,
                        &self.space,
                        &self.train.reward,
                        pair,
                        &trajectory,
                        cfg.tau,
                        cfg.lambda_var,
                    )?,
                    _ => ac_critic_loss(
                        critic,
                        actor,
                        &self.space,
                        &self.train.reward,
                        pair,
                        &trajectory,
                        cfg.lambda_var,
                    )?,
                };
                if !terms.total().is_finite() || !terms.grads.is_finite() {
                    return self.diverge(phase, actor, agg.mean_entropy());
                }
                let mut critic_grads = terms.grads.clone();
                critic_grads.clip_global_norm(cfg.grad_clip);
                if critic_opt.step(&mut critic.online, &critic_grads).is_err() {
                    return self.diverge(phase, actor, agg.mean_entropy());
                }
                agg.add_loss("critic_td", terms.td);
                agg.add_loss("critic_smooth", terms.smoothing);

                if update_actor {
                    let (actor_loss, mut actor_grads) = match alg {
                        Algorithm::Erac => erac_actor_loss(
                            actor,
                            &critic.online,
                            &self.space,
                            pair,
                            &trajectory,
                            cfg.tau,
                            cfg.lambda_mle,
                        )?,
                        _ => ac_actor_loss(
                            actor,
                            &critic.online,
                            &self.space,
                            pair,
                            &trajectory,
                            cfg.lambda_mle,
                        )?,
                    };
                    if !actor_loss.is_finite() || !actor_grads.is_finite() {
                        return self.diverge(phase, actor, agg.mean_entropy());
                    }
                    actor_grads.clip_global_norm(cfg.grad_clip);
                    if actor_opt.step(actor, &actor_grads).is_err() {
                        return self.diverge(phase, actor, agg.mean_entropy());
                    }
                    agg.add_loss("actor", actor_loss);
                }

                polyak_update(critic, cfg.beta);
                self.entropy_along(actor, pair.example_id, trajectory.tokens(), &mut agg)?;
            }
            let rewards = self.eval(actor)?;
            let losses = agg.mean_losses(self.train.pairs.len());
            self.push_record(
                phase,
                losses,
                rewards,
                agg.mean_entropy(),
                t0.elapsed().as_secs_f64(),
            );
            let metric = if update_actor {
                rewards.1
            } else {
                self.validation_critic_loss(alg, critic, actor)?
            };
            if stall.observe(metric, self.config.patience) {
                critic_opt.halve_step_size();
                actor_opt.halve_step_size();
            }
        }
        Ok(())
    }
}
