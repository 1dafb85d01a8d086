//! Line-oriented `key = value` config files with one section per training
//! phase, echoing the three-phase schedule, plus a task section describing
//! the synthetic dataset.
//!
//! The serialized form is canonical: parse -> serialize -> parse is the
//! identity on values (floats use the shortest round-trip decimal form).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::models::OptimizerKind;
use crate::reward::RewardSpec;
use crate::trainers::{PhaseConfig, TrainerConfig};

use super::{make_copy_task, Dataset, HarnessError, Split};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskConfig {
    pub vocab_size: u32,
    pub horizon: usize,
    pub num_train: usize,
    /// 0 means: evaluate validation metrics on the training references.
    pub num_val: usize,
    pub reward: RewardSpec,
    pub data_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            vocab_size: 6,
            horizon: 6,
            num_train: 20,
            num_val: 0,
            reward: RewardSpec::scaled_bleu(),
            data_seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub trainer: TrainerConfig,
}

/// Builds the train and validation splits from a task description. With
/// `num_val = 0` the validation split reuses the training references
/// (tabular per-example parameters cannot generalize to unseen ids, so a
/// held-out split would pin validation reward at zero); otherwise fresh
/// examples with ids after the training range are drawn.
pub fn build_datasets(task: &TaskConfig) -> Result<(Dataset, Dataset), HarnessError> {
    let mut rng = ChaCha12Rng::seed_from_u64(task.data_seed);
    let train = make_copy_task(
        task.vocab_size,
        task.horizon,
        task.num_train,
        task.reward,
        Split::Train,
        0,
        &mut rng,
    )?;
    let val = if task.num_val == 0 {
        train.relabeled(Split::Validation)
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(task.data_seed);
        rng.set_stream(1);
        make_copy_task(
            task.vocab_size,
            task.horizon,
            task.num_val,
            task.reward,
            Split::Validation,
            task.num_train as u64,
            &mut rng,
        )?
    };
    Ok((train, val))
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut out = format!("format_version = {CONFIG_FORMAT_VERSION}\n\n[task]\n");
        out.push_str(&format!("vocab_size = {}\n", self.task.vocab_size));
        out.push_str(&format!("horizon = {}\n", self.task.horizon));
        out.push_str(&format!("num_train = {}\n", self.task.num_train));
        out.push_str(&format!("num_val = {}\n", self.task.num_val));
        out.push_str(&format!("reward = {}\n", self.task.reward.name()));
        if let RewardSpec::ScaledSentenceBleu { max_order } = self.task.reward {
            out.push_str(&format!("bleu_max_order = {max_order}\n"));
        }
        out.push_str(&format!("data_seed = {}\n", self.task.data_seed));

        let t = &self.trainer;
        out.push_str("\n[model]\n");
        out.push_str(&format!("tau = {}\n", t.tau));
        out.push_str(&format!("beta = {}\n", t.beta));
        out.push_str(&format!("lambda_var = {}\n", t.lambda_var));
        out.push_str(&format!("lambda_mle = {}\n", t.lambda_mle));
        out.push_str(&format!("kappa = {}\n", t.kappa));
        out.push_str(&format!("num_samples = {}\n", t.num_samples));
        out.push_str(&format!("max_ngram = {}\n", t.max_ngram));
        out.push_str(&format!("grad_clip = {}\n", t.grad_clip));
        out.push_str(&format!("seed = {}\n", t.seed));
        out.push_str(&format!("patience = {}\n", t.patience));

        for (name, phase) in [
            ("pretrain-actor", &t.pretrain_actor),
            ("pretrain-critic", &t.pretrain_critic),
            ("joint", &t.joint),
        ] {
            out.push_str(&format!("\n[{name}]\n"));
            out.push_str(&format!("optimizer = {}\n", phase.optimizer.name()));
            if let OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } = phase.optimizer
            {
                out.push_str(&format!("adam_beta1 = {beta1}\n"));
                out.push_str(&format!("adam_beta2 = {beta2}\n"));
                out.push_str(&format!("adam_epsilon = {epsilon}\n"));
            }
            out.push_str(&format!("learning_rate = {}\n", phase.learning_rate));
            out.push_str(&format!("epochs = {}\n", phase.epochs));
        }
        out
    }

    pub fn parse(text: &str) -> Result<RunConfig, HarnessError> {
        let bad = |msg: String| HarnessError::InvalidConfig(msg);
        let mut config = RunConfig::default();
        let mut bleu_max_order = 4usize;
        let mut reward_name: Option<String> = None;
        let mut section = String::new();
        // raw optimizer settings per phase, resolved at the end
        let mut phase_raw: std::collections::BTreeMap<String, PhaseRaw> = Default::default();

        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                match section.as_str() {
                    "task" | "model" | "pretrain-actor" | "pretrain-critic" | "joint" => {}
                    other => return Err(bad(format!("unknown section [{other}]"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f64 = || -> Result<f64, HarnessError> {
                value
                    .parse()
                    .map_err(|_| bad(format!("bad number {value:?} for {key}")))
            };
            let parse_usize = || -> Result<usize, HarnessError> {
                value
                    .parse()
                    .map_err(|_| bad(format!("bad integer {value:?} for {key}")))
            };
            let parse_u64 = || -> Result<u64, HarnessError> {
                value
                    .parse()
                    .map_err(|_| bad(format!("bad integer {value:?} for {key}")))
            };
            match (section.as_str(), key) {
                ("", "format_version") => {
                    let version: u32 = value
                        .parse()
                        .map_err(|_| bad(format!("bad format_version {value:?}")))?;
                    if version != CONFIG_FORMAT_VERSION {
                        return Err(bad(format!("unsupported format_version {version}")));
                    }
                }
                ("task", "vocab_size") => {
                    config.task.vocab_size = value
                        .parse()
                        .map_err(|_| bad(format!("bad vocab_size {value:?}")))?
                }
                ("task", "horizon") => config.task.horizon = parse_usize()?,
                ("task", "num_train") => config.task.num_train = parse_usize()?,
                ("task", "num_val") => config.task.num_val = parse_usize()?,
                ("task", "reward") => reward_name = Some(value.to_string()),
                ("task", "bleu_max_order") => bleu_max_order = parse_usize()?,
                ("task", "data_seed") => config.task.data_seed = parse_u64()?,
                ("model", "tau") => config.trainer.tau = parse_f64()?,
                ("model", "beta") => config.trainer.beta = parse_f64()?,
                ("model", "lambda_var") => config.trainer.lambda_var = parse_f64()?,
                ("model", "lambda_mle") => config.trainer.lambda_mle = parse_f64()?,
                ("model", "kappa") => config.trainer.kappa = parse_f64()?,
                ("model", "num_samples") => config.trainer.num_samples = parse_usize()?,
                ("model", "max_ngram") => config.trainer.max_ngram = parse_usize()?,
                ("model", "grad_clip") => config.trainer.grad_clip = parse_f64()?,
                ("model", "seed") => config.trainer.seed = parse_u64()?,
                ("model", "patience") => config.trainer.patience = parse_usize()?,
                (phase @ ("pretrain-actor" | "pretrain-critic" | "joint"), key) => {
                    let raw = phase_raw.entry(phase.to_string()).or_default();
                    match key {
                        "optimizer" => raw.optimizer = Some(value.to_string()),
                        "learning_rate" => raw.learning_rate = Some(parse_f64()?),
                        "epochs" => raw.epochs = Some(parse_usize()?),
                        "adam_beta1" => raw.adam_beta1 = Some(parse_f64()?),
                        "adam_beta2" => raw.adam_beta2 = Some(parse_f64()?),
                        "adam_epsilon" => raw.adam_epsilon = Some(parse_f64()?),
                        other => return Err(bad(format!("unknown key {other:?} in [{phase}]"))),
                    }
                }
                (section, key) => {
                    return Err(bad(format!("unknown key {key:?} in section [{section}]")))
                }
            }
        }

        if let Some(name) = reward_name {
            config.task.reward = match name.as_str() {
                "exact-match" => RewardSpec::ExactMatch,
                "prefix-match" => RewardSpec::PrefixMatch,
                "scaled-bleu" => RewardSpec::ScaledSentenceBleu {
                    max_order: bleu_max_order,
                },
                other => return Err(bad(format!("unknown reward {other:?}"))),
            };
        }
        for (name, raw) in phase_raw {
            let phase = match name.as_str() {
                "pretrain-actor" => &mut config.trainer.pretrain_actor,
                "pretrain-critic" => &mut config.trainer.pretrain_critic,
                _ => &mut config.trainer.joint,
            };
            raw.apply(phase, &name)?;
        }
        Ok(config)
    }

}

#[derive(Default)]
struct PhaseRaw {
    optimizer: Option<String>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_epsilon: Option<f64>,
}

impl PhaseRaw {
    fn apply(self, phase: &mut PhaseConfig, name: &str) -> Result<(), HarnessError> {
        if let Some(kind) = &self.optimizer {
            phase.optimizer = match kind.as_str() {
                "sgd" => OptimizerKind::Sgd,
                "adam" => {
                    let default = OptimizerKind::adam_default();
                    let (b1, b2, eps) = match default {
                        OptimizerKind::Adam {
                            beta1,
                            beta2,
                            epsilon,
                        } => (beta1, beta2, epsilon),
                        _ => unreachable!(),
                    };
                    OptimizerKind::Adam {
                        beta1: self.adam_beta1.unwrap_or(b1),
                        beta2: self.adam_beta2.unwrap_or(b2),
                        epsilon: self.adam_epsilon.unwrap_or(eps),
                    }
                }
                other => {
                    return Err(HarnessError::InvalidConfig(format!(
                        "unknown optimizer {other:?} in [{name}]"
                    )))
                }
            };
        } else if self.adam_beta1.is_some() || self.adam_beta2.is_some() || self.adam_epsilon.is_some()
        {
            if let OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } = phase.optimizer
            {
                phase.optimizer = OptimizerKind::Adam {
                    beta1: self.adam_beta1.unwrap_or(beta1),
                    beta2: self.adam_beta2.unwrap_or(beta2),
                    epsilon: self.adam_epsilon.unwrap_or(epsilon),
                };
            }
        }
        if let Some(lr) = self.learning_rate {
            phase.learning_rate = lr;
        }
        if let Some(epochs) = self.epochs {
            phase.epochs = epochs;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let config = RunConfig::default();
        let text = config.to_text();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(RunConfig::parse(&parsed.to_text()).unwrap(), parsed);
    }

    #[test]
    fn modified_config_round_trips() {
        let mut config = RunConfig::default();
        config.task.reward = RewardSpec::ExactMatch;
        config.task.num_val = 3;
        config.trainer.tau = 0.4;
        config.trainer.seed = 99;
        config.trainer.joint.learning_rate = 0.125;
        config.trainer.pretrain_actor.optimizer = OptimizerKind::Adam {
            beta1: 0.8,
            beta2: 0.95,
            epsilon: 1e-6,
        };
        let parsed = RunConfig::parse(&config.to_text()).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::default().to_text();
        text.push_str("\n[model]\nbogus = 1\n");
        assert!(RunConfig::parse(&text).is_err());
        assert!(RunConfig::parse("[nope]\n").is_err());
    }

    #[test]
    fn datasets_share_references_when_num_val_is_zero() {
        let task = TaskConfig {
            num_train: 3,
            num_val: 0,
            ..Default::default()
        };
        let (train, val) = build_datasets(&task).unwrap();
        assert_eq!(train.pairs, val.pairs);
        assert_eq!(val.split, Split::Validation);

        let task = TaskConfig {
            num_train: 3,
            num_val: 2,
            ..Default::default()
        };
        let (train, val) = build_datasets(&task).unwrap();
        assert_eq!(val.pairs.len(), 2);
        assert!(val.pairs.iter().all(|p| p.example_id >= train.pairs.len() as u64));
    }
}
