//! Training procedures over tabular models: maximum likelihood,
//! reward-augmented likelihood, soft Q-learning, value-augmented
//! likelihood, and the (entropy-regularized) actor-critic, plus the Polyak
//! target-network update and the three-phase actor-critic schedule.

mod losses;
mod runs;

pub use losses::{
    ac_actor_loss, ac_critic_loss, erac_actor_loss, erac_critic_loss, mle_loss, polyak_update,
    raml_loss, softq_loss, vaml_loss, CriticLossTerms,
};
pub use runs::{run, sample_trajectory, RunOutcome};

use serde::Serialize;
use thiserror::Error;

use crate::harness::RunLog;
use crate::models::{ModelError, OptimizerKind, ParamTable, TableKind};
use crate::sampling::{ProposalConfig, SamplingError};
use crate::seq::SeqError;

#[derive(Debug, Error)]
pub enum TrainError {
    /// A loss or gradient became non-finite; the partial run log is
    /// attached so the harness can still persist it.
    #[error("training diverged: non-finite loss or gradient")]
    DivergenceDetected(Box<RunLog>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// The training procedures exposed by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algorithm {
    Mle,
    Raml,
    Softq,
    Vaml,
    Ac,
    Erac,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Mle => "mle",
            Algorithm::Raml => "raml",
            Algorithm::Softq => "softq",
            Algorithm::Vaml => "vaml",
            Algorithm::Ac => "ac",
            Algorithm::Erac => "erac",
        }
    }

}

/// Optimizer choice, step size, and epoch count of one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
}

/// All hyper-parameters of a training run. The discount of the
/// concatenation MDP is fixed at 1 and deliberately not configurable;
/// `tau = 0` selects the plain actor-critic degenerate case everywhere
/// the temperature appears.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainerConfig {
    /// Entropy temperature.
    pub tau: f64,
    /// Target-network interpolation rate; 1 disables the target network.
    pub beta: f64,
    /// Weight of the critic variance-smoothing penalty.
    pub lambda_var: f64,
    /// Weight of the MLE anchor in the actor loss.
    pub lambda_mle: f64,
    /// Mixture weight between token-target cross-entropy and ground-truth
    /// log-likelihood in the value-augmented objective.
    pub kappa: f64,
    /// Samples per example, reference included.
    pub num_samples: usize,
    /// Largest n-gram replaced by the proposal.
    pub max_ngram: usize,
    /// Global-norm gradient clipping threshold.
    pub grad_clip: f64,
    pub seed: u64,
    /// Epochs without validation improvement before the step size halves.
    pub patience: usize,
    pub pretrain_actor: PhaseConfig,
    pub pretrain_critic: PhaseConfig,
    pub joint: PhaseConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            tau: 0.05,
            beta: 0.001,
            lambda_var: 0.001,
            lambda_mle: 0.1,
            kappa: 0.2,
            num_samples: 5,
            max_ngram: 4,
            grad_clip: 5.0,
            seed: 1,
            patience: 1,
            pretrain_actor: PhaseConfig {
                optimizer: OptimizerKind::Sgd,
                learning_rate: 0.6,
                epochs: 30,
            },
            pretrain_critic: PhaseConfig {
                optimizer: OptimizerKind::adam_default(),
                learning_rate: 0.001,
                epochs: 30,
            },
            joint: PhaseConfig {
                optimizer: OptimizerKind::adam_default(),
                learning_rate: 0.0001,
                epochs: 30,
            },
        }
    }
}

impl TrainerConfig {
    /// Discount factor of the concatenation MDP. Always 1.
    pub const fn gamma(&self) -> f64 {
        1.0
    }

    pub fn proposal(&self) -> ProposalConfig {
        ProposalConfig {
            max_ngram: self.max_ngram,
            num_samples: self.num_samples,
            include_reference: true,
        }
    }

    pub fn validate(&self, alg: Algorithm) -> Result<(), TrainError> {
        let err = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.tau < 0.0 {
            return err(format!("tau must be nonnegative, got {}", self.tau));
        }
        if matches!(alg, Algorithm::Raml | Algorithm::Softq | Algorithm::Vaml) && self.tau == 0.0 {
            return err(format!("{} requires tau > 0", alg.name()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return err(format!("beta must be in (0, 1], got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return err(format!("kappa must be in [0, 1], got {}", self.kappa));
        }
        if self.lambda_var < 0.0 || self.lambda_mle < 0.0 {
            return err("lambda weights must be nonnegative".into());
        }
        if self.num_samples == 0 {
            return err("num_samples must be at least 1".into());
        }
        if self.max_ngram == 0 {
            return err("max_ngram must be at least 1".into());
        }
        if self.grad_clip <= 0.0 {
            return err("grad_clip must be positive".into());
        }
        Ok(())
    }
}

/// Online critic and its slowly tracking target copy.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub online: ParamTable,
    pub target: ParamTable,
}

impl CriticPair {
    pub fn new() -> Self {
        CriticPair {
            online: ParamTable::new(TableKind::QValues),
            target: ParamTable::new(TableKind::QValues),
        }
    }

    /// Copies the online table into the target (hard sync).
    pub fn sync(&mut self) {
        self.target = self.online.clone();
    }
}

impl Default for CriticPair {
    fn default() -> Self {
        Self::new()
    }
}
