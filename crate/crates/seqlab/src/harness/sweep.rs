//! Hyper-parameter sweeps: the temperature sweep and the target-rate times
//! smoothing-weight grid. Divergent runs are excluded from the means and
//! reported as counts.

use crate::trainers::{run, Algorithm, TrainError, TrainerConfig};

use super::Dataset;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub tau: f64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub completed: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub beta: f64,
    pub lambda_var: f64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub completed: usize,
    pub diverged: usize,
}

fn summarize(rewards: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if rewards.is_empty() {
        return (None, None, None);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(mean), Some(min), Some(max))
}

fn run_cell(
    train: &Dataset,
    val: &Dataset,
    config: &TrainerConfig,
    seeds: &[u64],
) -> Result<(Vec<f64>, usize), TrainError> {
    let mut rewards = Vec::new();
    let mut diverged = 0;
    for &seed in seeds {
        let mut config = config.clone();
        config.seed = seed;
        match run(Algorithm::Erac, train, val, &config) {
            Ok(outcome) => {
                let (_, reward_val) = outcome.log.last_rewards().unwrap_or((0.0, 0.0));
                rewards.push(reward_val);
            }
            Err(TrainError::DivergenceDetected(_)) => diverged += 1,
            Err(other) => return Err(other),
        }
    }
    Ok((rewards, diverged))
}

/// Entropy-temperature sweep of the actor-critic run (tau = 0 is the plain
/// actor-critic degenerate case).
pub fn tau_sweep(
    train: &Dataset,
    val: &Dataset,
    base: &TrainerConfig,
    taus: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, TrainError> {
    assert!(!taus.is_empty(), "tau list must be nonempty");
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut config = base.clone();
        config.tau = tau;
        let (rewards, diverged) = run_cell(train, val, &config, seeds)?;
        let (mean, min, max) = summarize(&rewards);
        rows.push(SweepRow {
            tau,
            mean,
            min,
            max,
            completed: rewards.len(),
            diverged,
        });
    }
    Ok(rows)
}

/// Target-network rate by smoothing-weight grid.
pub fn grid_sweep(
    train: &Dataset,
    val: &Dataset,
    base: &TrainerConfig,
    betas: &[f64],
    lambda_vars: &[f64],
    seeds: &[u64],
) -> Result<Vec<GridRow>, TrainError> {
    assert!(!betas.is_empty() && !lambda_vars.is_empty());
    let mut rows = Vec::new();
    for &lambda_var in lambda_vars {
        for &beta in betas {
            let mut config = base.clone();
            config.beta = beta;
            config.lambda_var = lambda_var;
            let (rewards, diverged) = run_cell(train, val, &config, seeds)?;
            let (mean, min, max) = summarize(&rewards);
            rows.push(GridRow {
                beta,
                lambda_var,
                mean,
                min,
                max,
                completed: rewards.len(),
                diverged,
            });
        }
    }
    Ok(rows)
}

fn opt_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "NA".to_string(),
    }
}

/// Tab-separated table suitable for plotting.
pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau\tmean\tmin\tmax\tcompleted\tdiverged\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            row.tau,
            opt_cell(row.mean),
            opt_cell(row.min),
            opt_cell(row.max),
            row.completed,
            row.diverged
        ));
    }
    out
}

/// Tab-separated beta x lambda_var grid.
pub fn grid_tsv(rows: &[GridRow]) -> String {
    let mut out = String::from("beta\tlambda_var\tmean\tmin\tmax\tcompleted\tdiverged\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.beta,
            row.lambda_var,
            opt_cell(row.mean),
            opt_cell(row.min),
            opt_cell(row.max),
            row.completed,
            row.diverged
        ));
    }
    out
}
