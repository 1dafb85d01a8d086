//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 invariant or check failure, 2 usage or config
//! error, 3 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqlab::harness::{
    self, build_datasets, corpus_eval, grid_sweep, grid_tsv, sweep_tsv, tau_sweep, Dataset,
    RunConfig,
};
use seqlab::models::ParamTable;
use seqlab::oracle::{exact_pr, induced_marginal, solve_soft_oracle};
use seqlab::reward::RewardSpec;
use seqlab::seq::{decode_tokens, GroundTruthPair, Prefix, SeqSpace, Vocab};
use seqlab::trainers::{run, Algorithm, TrainError};

const EXIT_OK: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "seqlab",
    version,
    about = "Entropy-regularized sequence prediction lab on enumerable spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the exact soft oracle for one reference, verify the marginal
    /// match, and dump the Q/V tables.
    Oracle(OracleArgs),
    /// Train one algorithm from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint: mean greedy reward over a dataset split.
    Eval(EvalArgs),
    /// Run the full invariant and gradient-check battery.
    Check,
    /// Temperature or target-rate/smoothing grids over seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 3)]
    vocab_size: u32,
    #[arg(long, default_value_t = 2)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = RewardArg::ExactMatch)]
    reward: RewardArg,
    /// Reference content tokens, dot-separated ids ("-" for empty).
    #[arg(long, default_value = "0")]
    reference: String,
    #[arg(long, default_value_t = 0)]
    example_id: u64,
    /// Write the dump here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    alg: Algorithm,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    split: SplitArg,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepKind::Tau)]
    kind: SweepKind,
    /// Comma-separated temperatures for the tau sweep.
    #[arg(long, default_value = "0,0.01,0.05,0.2,1.0")]
    taus: String,
    /// Comma-separated target-network rates for the grid sweep.
    #[arg(long, default_value = "0.001,0.01,0.1,1")]
    betas: String,
    /// Comma-separated smoothing weights for the grid sweep.
    #[arg(long, default_value = "0,0.001")]
    lambda_vars: String,
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    ExactMatch,
    PrefixMatch,
    ScaledBleu,
}

impl From<RewardArg> for RewardSpec {
    fn from(arg: RewardArg) -> Self {
        match arg {
            RewardArg::ExactMatch => RewardSpec::ExactMatch,
            RewardArg::PrefixMatch => RewardSpec::PrefixMatch,
            RewardArg::ScaledBleu => RewardSpec::scaled_bleu(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Tau,
    Grid,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let code = match cli.command {
        Command::Oracle(args) => cmd_oracle(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Check => cmd_check(),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match code {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    RunConfig::parse(&text).map_err(|e| e.to_string())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| format!("bad {what} value {s:?}"))
        })
        .collect()
}

fn cmd_oracle(args: OracleArgs) -> Result<u8, String> {
    if args.horizon == 0 {
        return Err("horizon must be at least 1".into());
    }
    let vocab = Vocab::with_eos_last(args.vocab_size).map_err(|e| e.to_string())?;
    let space = SeqSpace::new(vocab, args.horizon);
    let content = decode_tokens(&args.reference).map_err(|e| e.to_string())?;
    let reference = Prefix::reference(&content, vocab).map_err(|e| e.to_string())?;
    let pair = GroundTruthPair::new(args.example_id, reference).map_err(|e| e.to_string())?;
    if args.tau <= 0.0 {
        return Err("tau must be positive".into());
    }
    let reward: RewardSpec = args.reward.into();

    let oracle =
        solve_soft_oracle(&space, &pair, args.tau, &reward).map_err(|e| e.to_string())?;
    let induced = induced_marginal(&oracle).map_err(|e| e.to_string())?;
    let pr = exact_pr(&space, &pair, args.tau, &reward).map_err(|e| e.to_string())?;
    let deviation = induced.max_abs_diff(&pr);
    println!("max marginal deviation: {deviation:.3e}");

    let dump = oracle.dump();
    match &args.out {
        Some(path) => std::fs::write(path, dump).map_err(|e| e.to_string())?,
        None => print!("{dump}"),
    }
    if deviation <= 1e-9 {
        Ok(EXIT_OK)
    } else {
        eprintln!("marginal match violated (> 1e-9)");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_train(args: TrainArgs) -> Result<u8, String> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.trainer.seed = seed;
    }
    let (train, val) = build_datasets(&config.task).map_err(|e| e.to_string())?;
    let alg = args.alg;
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    let space = train.space();
    match run(alg, &train, &val, &config.trainer) {
        Ok(outcome) => {
            write_outcome_files(&args.out, &space, outcome.actor.as_ref(), outcome.critic.as_ref())?;
            outcome
                .log
                .write_to(&args.out.join("runlog.jsonl"))
                .map_err(|e| e.to_string())?;
            if let Some((reward_train, reward_val)) = outcome.log.last_rewards() {
                println!(
                    "{} finished: reward_train={reward_train} reward_val={reward_val}",
                    alg.name()
                );
            }
            Ok(EXIT_OK)
        }
        Err(TrainError::DivergenceDetected(log)) => {
            log.write_to(&args.out.join("runlog.jsonl"))
                .map_err(|e| e.to_string())?;
            eprintln!("{} diverged; partial log written", alg.name());
            Ok(EXIT_DIVERGED)
        }
        Err(other) => Err(other.to_string()),
    }
}

fn write_outcome_files(
    out: &Path,
    space: &SeqSpace,
    actor: Option<&ParamTable>,
    critic: Option<&ParamTable>,
) -> Result<(), String> {
    if let Some(actor) = actor {
        std::fs::write(out.join("actor.ckpt"), actor.write_checkpoint(space))
            .map_err(|e| e.to_string())?;
    }
    if let Some(critic) = critic {
        std::fs::write(out.join("critic.ckpt"), critic.write_checkpoint(space))
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<u8, String> {
    let config = load_config(&args.config)?;
    let (train, val) = build_datasets(&config.task).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&args.checkpoint)
        .map_err(|e| format!("cannot read checkpoint: {e}"))?;
    let (table, vocab, horizon) =
        ParamTable::read_checkpoint(&text).map_err(|e| e.to_string())?;
    let dataset: &Dataset = match args.split {
        SplitArg::Train => &train,
        SplitArg::Val => &val,
    };
    if vocab != dataset.vocab || horizon != dataset.horizon {
        return Err("checkpoint geometry does not match the config's task".into());
    }
    let reward = corpus_eval(&table, dataset).map_err(|e| e.to_string())?;
    println!("mean reward ({}): {reward}", dataset.split.name());
    Ok(EXIT_OK)
}

fn cmd_check() -> Result<u8, String> {
    let results = harness::checks::run_all();
    let mut failed = 0;
    for result in &results {
        let status = if result.passed { "PASS" } else { "FAIL" };
        println!("check {:<36} {status}  ({})", result.name, result.detail);
        if !result.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all {} checks passed", results.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("{failed} of {} checks failed", results.len());
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, String> {
    let config = load_config(&args.config)?;
    let (train, val) = build_datasets(&config.task).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    if seeds.is_empty() {
        return Err("need at least one seed".into());
    }
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    match args.kind {
        SweepKind::Tau => {
            let taus: Vec<f64> = parse_list(&args.taus, "tau")?;
            if taus.is_empty() {
                return Err("need at least one tau".into());
            }
            let rows = tau_sweep(&train, &val, &config.trainer, &taus, &seeds)
                .map_err(|e| e.to_string())?;
            let table = sweep_tsv(&rows);
            print!("{table}");
            std::fs::write(args.out.join("tau_sweep.tsv"), table)
                .map_err(|e| e.to_string())?;
        }
        SweepKind::Grid => {
            let betas: Vec<f64> = parse_list(&args.betas, "beta")?;
            let lambda_vars: Vec<f64> = parse_list(&args.lambda_vars, "lambda_var")?;
            if betas.is_empty() || lambda_vars.is_empty() {
                return Err("need at least one beta and one lambda_var".into());
            }
            let rows = grid_sweep(&train, &val, &config.trainer, &betas, &lambda_vars, &seeds)
                .map_err(|e| e.to_string())?;
            let table = grid_tsv(&rows);
            print!("{table}");
            std::fs::write(args.out.join("grid_sweep.tsv"), table)
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(EXIT_OK)
}
