//! End-to-end tests of the command-line interface: exit codes, file
//! outputs, and byte-level determinism across reruns.

use std::path::Path;
use std::process::{Command, Output};

use seqlab::harness::RunConfig;
use seqlab::models::OptimizerKind;
use seqlab::reward::RewardSpec;
use seqlab::trainers::PhaseConfig;

fn seqlab_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqlab"))
}

fn run_args(args: &[&str]) -> Output {
    seqlab_bin().args(args).output().expect("spawn seqlab")
}

fn small_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.task.vocab_size = 3;
    config.task.horizon = 3;
    config.task.num_train = 2;
    config.task.reward = RewardSpec::ExactMatch;
    config.trainer.pretrain_actor = PhaseConfig {
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.5,
        epochs: 3,
    };
    config.trainer.pretrain_critic = PhaseConfig {
        optimizer: OptimizerKind::adam_default(),
        learning_rate: 0.01,
        epochs: 3,
    };
    config.trainer.joint = PhaseConfig {
        optimizer: OptimizerKind::adam_default(),
        learning_rate: 0.001,
        epochs: 3,
    };
    config
}

fn write_config(dir: &Path, config: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    std::fs::write(&path, config.to_text()).unwrap();
    path
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let output = run_args(&["--bogus-flag"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run_args(&["train", "--alg", "nonsense", "--config", "x", "--out", "y"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    let output = run_args(&[
        "train",
        "--alg",
        "mle",
        "--config",
        "/nonexistent/config.txt",
        "--out",
        "/tmp/nowhere",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn oracle_subcommand_verifies_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("oracle.txt");
    let output = run_args(&[
        "oracle",
        "--vocab-size",
        "3",
        "--horizon",
        "2",
        "--tau",
        "1",
        "--reward",
        "exact-match",
        "--reference",
        "0",
        "--out",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("max marginal deviation"));
    let text = std::fs::read_to_string(&dump).unwrap();
    assert!(text.starts_with("# seqlab-oracle format_version=1"));
    // rerun gives a bit-identical dump
    let output2 = run_args(&[
        "oracle",
        "--vocab-size",
        "3",
        "--horizon",
        "2",
        "--tau",
        "1",
        "--reward",
        "exact-match",
        "--reference",
        "0",
    ]);
    let stdout2 = String::from_utf8(output2.stdout).unwrap();
    assert!(stdout2.contains(text.lines().nth(1).unwrap()));
}

#[test]
fn train_is_byte_deterministic_and_eval_reads_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), &small_config());
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    for out in [&out_a, &out_b] {
        let output = run_args(&[
            "train",
            "--alg",
            "erac",
            "--config",
            config_path.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "{output:?}");
    }
    for file in ["runlog.jsonl", "actor.ckpt", "critic.ckpt"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }

    let output = run_args(&[
        "eval",
        "--checkpoint",
        out_a.join("actor.ckpt").to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--split",
        "train",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("mean reward"), "{stdout}");
}

#[test]
fn train_runs_all_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.trainer.tau = 0.4;
    let config_path = write_config(dir.path(), &config);
    for alg in ["mle", "raml", "softq", "vaml", "ac", "erac"] {
        let out = dir.path().join(alg);
        let output = run_args(&[
            "train",
            "--alg",
            alg,
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "{alg}: {output:?}");
        assert!(out.join("runlog.jsonl").exists());
    }
    // softq trains a critic only
    assert!(dir.path().join("softq").join("critic.ckpt").exists());
    assert!(!dir.path().join("softq").join("actor.ckpt").exists());
    assert!(dir.path().join("erac").join("actor.ckpt").exists());
}

#[test]
fn sweep_subcommand_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.trainer.pretrain_actor.epochs = 2;
    config.trainer.pretrain_critic.epochs = 2;
    config.trainer.joint.epochs = 2;
    let config_path = write_config(dir.path(), &config);
    let out = dir.path().join("sweep");
    let output = run_args(&[
        "sweep",
        "--config",
        config_path.to_str().unwrap(),
        "--kind",
        "tau",
        "--taus",
        "0,0.05",
        "--seeds",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let table = std::fs::read_to_string(out.join("tau_sweep.tsv")).unwrap();
    assert!(table.starts_with("tau\tmean\tmin\tmax\tcompleted\tdiverged"));
    assert_eq!(table.lines().count(), 3);

    let output = run_args(&[
        "sweep",
        "--config",
        config_path.to_str().unwrap(),
        "--kind",
        "grid",
        "--betas",
        "0.001,1",
        "--lambda-vars",
        "0,0.001",
        "--seeds",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let table = std::fs::read_to_string(out.join("grid_sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn check_subcommand_passes_on_a_fresh_build() {
    let output = run_args(&["check"]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("all"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn eval_rejects_mismatched_checkpoint_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    let output = run_args(&[
        "train",
        "--alg",
        "mle",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    // evaluate against a task with a different horizon
    let mut other = small_config();
    other.task.horizon = 4;
    let other_path = dir.path().join("other.txt");
    std::fs::write(&other_path, other.to_text()).unwrap();
    let output = run_args(&[
        "eval",
        "--checkpoint",
        out.join("actor.ckpt").to_str().unwrap(),
        "--config",
        other_path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn divergent_training_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.trainer.tau = 1.0;
    config.trainer.grad_clip = 1e300;
    config.trainer.pretrain_critic = PhaseConfig {
        optimizer: OptimizerKind::Sgd,
        learning_rate: 1e150,
        epochs: 10,
    };
    let config_path = write_config(dir.path(), &config);
    let out = dir.path().join("out");
    let output = run_args(&[
        "train",
        "--alg",
        "softq",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    // the partial log is still written and parses
    let text = std::fs::read_to_string(out.join("runlog.jsonl")).unwrap();
    let last: serde_json::Value =
        serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["diverged"], true);
}

#[test]
fn erac_train_runs_all_three_phases() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), &small_config());
    let out = dir.path().join("erac");
    let output = run_args(&[
        "train",
        "--alg",
        "erac",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = std::fs::read_to_string(out.join("runlog.jsonl")).unwrap();
    let phases: std::collections::BTreeSet<String> = text
        .lines()
        .skip(1)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["phase"].as_str().unwrap().to_string()
        })
        .collect();
    assert!(phases.contains("pretrain-actor"));
    assert!(phases.contains("pretrain-critic"));
    assert!(phases.contains("joint"));
}

#[test]
fn invalid_tau_for_raml_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.trainer.tau = 0.0;
    let config_path = write_config(dir.path(), &config);
    let output = run_args(&[
        "train",
        "--alg",
        "raml",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}
