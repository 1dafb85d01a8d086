//! Structured per-epoch metrics: one JSON header line carrying the format
//! version, seed, and config echo, then one JSON object per epoch.
//!
//! Identical (config, seed) runs must reproduce the file byte for byte, so
//! no timestamps enter the serialized records; wall-clock durations are
//! kept in memory only.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub const METRICS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct RunLogHeader {
    pub format_version: u32,
    pub alg: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub task: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alg: String,
    pub phase: String,
    pub losses: BTreeMap<String, f64>,
    pub reward_train: f64,
    pub reward_val: f64,
    pub actor_entropy: f64,
    pub diverged: bool,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: RunLogHeader,
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn new(header: RunLogHeader) -> Self {
        RunLog {
            header,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn diverged(&self) -> bool {
        self.records.iter().any(|r| r.diverged)
    }

    pub fn last_rewards(&self) -> Option<(f64, f64)> {
        self.records
            .last()
            .map(|r| (r.reward_train, r.reward_val))
    }

    /// One JSON object per line: header first, then each epoch record.
    pub fn to_jsonl(&self) -> String {
        let mut out =
            serde_json::to_string(&self.header).expect("header serializes") + "\n";
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> RunLog {
        let mut log = RunLog::new(RunLogHeader {
            format_version: METRICS_FORMAT_VERSION,
            alg: "mle".into(),
            seed: 3,
            config: serde_json::json!({"tau": 0.05}),
            task: serde_json::json!({"vocab_size": 3}),
        });
        log.push(EpochRecord {
            epoch: 0,
            alg: "mle".into(),
            phase: "actor".into(),
            losses: BTreeMap::from([("mle".to_string(), 1.5)]),
            reward_train: 0.25,
            reward_val: 0.25,
            actor_entropy: 1.0986,
            diverged: false,
            wall_clock_secs: 123.456,
        });
        log
    }

    #[test]
    fn jsonl_has_schema_fields_and_skips_wall_clock() {
        let text = sample_log().to_jsonl();
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header["format_version"], METRICS_FORMAT_VERSION);
        let record: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        for field in [
            "epoch",
            "alg",
            "phase",
            "losses",
            "reward_train",
            "reward_val",
            "actor_entropy",
            "diverged",
        ] {
            assert!(record.get(field).is_some(), "missing {field}");
        }
        assert!(record.get("wall_clock_secs").is_none());
    }

    #[test]
    fn serialization_is_stable() {
        assert_eq!(sample_log().to_jsonl(), sample_log().to_jsonl());
    }
}
