use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use fabcap_core::policy::{Checkpoint, CheckpointError, PolicyNet};
use fabcap_core::scenario::{generate_synthetic, GeneratorSpec};
use fabcap_core::features::FeatureNormalizer;
use fabcap_core::trainer::TrainError;
use fabcap_core::{Scenario, ScenarioError};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or scenario (exit 2).
    Config(String),
    /// Checkpoint or resume state built for another scenario (exit 3).
    HashMismatch(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::HashMismatch(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::HashMismatch(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Mismatch { field: "scenario hash", .. } => CliError::HashMismatch(e.to_string()),
            CheckpointError::Io { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::State(_) => CliError::Config(e.to_string()),
            TrainError::HashMismatch { .. } => CliError::HashMismatch(e.to_string()),
            TrainError::Checkpoint(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A built-in name (`minifab`, `midfab`, `smt2020`) or a TOML file.
pub fn load_scenario(spec: &str, generator_seed: u64) -> CliResult<Arc<Scenario>> {
    let s = match spec {
        "minifab" => Scenario::minifab(),
        "midfab" => generate_synthetic(&GeneratorSpec::midfab(), generator_seed)?,
        "smt2020" => generate_synthetic(&GeneratorSpec::smt2020_shape(), generator_seed)?,
        path => Scenario::load(path)?,
    };
    Ok(Arc::new(s))
}

pub fn output_dir(out: Option<PathBuf>, root: &Path, command: &str, seed: u64) -> CliResult<PathBuf> {
    let dir = out.unwrap_or_else(|| root.join(format!("{command}-seed{seed}")));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Loads a checkpoint and rejects it unless it was trained on `scenario`.
pub fn load_policy(path: &Path, scenario: &Scenario) -> CliResult<(PolicyNet, FeatureNormalizer)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_scenario(&scenario.content_hash())?;
    let net = ckpt.policy()?;
    Ok((net, ckpt.normalizer))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
pub struct ScenarioRef {
    pub source: String,
    pub name: String,
    pub hash: String,
}

/// Provenance record written once per output directory.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub scenario: ScenarioRef,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub git_describe: String,
    pub output_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    started: u64,
}

impl ManifestBuilder {
    pub fn start(command: &str, argv: &[String]) -> Self {
        Self { command: command.into(), argv: argv.to_vec(), started: unix_now() }
    }

    pub fn finish(
        self,
        dir: &Path,
        source: &str,
        scenario: &Scenario,
        config: impl Serialize,
        seeds: Vec<u64>,
    ) -> CliResult<()> {
        let m = RunManifest {
            command: self.command,
            argv: self.argv,
            scenario: ScenarioRef { source: source.into(), name: scenario.name.clone(), hash: scenario.content_hash() },
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            seeds,
            git_describe: git_describe(),
            output_dir: dir.display().to_string(),
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Writes rows with a header taken from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
