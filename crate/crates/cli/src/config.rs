use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use llsvn::ingest::{CalendarConfig, TradeCsvFormat};
use llsvn::stats::TStatConfig;
use llsvn::sweep::SweepConfig;
use llsvn::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A problem with the command line or the configuration file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Column layout of the input trade file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub delimiter: char,
    pub trader_column: String,
    pub timestamp_column: String,
    pub volume_column: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        let f = TradeCsvFormat::default();
        InputConfig {
            delimiter: f.delimiter as char,
            trader_column: f.trader_column,
            timestamp_column: f.timestamp_column,
            volume_column: f.volume_column,
        }
    }
}

impl InputConfig {
    pub fn format(&self) -> anyhow::Result<TradeCsvFormat> {
        if !self.delimiter.is_ascii() {
            bail!(UsageError(format!("delimiter `{}` is not a single ASCII character", self.delimiter)));
        }
        Ok(TradeCsvFormat {
            delimiter: self.delimiter as u8,
            trader_column: self.trader_column.clone(),
            timestamp_column: self.timestamp_column.clone(),
            volume_column: self.volume_column.clone(),
        })
    }
}

/// Contents of a `--config` TOML file. Every table and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub calendar: CalendarConfig,
    pub input: InputConfig,
    pub sweep: SweepConfig,
    pub synth: SynthConfig,
    pub asym: TStatConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> anyhow::Result<FileDigest> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.to_path_buf(), bytes: data.len() as u64, sha256: hex::encode(Sha256::digest(&data)) })
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    pub results: serde_json::Value,
    pub started_at: String,
    pub elapsed_s: f64,
}

pub struct Run {
    command: String,
    started_at: String,
    clock: Instant,
}

impl Run {
    pub fn start(command: &str) -> Run {
        Run { command: command.to_string(), started_at: chrono::Utc::now().to_rfc3339(), clock: Instant::now() }
    }

    /// Writes the manifest to `path`; `config` is the effective configuration after flag overrides.
    #[allow(clippy::too_many_arguments)]
    pub fn finish<C: Serialize>(
        self,
        path: &Path,
        config: &C,
        seed: Option<u64>,
        threads: usize,
        inputs: Vec<FileDigest>,
        outputs: Vec<PathBuf>,
        results: serde_json::Value,
    ) -> anyhow::Result<()> {
        let config = serde_json::to_value(config)?;
        let config_hash = hex::encode(Sha256::digest(serde_json::to_vec(&config)?));
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            config_hash,
            seed,
            threads,
            inputs,
            outputs,
            results,
            started_at: self.started_at,
            elapsed_s: self.clock.elapsed().as_secs_f64(),
        };
        llsvn::io::atomic_write(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            w.write_all(b"\n")?;
            Ok(())
        })
        .with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// Manifest location for a file output: `<out>.run.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}
