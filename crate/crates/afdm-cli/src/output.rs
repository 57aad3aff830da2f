//! Config loading, manifests and result files.

use std::fs;
use std::path::Path;

use afdm::harness::ExperimentConfig;
use afdm::AfdmParams;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Cli, CliError, CliResult};

pub const MANIFEST: &str = "manifest.toml";

/// Everything needed to re-run a result: the resolved config, code version and seed.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Command options that shaped the output beyond the config itself.
    #[serde(skip_serializing_if = "toml::Table::is_empty")]
    pub options: toml::Table,
    pub config: &'a C,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, seed: Option<u64>, config: &'a C) -> Self {
        Self { command, version: env!("CARGO_PKG_VERSION"), seed, options: toml::Table::new(), config }
    }

    pub fn option(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.options.insert(key.into(), value.into());
        self
    }

    pub fn render(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("manifest: {e}")))
    }
}

pub fn read_toml<T: DeserializeOwned>(cli: &Cli) -> CliResult<T> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Reads, applies `--seed` and validates an experiment config.
pub fn load_experiment(cli: &Cli) -> CliResult<(ExperimentConfig, AfdmParams)> {
    let mut config: ExperimentConfig = read_toml(cli)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let params = config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok((config, params))
}

pub fn require_out(cli: &Cli) -> CliResult<&Path> {
    cli.out.as_deref().ok_or_else(|| CliError::Config("--out is required".into()))
}

/// Writes finished results; called only once everything has been computed.
pub fn write_files(out: &Path, files: &[(&str, String)]) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    for (name, body) in files {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
