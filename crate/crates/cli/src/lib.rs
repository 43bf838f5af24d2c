//! Experiment harness behind the `vsmargin` binary.
//!
//! Every subcommand reads a JSON config, computes its artifacts in memory and
//! writes them with a `manifest.json` (config hash, seeds, version, output
//! hashes). Outputs contain no timestamps, so reruns are byte-identical.

pub mod config;
pub mod output;
pub mod run;

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

pub use output::{Artifact, Manifest};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "VSMARGIN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Gen,
    Train,
    Svm,
    Theory,
    Tune,
    Sweep,
    Phase,
    DeoZero,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Svm => "svm",
            Command::Theory => "theory",
            Command::Tune => "tune",
            Command::Sweep => "sweep",
            Command::Phase => "phase",
            Command::DeoZero => "deo-zero",
        }
    }
}

fn parse<T: DeserializeOwned>(value: &serde_json::Value) -> Result<T> {
    serde_json::from_value(value.clone()).context("invalid config")
}

/// Run a subcommand on a parsed config and return its artifacts.
pub fn run(command: Command, config: &serde_json::Value) -> Result<Vec<Artifact>> {
    match command {
        Command::Gen => run::gen(&parse(config)?),
        Command::Train => run::train(&parse(config)?),
        Command::Svm => run::svm_cmd(&parse(config)?),
        Command::Theory => run::theory(&parse(config)?),
        Command::Tune => run::tune(&parse(config)?),
        Command::Sweep => run::experiment(&parse(config)?),
        Command::Phase => run::phase(&parse(config)?),
        Command::DeoZero => run::deo_zero(&parse(config)?),
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a count"))?;
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

/// Read `config_path`, run `command` and write artifacts plus manifest to `out`.
pub fn execute(command: Command, config_path: &Path, out: &Path) -> Result<Manifest> {
    let text =
        std::fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let config: serde_json::Value = serde_json::from_str(&text).context("config is not valid JSON")?;
    let artifacts = pool()?.install(|| run(command, &config)).with_context(|| command.name().to_string())?;
    let manifest = Manifest::new(command.name(), config, &artifacts);
    output::write_all(out, &artifacts, &manifest)?;
    Ok(manifest)
}
