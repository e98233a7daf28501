//! Subcommands. Each one resolves its configuration as defaults, then the
//! `--config` JSON file, then command-line flags, and records the result in
//! `<out>/run.json`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub mod cca;
pub mod delta;
pub mod eval;
pub mod moe;
pub mod synth;
pub mod train;

#[derive(Debug, Parser)]
#[command(name = "repfuse", version, about = "Delta-embedding fusion for frozen speech encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known delta structure.
    Synth(synth::Args),
    /// Subtract pre-trained from fine-tuned dumps.
    Delta(delta::Args),
    /// Train a fusion module and CTC head on frozen embeddings.
    Train(train::Args),
    /// Transcribe a test manifest and score it.
    Eval(eval::Args),
    /// Layer-wise CCA and PWCCA between two embedding streams.
    Cca(cca::Args),
    /// Mean gate weight and WER of a mixture-of-experts checkpoint.
    Moe(moe::Args),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(&a),
        Command::Delta(a) => delta::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Cca(a) => cca::run(&a),
        Command::Moe(a) => moe::run(&a),
    }
}

fn as_object(v: Value, origin: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(Error::Config(format!("{origin} must be a JSON object, got {other}"))),
    }
}

/// Merges defaults, an optional JSON config file and the flags that were set.
///
/// Keys the command does not know are rejected by name.
pub fn resolve<C, F>(config_file: Option<&Path>, flags: &F) -> Result<C>
where
    C: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = as_object(serde_json::to_value(C::default()).expect("config serializes"), "defaults")?;
    let known: Vec<String> = merged.keys().cloned().collect();
    let mut layers = Vec::new();
    if let Some(path) = config_file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        layers.push(as_object(v, &path.display().to_string())?);
    }
    layers.push(as_object(serde_json::to_value(flags).expect("flags serialize"), "flags")?);
    for layer in layers {
        for (k, v) in layer {
            if !known.contains(&k) {
                return Err(Error::Config(format!("unknown config field {k:?}")));
            }
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("config: {e}")))
}

/// Fails with a config error naming `field` when a required value is unset.
pub fn required<T: Clone>(value: &Option<T>, field: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("{field} is required")))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunRecord<'a, C> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
}

pub fn write_run_record<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<PathBuf> {
    let path = out.join("run.json");
    write_json(
        &path,
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
        },
    )?;
    Ok(path)
}

pub(crate) fn numerical_guard(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} is not finite ({value})")))
    }
}
