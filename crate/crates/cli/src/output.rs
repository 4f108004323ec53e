//! Artifact files, their comment headers and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a serde_json::Value,
    inputs: &'a [InputRecord],
    artifacts: &'a [String],
}

/// Collects the artifacts of one run and writes `manifest.json` at the end.
///
/// The config hash covers the subcommand, seed and resolved parameters but
/// not the output directory or thread count, neither of which changes results.
pub struct Run {
    subcommand: String,
    seed: u64,
    config: serde_json::Value,
    config_hash: String,
    out_dir: PathBuf,
    inputs: Vec<InputRecord>,
    artifacts: Vec<String>,
}

impl Run {
    pub fn new(
        subcommand: &str,
        seed: u64,
        config: &impl Serialize,
        out_dir: &Path,
    ) -> CliResult<Self> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?;
        let keyed = serde_json::json!({ "subcommand": subcommand, "seed": seed, "config": config });
        let config_hash = sha256_hex(keyed.to_string().as_bytes());
        std::fs::create_dir_all(out_dir).map_err(|source| CliError::Output {
            path: out_dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            subcommand: subcommand.to_string(),
            seed,
            config,
            config_hash,
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// First line of every artifact.
    pub fn header(&self) -> String {
        format!(
            "# emacv {VERSION} subcommand={} config_hash={} seed={}\n",
            self.subcommand, self.config_hash, self.seed
        )
    }

    /// Fingerprints an input file for the manifest.
    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Input {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `name` with the standard header, any extra comment lines, then
    /// whatever `body` emits.
    pub fn write<F>(&mut self, name: &str, comments: &[String], body: F) -> CliResult<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.out_dir.join(name);
        let result = (|| {
            let mut out = BufWriter::new(File::create(&path)?);
            out.write_all(self.header().as_bytes())?;
            for c in comments {
                writeln!(out, "# {c}")?;
            }
            body(&mut out)?;
            out.flush()
        })();
        result.map_err(|source| CliError::Output { path, source })?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Registers files written by other means (already carrying the header).
    pub fn add_artifacts(&mut self, names: impl IntoIterator<Item = String>) {
        self.artifacts.extend(names);
    }

    pub fn finish(self) -> CliResult<()> {
        let manifest = Manifest {
            tool: "emacv",
            version: VERSION,
            subcommand: &self.subcommand,
            seed: self.seed,
            config_hash: &self.config_hash,
            config: &self.config,
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        let mut text =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|source| CliError::Output { path, source })
    }
}
