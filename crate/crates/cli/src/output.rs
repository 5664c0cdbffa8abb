//! Output plumbing: every file carries the SHA-256 of the resolved
//! configuration, as a `#` header comment in CSV files and a
//! `config_sha256` field in JSON reports.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ResolvedConfig;
use crate::CliError;

pub struct OutputDir {
    dir: PathBuf,
    pub config_hash: String,
}

impl OutputDir {
    pub fn new(dir: &Path, resolved: &ResolvedConfig) -> Result<Self, CliError> {
        let toml_text =
            toml::to_string_pretty(resolved).map_err(|e| CliError::Config(e.to_string()))?;
        let config_hash = hex(&Sha256::digest(toml_text.as_bytes()));
        std::fs::write(dir.join("resolved_config.toml"), &toml_text)?;
        Ok(OutputDir { dir: dir.to_path_buf(), config_hash })
    }

    /// Open a CSV file with the hash header and column header written.
    pub fn csv(&self, name: &str, columns: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        writeln!(w, "# config_sha256: {}", self.config_hash)?;
        writeln!(w, "# format_version: 1")?;
        writeln!(w, "{columns}")?;
        Ok(w)
    }

    /// Write a JSON report wrapping the payload with the config hash.
    pub fn json<T: Serialize>(&self, name: &str, payload: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Report<'a, T> {
            config_sha256: &'a str,
            format_version: u32,
            #[serde(flatten)]
            payload: &'a T,
        }
        let report =
            Report { config_sha256: &self.config_hash, format_version: 1, payload };
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(self.dir.join(name), text + "\n")?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic float formatting for CSV cells: shortest representation
/// that round-trips.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::from("nan")
    }
}
