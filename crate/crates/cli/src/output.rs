//! Staged, atomic output files and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files produced by a command. Nothing touches the disk until
/// [`Outputs::commit`], which writes each file to a temporary sibling and
/// renames it into place.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
            tmp.write_all(bytes)
                .and_then(|_| tmp.as_file().sync_all())
                .map_err(|e| CliError::data(format!("{}: {e}", tmp.path().display())))?;
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, target) in staged {
            tmp.persist(&target).map_err(|e| CliError::data(format!("{}: {}", target.display(), e.error)))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<String>,
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self, CliError> {
        let config = cfg.canonical();
        Ok(Manifest {
            command: command.to_string(),
            config_hash: sha256_hex(config.as_bytes()),
            seed: cfg.root_seed()?,
            version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
        })
    }

    /// Reads an input file and records its checksum.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        self.inputs.push((path.to_path_buf(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    /// Tab-separated `key value` lines, then the resolved configuration.
    pub fn render(&self) -> String {
        let mut s = format!(
            "command\t{}\nversion\t{}\nseed\t{}\nconfig_sha256\t{}\n",
            self.command, self.version, self.seed, self.config_hash
        );
        for (path, hash) in &self.inputs {
            s.push_str(&format!("input\t{}\t{hash}\n", path.display()));
        }
        for name in &self.outputs {
            s.push_str(&format!("output\t{name}\n"));
        }
        for line in self.config.lines() {
            s.push_str(&format!("config\t{line}\n"));
        }
        s
    }
}
