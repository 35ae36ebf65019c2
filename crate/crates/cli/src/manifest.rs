use std::path::{Path, PathBuf};

use bodf::io::{sha256_bytes, sha256_file};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub bodf: &'static str,
    pub frame_completion: &'static str,
}

/// Enough to rerun a command exactly. Contains no timestamps so identical
/// runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn new(command: &str, args: &[String], config: &RunConfig) -> Result<Self, CliError> {
        let canonical = serde_json::to_vec(config)?;
        Ok(Manifest {
            command: command.to_string(),
            args: args.iter().skip(1).cloned().collect(),
            config: config.clone(),
            config_sha256: sha256_bytes(&canonical),
            seed: config.seed,
            versions: Versions {
                bodf: env!("CARGO_PKG_VERSION"),
                frame_completion: bodf::rjmcmc::COMPLETION,
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(FileHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let p = dir.join("manifest.json");
        write_json(&p, self)?;
        Ok(p)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
