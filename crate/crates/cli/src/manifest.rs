use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Command;

/// Everything needed to re-run a command, plus hashes of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub command: Command,
    /// Absolute output path to lowercase hex SHA-256.
    pub outputs: BTreeMap<PathBuf, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: Command, outputs: &[PathBuf]) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in outputs {
            hashes.insert(p.clone(), sha256_file(p)?);
        }
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command,
            outputs: hashes,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Compares current file hashes with the recorded ones.
    pub fn verify(&self) -> Result<()> {
        let mut mismatched = Vec::new();
        for (path, expected) in &self.outputs {
            let got = sha256_file(path)?;
            if &got == expected {
                println!("identical  {}", path.display());
            } else {
                println!("DIFFERENT  {}", path.display());
                mismatched.push(path.display().to_string());
            }
        }
        if !mismatched.is_empty() {
            bail!(
                "replay differs in {} file(s): {}",
                mismatched.len(),
                mismatched.join(", ")
            );
        }
        println!("replay: bit-identical ({} files)", self.outputs.len());
        Ok(())
    }
}
