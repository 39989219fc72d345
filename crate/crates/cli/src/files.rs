//! Reading inputs and writing outputs atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use toast_core::archive::{self, NamedTensors, Tensor};
use toast_core::engine::{ModelConfig, ModelWeights};
use toast_core::{Matrix, ToastError};

use crate::error::{CliError, CliResult, InputContext};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(anyhow::Error::new(e).context(path.display().to_string())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(anyhow::Error::new(e).context(path.display().to_string())))
}

pub fn read_config(path: &Path) -> CliResult<ModelConfig> {
    let config: ModelConfig = read_json(path)?;
    config.validate().reading(path)?;
    Ok(config)
}

pub fn read_tensors(path: &Path) -> CliResult<NamedTensors> {
    archive::read_archive(path).reading(path)
}

pub fn read_weights(config: &ModelConfig, path: &Path) -> CliResult<ModelWeights> {
    let tensors = read_tensors(path)?;
    ModelWeights::from_named_tensors(config, tensors).reading(path)
}

/// Token batches stored as `N × D` matrices, in archive order.
pub fn read_batches(config: &ModelConfig, path: &Path) -> CliResult<Vec<(String, Matrix)>> {
    let tensors = read_tensors(path)?;
    if tensors.is_empty() {
        return Err(CliError::input(format!("{}: no token batches", path.display())));
    }
    let want = (config.num_tokens, config.embed_dim);
    tensors
        .into_iter()
        .map(|(name, t)| match t {
            Tensor::Matrix(m) if m.dims() == want => Ok((name, m)),
            other => {
                let dims = other.dims();
                Err(ToastError::Shape {
                    layer: None,
                    tensor: name,
                    detail: format!("token batch is {dims:?}, expected [{}, {}]", want.0, want.1),
                })
            }
        })
        .collect::<Result<_, _>>()
        .reading(path)
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.into()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let write = || -> anyhow::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path)?;
        Ok(())
    };
    write()
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Internal)
}

/// `out.toast` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Refuses to overwrite any input.
pub fn check_outputs(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for (i, out) in outputs.iter().enumerate() {
        let o = canon(out);
        if inputs.iter().any(|p| canon(p) == o) {
            return Err(CliError::input(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
        if outputs[..i].iter().any(|p| canon(p) == o) {
            return Err(CliError::input(format!("output {} given twice", out.display())));
        }
    }
    Ok(())
}

/// Record of one invocation, written next to its primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub config_digest: String,
}

impl RunManifest {
    /// `resolved` is everything that determines the outputs besides the
    /// input files; its digest is SHA-256 over the compact JSON encoding.
    pub fn new<R: Serialize>(
        command: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        seed: u64,
        resolved: &R,
    ) -> CliResult<Self> {
        let canonical = serde_json::to_vec(resolved).map_err(|e| CliError::Internal(e.into()))?;
        Ok(Self {
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seed,
            config_digest: hex::encode(Sha256::digest(&canonical)),
        })
    }

    /// Writes to `path`, or to standard error when the command has no files
    /// of its own.
    pub fn emit(&self, path: Option<&Path>) -> CliResult<()> {
        let bytes = to_json(self)?;
        match path {
            Some(p) => write_atomic(p, &bytes),
            None => {
                eprint!("{}", String::from_utf8_lossy(&bytes));
                Ok(())
            }
        }
    }
}
