//! Checkpoint files and run-directory plumbing.
//!
//! A checkpoint is `SMEL1\n`, one line of JSON metadata (model id,
//! iteration, config hash, architecture), then the parameters as
//! little-endian 32-bit floats in canonical layout order. Fixed endianness
//! makes roundtrips bit-exact across platforms. All artifact writes go
//! through a write-to-temp-then-rename helper so an interrupted process
//! never leaves a half-written file behind.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{unflatten, ModelConfig, ParamVector, TinyLM};

/// Leading bytes of every checkpoint file.
pub const MAGIC: &[u8; 6] = b"SMEL1\n";

/// The JSON line between the magic and the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model_id: String,
    /// Evolution iteration this snapshot belongs to; `None` for standalone
    /// models such as the shared pretrained base.
    pub iteration: Option<usize>,
    /// Hash of the run configuration that produced the model.
    pub config_hash: String,
    pub model_config: ModelConfig,
}

/// Serializes a model into checkpoint bytes.
pub fn checkpoint_bytes(model: &TinyLM, iteration: Option<usize>, config_hash: &str) -> Vec<u8> {
    let meta = CheckpointMeta {
        model_id: model.id.clone(),
        iteration,
        config_hash: config_hash.to_string(),
        model_config: model.config,
    };
    let meta_line = serde_json::to_string(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + meta_line.len() + 1 + model.params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(meta_line.as_bytes());
    out.push(b'\n');
    for v in model.params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(
    model: &TinyLM,
    path: &Path,
    iteration: Option<usize>,
    config_hash: &str,
) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model, iteration, config_hash))
}

/// Reads a checkpoint back. Magic, metadata, payload length, and finiteness
/// are each checked with their own error kind.
pub fn load_checkpoint(path: &Path) -> Result<(TinyLM, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Malformed {
            what: "checkpoint metadata",
            detail: format!("{}: no newline after the metadata line", path.display()),
        })?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Malformed {
            what: "checkpoint metadata",
            detail: format!("{}: {e}", path.display()),
        })?;
    let payload = &rest[nl + 1..];
    let expected = meta.model_config.param_count() * 4;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected,
            got: payload.len(),
        });
    }
    let mut values = Vec::with_capacity(expected / 4);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite("checkpoint payload"));
        }
        values.push(v);
    }
    let model = unflatten(meta.model_config, ParamVector(values), meta.model_id.clone())?;
    Ok((model, meta))
}

/// Writes `bytes` to `path` via a sibling temp file and an atomic rename,
/// creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.to_path_buf();
    let mut name = tmp
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".tmp");
    tmp.set_file_name(name);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Exclusive ownership of a run directory, held via a `.lock` file that is
/// removed on drop. A stale lock (owning process killed hard) must be
/// removed by hand, as the error message explains.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::RunLocked(run_dir.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
