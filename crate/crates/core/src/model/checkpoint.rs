//! Bit-exact parameter persistence. Floats are stored as hex-encoded IEEE
//! bit patterns, so save/load round-trips reproduce evaluation exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EmberError, Result};
use crate::numerics::{ParamStore, Tensor};

use super::config::TrainConfig;
use super::network::Architecture;

const MAGIC: &str = "ember-checkpoint 1";

/// Everything needed to rebuild the network a checkpoint belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub architecture: Architecture,
    /// Ablation tag this checkpoint was trained under ("full" for the
    /// unmodified model).
    pub variant: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    header: &CheckpointHeader,
    store: &ParamStore,
) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{MAGIC}")?;
    let header_json =
        serde_json::to_string(header).map_err(|e| EmberError::Checkpoint(e.to_string()))?;
    writeln!(out, "{header_json}")?;
    writeln!(out, "params {}", store.len())?;
    for (hpath, tensor) in store.iter() {
        write!(out, "{hpath} {} {}", tensor.rows(), tensor.cols())?;
        for v in tensor.data() {
            write!(out, " {:016x}", v.to_bits())?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamStore)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();

    let bad = |message: String| EmberError::Checkpoint(format!("{}: {message}", path.display()));

    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad(format!("bad magic line '{}'", line.trim_end())));
    }

    line.clear();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header: {e}")))?;

    line.clear();
    reader.read_line(&mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix("params ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad params line '{}'", line.trim_end())))?;

    let mut store = ParamStore::new();
    for _ in 0..count {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("truncated parameter section".into()));
        }
        let mut fields = line.split_whitespace();
        let param_path = fields
            .next()
            .ok_or_else(|| bad("missing path".into()))?
            .to_string();
        let rows: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad rows for {param_path}")))?;
        let cols: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad cols for {param_path}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for field in fields {
            let bits = u64::from_str_radix(field, 16)
                .map_err(|_| bad(format!("bad float bits '{field}' in {param_path}")))?;
            data.push(f64::from_bits(bits));
        }
        if data.len() != rows * cols {
            return Err(bad(format!(
                "{param_path}: expected {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        store.register(&param_path, Tensor::from_vec(rows, cols, data)?)?;
    }
    Ok((header, store))
}
