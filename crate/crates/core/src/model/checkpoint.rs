//! Single-file checkpoints:
//!
//! ```text
//! b"RTSECKPT" | u32 major version | u64 header length | JSON header
//! | parameters as f64 LE | (optional) Adam first and second moments
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSpec;
use super::{ModelConfig, TseModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RTSECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub step: u64,
    pub best_val_loss: Option<f64>,
    /// Epochs since the best validation loss.
    #[serde(default)]
    pub stale_epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TseModel,
    pub meta: TrainingMeta,
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    params: Vec<ParamSpec>,
    meta: TrainingMeta,
    optimizer_step: Option<u64>,
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(path: &Path, model: &TseModel, meta: &TrainingMeta, optimizer: Option<&AdamState>) -> Result<()> {
    let n = model.num_params();
    if let Some(opt) = optimizer {
        if opt.m.len() != n || opt.v.len() != n {
            return Err(Error::shape("optimizer state does not match the parameter count"));
        }
    }
    let header = serde_json::to_vec(&Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        params: model.param_specs(),
        meta: meta.clone(),
        optimizer_step: optimizer.map(|o| o.step),
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        write_f64s(&mut w, &model.params)?;
        if let Some(opt) = optimizer {
            write_f64s(&mut w, &opt.m)?;
            write_f64s(&mut w, &opt.v)?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(Error::Checkpoint("header version disagrees with preamble".into()));
    }

    let mut model = TseModel::new(header.config, 0).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let expected = model.param_specs();
    if expected != header.params {
        let first = expected
            .iter()
            .zip(&header.params)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{} {:?} vs stored {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("{} tensors vs stored {}", expected.len(), header.params.len()));
        return Err(Error::Checkpoint(format!("parameters do not match the config: {first}")));
    }
    let n = model.num_params();
    model.set_params(read_f64s(&mut r, n)?)?;
    let optimizer = match header.optimizer_step {
        Some(step) => Some(AdamState {
            step,
            m: read_f64s(&mut r, n)?,
            v: read_f64s(&mut r, n)?,
        }),
        None => None,
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
        optimizer,
    })
}
