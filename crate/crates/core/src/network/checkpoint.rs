use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, NetworkError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus everything needed to use or resume them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub encoder_digest: String,
    pub params: ModelParams<f64>,
    /// Additional named arrays, e.g. optimizer moments.
    pub extra: BTreeMap<String, Array2<f64>>,
    /// Free-form metadata (training configuration and progress).
    pub meta: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint data is truncated")]
    Truncated,
    #[error("checkpoint parameters do not match the stored model config: {0}")]
    Shape(#[from] NetworkError),
    #[error("checkpoint was trained with encoder `{stored}`, but `{current}` is configured")]
    EncoderMismatch { stored: String, current: String },
}

impl Checkpoint {
    pub fn ensure_encoder(&self, current: &str) -> Result<(), CheckpointError> {
        if self.encoder_digest != current {
            return Err(CheckpointError::EncoderMismatch {
                stored: self.encoder_digest.clone(),
                current: current.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    encoder_digest: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

const PARAM: &str = "param/";
const EXTRA: &str = "extra/";

/// Layout: magic, `u32` version, `u64` header length, JSON header, then every
/// array as little-endian `f64` in header order. Written to a temporary file
/// and renamed into place.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let named: Vec<(String, &Array2<f64>)> = ck
        .params
        .arrays
        .iter()
        .map(|(n, a)| (format!("{PARAM}{n}"), a))
        .chain(ck.extra.iter().map(|(n, a)| (format!("{EXTRA}{n}"), a)))
        .collect();
    let header = Header {
        model: ck.model.clone(),
        encoder_digest: ck.encoder_digest.clone(),
        meta: ck.meta.clone(),
        arrays: named
            .iter()
            .map(|(n, a)| ArrayEntry {
                name: n.clone(),
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(header.len() + 8 * ck.params.num_scalars() + 32);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, a) in &named {
        for x in a.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn take<'a>(data: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if data.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, rest) = data.split_at(n);
    *data = rest;
    Ok(head)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut data = bytes.as_slice();
    if take(&mut data, 8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut data, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = u64::from_le_bytes(take(&mut data, 8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(&mut data, hlen)?)?;
    header.model.validate()?;
    let mut params = BTreeMap::new();
    let mut extra = BTreeMap::new();
    for entry in &header.arrays {
        let raw = take(&mut data, entry.rows * entry.cols * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let a = Array2::from_shape_vec((entry.rows, entry.cols), values).map_err(|_| CheckpointError::Truncated)?;
        if let Some(n) = entry.name.strip_prefix(PARAM) {
            params.insert(n.to_string(), a);
        } else if let Some(n) = entry.name.strip_prefix(EXTRA) {
            extra.insert(n.to_string(), a);
        }
    }
    if !data.is_empty() {
        return Err(CheckpointError::Truncated);
    }
    let params = ModelParams { arrays: params };
    params.check_shapes(&header.model)?;
    Ok(Checkpoint {
        model: header.model,
        encoder_digest: header.encoder_digest,
        params,
        extra,
        meta: header.meta,
    })
}
