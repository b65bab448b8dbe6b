//! Weight files and training history CSV.
//!
//! Weight file layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "HMSCWGT\0"
//! version     u32      FORMAT_VERSION
//! seed        u64
//! config_len  u32
//! config      config_len bytes of JSON (ModelConfig)
//! n_params    u64
//! params      n_params x f64, in ParamLayout order
//! checksum    32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ForecastError, ModelConfig, ModelWeights, TrainHistory};

pub const MAGIC: &[u8; 8] = b"HMSCWGT\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

fn io_err(path: &Path, source: std::io::Error) -> ForecastError {
    ForecastError::Io { path: path.to_path_buf(), source }
}

pub fn encode_weights(weights: &ModelWeights) -> Result<Vec<u8>, ForecastError> {
    let config = serde_json::to_vec(&weights.config).map_err(|e| ForecastError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + config.len() + 8 * weights.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&weights.seed.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(weights.params.len() as u64).to_le_bytes());
    for p in &weights.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ForecastError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ForecastError::Format("unexpected end of weight data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ForecastError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ForecastError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights, ForecastError> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ForecastError::Format("not a weight file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ForecastError::Version { found: version, supported: FORMAT_VERSION });
    }
    if bytes.len() < 12 + CHECKSUM_LEN {
        return Err(ForecastError::Checksum);
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(ForecastError::Checksum);
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let seed = r.u64()?;
    let config_len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| ForecastError::Format(format!("config block: {e}")))?;
    let n = r.u64()? as usize;
    let raw = r.take(n.checked_mul(8).ok_or_else(|| ForecastError::Format("parameter count overflow".into()))?)?;
    if r.pos != body.len() {
        return Err(ForecastError::Format("trailing bytes after parameters".into()));
    }
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    ModelWeights::from_parts(config, seed, params)
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<(), ForecastError> {
    fs::write(path, encode_weights(weights)?).map_err(|e| io_err(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights, ForecastError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_weights(&bytes)
}

/// `epoch,train_loss,val_loss,lr`
pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<(), ForecastError> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for e in &history.epochs {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}
