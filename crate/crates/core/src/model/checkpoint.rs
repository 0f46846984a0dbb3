//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `AQCK` |
//! | 4 | 4 | u32 format version (1) |
//! | 8 | 8 | u64 header length `H` |
//! | 16 | H | UTF-8 JSON header |
//! | 16+H | 8 | u64 blob length `B` in bytes |
//! | 24+H | B | f64 parameter values, concatenated in header order |
//! | 24+H+B | 4 | CRC-32 (IEEE) of header bytes followed by blob bytes |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::nn::ParamShape;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AQCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub dataset_fingerprint: String,
}

/// A model with the normalization statistics it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub norm_stats: NormStats,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    input_dim: usize,
    norm_stats: NormStats,
    params: Vec<ParamShape>,
    train_meta: TrainMeta,
}

impl Checkpoint {
    /// Checks that the normalization statistics cover exactly the model's
    /// encoders and sum to its input width.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.model.config();
        let mut total = 0;
        for enc in &cfg.encoders {
            total += self.norm_stats.dims(enc).ok_or_else(|| {
                Error::Config(format!("no normalization statistics for encoder `{enc}`"))
            })?;
        }
        if total != self.model.input_dim() {
            return Err(Error::Config(format!(
                "normalization statistics give {total} dims, model expects {}",
                self.model.input_dim()
            )));
        }
        Ok(())
    }

    /// Rejects the checkpoint unless its architecture matches `expected`.
    pub fn ensure_config(&self, expected: &ModelConfig) -> Result<()> {
        let have = self.model.config();
        let mismatch = |what: &str, a: String, b: String| {
            Err(Error::Config(format!(
                "checkpoint {what} is {a} but the configuration asks for {b}"
            )))
        };
        if have.aggregation != expected.aggregation {
            return mismatch(
                "aggregation",
                have.aggregation.to_string(),
                expected.aggregation.to_string(),
            );
        }
        if have.fused_encoders() != expected.fused_encoders() {
            return mismatch(
                "encoder set",
                have.fused_encoders().join(","),
                expected.fused_encoders().join(","),
            );
        }
        if have.head_hidden != expected.head_hidden {
            return mismatch(
                "head_hidden",
                format!("{:?}", have.head_hidden),
                format!("{:?}", expected.head_hidden),
            );
        }
        if have.aggregation.uses_blstm() && have.blstm_hidden != expected.blstm_hidden {
            return mismatch(
                "blstm_hidden",
                have.blstm_hidden.to_string(),
                expected.blstm_hidden.to_string(),
            );
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = Header {
            config: self.model.config().clone(),
            input_dim: self.model.input_dim(),
            norm_stats: self.norm_stats.clone(),
            params: self.model.params().shapes(),
            train_meta: self.train_meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut blob = Vec::with_capacity(self.model.params().num_scalars() * 8);
        for (_, t) in self.model.params().iter() {
            for v in &t.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut crc = crc32fast::Hasher::new();
        crc.update(&header);
        crc.update(&blob);
        let mut out = Vec::with_capacity(28 + header.len() + blob.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
        out.extend_from_slice(&crc.finalize().to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
        let take = |at: usize, n: usize, what: &str| -> Result<&[u8]> {
            bytes.get(at..at.saturating_add(n)).ok_or_else(|| {
                fail(
                    bytes.len(),
                    format!("truncated while reading {what} at offset {at}"),
                )
            })
        };
        if take(0, 4, "magic")? != CHECKPOINT_MAGIC {
            return Err(fail(0, "not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(4, 4, "version")?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fail(4, format!("unsupported checkpoint version {version}")));
        }
        let hlen =
            u64::from_le_bytes(take(8, 8, "header length")?.try_into().expect("8 bytes")) as usize;
        let header_bytes = take(16, hlen, "header")?;
        let blob_at = 16 + hlen;
        let blen = u64::from_le_bytes(
            take(blob_at, 8, "blob length")?
                .try_into()
                .expect("8 bytes"),
        ) as usize;
        let blob = take(blob_at + 8, blen, "parameter blob")?;
        let crc_at = blob_at + 8 + blen;
        let stored = u32::from_le_bytes(take(crc_at, 4, "checksum")?.try_into().expect("4 bytes"));
        if bytes.len() != crc_at + 4 {
            return Err(fail(crc_at + 4, "trailing bytes after checksum".into()));
        }
        let mut crc = crc32fast::Hasher::new();
        crc.update(header_bytes);
        crc.update(blob);
        if crc.finalize() != stored {
            return Err(fail(crc_at, "checksum mismatch".into()));
        }
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| fail(16, format!("invalid header: {e}")))?;
        let mut model =
            Model::new(header.config, header.input_dim).map_err(|e| fail(16, e.to_string()))?;
        let expected = model.params().shapes();
        for (want, got) in expected.iter().zip(&header.params) {
            if want != got {
                return Err(fail(
                    16,
                    format!(
                        "parameter `{}` has shape {:?}; the architecture needs `{}` with shape {:?}",
                        got.name, got.shape, want.name, want.shape
                    ),
                ));
            }
        }
        if expected.len() != header.params.len() {
            let missing = expected
                .iter()
                .skip(header.params.len())
                .chain(header.params.iter().skip(expected.len()))
                .map(|p| p.name.as_str())
                .next()
                .unwrap_or_default();
            return Err(fail(16, format!("parameter list mismatch at `{missing}`")));
        }
        let scalars = model.params().num_scalars();
        if blen != scalars * 8 {
            return Err(fail(
                blob_at,
                format!(
                    "parameter blob holds {blen} bytes, the architecture needs {}",
                    scalars * 8
                ),
            ));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for (name, t) in model.params_mut().iter_mut() {
            for v in t.values.iter_mut() {
                *v = values.next().expect("length checked");
                if !v.is_finite() {
                    return Err(fail(
                        blob_at + 8,
                        format!("parameter `{name}` holds a non-finite value"),
                    ));
                }
            }
        }
        let ck = Checkpoint {
            model,
            norm_stats: header.norm_stats,
            train_meta: header.train_meta,
        };
        ck.validate().map_err(|e| fail(16, e.to_string()))?;
        Ok(ck)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &ck.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
