use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fuse::FrameSeq;
use super::meb::EmbeddingSequence;
use crate::error::{Error, Result};

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-encoder, per-dimension z-normalization statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormStats {
    pub encoders: BTreeMap<String, EncoderStats>,
}

impl NormStats {
    pub fn dims(&self, encoder: &str) -> Option<usize> {
        self.encoders.get(encoder).map(|s| s.mean.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fits statistics for one encoder over every frame of `seqs`.
pub fn fit_encoder_stats<'a, I>(encoder: &str, seqs: I) -> Result<EncoderStats>
where
    I: IntoIterator<Item = &'a EmbeddingSequence> + Clone,
{
    let mut dims = None;
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    let mut lo: Vec<f32> = Vec::new();
    let mut hi: Vec<f32> = Vec::new();
    for s in seqs.clone() {
        match dims {
            None => {
                dims = Some(s.dims);
                sum = vec![0.0; s.dims];
                lo = vec![f32::INFINITY; s.dims];
                hi = vec![f32::NEG_INFINITY; s.dims];
            }
            Some(d) if d != s.dims => {
                return Err(Error::Data(format!(
                    "encoder `{encoder}` has inconsistent dims ({d} vs {})",
                    s.dims
                )))
            }
            _ => {}
        }
        for t in 0..s.frames() {
            for (j, &x) in s.frame(t).iter().enumerate() {
                sum[j] += x as f64;
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
        }
        count += s.frames();
    }
    if count < 2 {
        return Err(Error::Domain(format!(
            "normalization for `{encoder}` needs at least 2 frames, got {count}"
        )));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(s, (l, h))| if l == h { *l as f64 } else { s / n })
        .collect();
    let mut sq = vec![0.0; mean.len()];
    for s in seqs {
        for t in 0..s.frames() {
            for (j, &x) in s.frame(t).iter().enumerate() {
                let d = x as f64 - mean[j];
                sq[j] += d * d;
            }
        }
    }
    let std = sq
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let sd = (v / n).sqrt();
            if sd < STD_FLOOR {
                log::warn!("encoder `{encoder}` dim {j}: near-zero variance, std floored");
                STD_FLOOR
            } else {
                sd
            }
        })
        .collect();
    Ok(EncoderStats { mean, std })
}

/// `(x − mean) / std` per dimension, widened to f64.
pub fn apply_norm(seq: &EmbeddingSequence, stats: &NormStats) -> Result<FrameSeq> {
    let st = stats.encoders.get(&seq.encoder_id).ok_or_else(|| {
        Error::Config(format!(
            "no normalization stats for encoder `{}`",
            seq.encoder_id
        ))
    })?;
    if st.mean.len() != seq.dims {
        return Err(Error::Config(format!(
            "encoder `{}`: stats have {} dims, sequence has {}",
            seq.encoder_id,
            st.mean.len(),
            seq.dims
        )));
    }
    let data = seq
        .data
        .chunks_exact(seq.dims)
        .flat_map(|row| {
            row.iter()
                .zip(&st.mean)
                .zip(&st.std)
                .map(|((&x, m), s)| (x as f64 - m) / s)
        })
        .collect();
    Ok(FrameSeq {
        encoder_id: seq.encoder_id.clone(),
        frame_rate_hz: seq.frame_rate_hz as f64,
        dims: seq.dims,
        data,
    })
}

/// Inverse of [`apply_norm`].
pub fn invert_norm(seq: &FrameSeq, stats: &NormStats) -> Result<FrameSeq> {
    let st = stats.encoders.get(&seq.encoder_id).ok_or_else(|| {
        Error::Config(format!(
            "no normalization stats for encoder `{}`",
            seq.encoder_id
        ))
    })?;
    let data = seq
        .data
        .chunks_exact(seq.dims)
        .flat_map(|row| {
            row.iter()
                .zip(&st.mean)
                .zip(&st.std)
                .map(|((x, m), s)| x * s + m)
        })
        .collect();
    Ok(FrameSeq {
        data,
        ..seq.clone()
    })
}
