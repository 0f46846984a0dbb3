use std::collections::BTreeMap;

use super::fuse::{align_and_fuse, FrameSeq};
use super::manifest::Manifest;
use super::meb::{read_embedding, EmbeddingSequence};
use super::norm::{apply_norm, fit_encoder_stats, NormStats};
use crate::axes::AxisScores;
use crate::error::{Error, Result};
use crate::par::Exec;

/// Raw embeddings of a manifest, loaded once and shared by every consumer.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    /// Aligned with the manifest entries.
    pub utterances: Vec<StoredUtterance>,
}

#[derive(Debug, Clone)]
pub struct StoredUtterance {
    pub utt_id: String,
    pub system_id: String,
    pub scores: Option<AxisScores>,
    pub embeddings: BTreeMap<String, EmbeddingSequence>,
}

/// A fused, normalized clip ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    pub utt_id: String,
    pub system_id: String,
    pub labels: Option<AxisScores>,
    pub seq: FrameSeq,
}

impl EmbeddingStore {
    /// Reads the files of `encoders` (all of them when empty) for every
    /// manifest entry. Each file's header is checked against the manifest's
    /// encoder key.
    pub fn load(manifest: &Manifest, encoders: &[String], exec: Exec) -> Result<Self> {
        let loaded = exec.map(&manifest.entries, |e| -> Result<StoredUtterance> {
            let wanted: Vec<&String> = if encoders.is_empty() {
                e.embedding_paths.keys().collect()
            } else {
                encoders.iter().collect()
            };
            let mut embeddings = BTreeMap::new();
            for enc in wanted {
                let path = e.embedding_paths.get(enc).ok_or_else(|| {
                    Error::Data(format!("`{}` has no `{enc}` embedding", e.utt_id))
                })?;
                let seq = read_embedding(path)?;
                if &seq.encoder_id != enc {
                    return Err(Error::Data(format!(
                        "{} declares encoder `{}` but the manifest lists it as `{enc}`",
                        path.display(),
                        seq.encoder_id
                    )));
                }
                embeddings.insert(enc.clone(), seq);
            }
            Ok(StoredUtterance {
                utt_id: e.utt_id.clone(),
                system_id: e.system_id.clone(),
                scores: e.scores,
                embeddings,
            })
        });
        Ok(Self {
            utterances: loaded.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Fits normalization statistics for `encoders` over every stored frame.
    pub fn fit_norm(&self, encoders: &[String]) -> Result<NormStats> {
        let mut out = NormStats::default();
        for enc in encoders {
            let seqs: Vec<&EmbeddingSequence> = self
                .utterances
                .iter()
                .map(|u| {
                    u.embeddings.get(enc).ok_or_else(|| {
                        Error::Data(format!("`{}` has no `{enc}` embedding", u.utt_id))
                    })
                })
                .collect::<Result<_>>()?;
            out.encoders
                .insert(enc.clone(), fit_encoder_stats(enc, seqs.iter().copied())?);
        }
        Ok(out)
    }

    /// Normalizes and fuses `encoders` for every utterance.
    pub fn fuse(
        &self,
        encoders: &[String],
        norm: &NormStats,
        exec: Exec,
    ) -> Result<Vec<FusedSample>> {
        if encoders.is_empty() {
            return Err(Error::Config("at least one encoder is required".into()));
        }
        exec.map(&self.utterances, |u| {
            let seqs = encoders
                .iter()
                .map(|enc| {
                    let raw = u.embeddings.get(enc).ok_or_else(|| {
                        Error::Data(format!("`{}` has no `{enc}` embedding", u.utt_id))
                    })?;
                    apply_norm(raw, norm)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FusedSample {
                utt_id: u.utt_id.clone(),
                system_id: u.system_id.clone(),
                labels: u.scores,
                seq: align_and_fuse(&seqs)?,
            })
        })
        .into_iter()
        .collect()
    }
}

/// Fits normalization statistics on a (training) manifest.
pub fn fit_norm(manifest: &Manifest, encoders: &[String]) -> Result<NormStats> {
    EmbeddingStore::load(manifest, encoders, Exec::default())?.fit_norm(encoders)
}

/// SHA-256 over ids, labels and feature values of `samples`, in order.
pub fn dataset_fingerprint(samples: &[FusedSample]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in samples {
        for text in [&s.utt_id, &s.system_id, &s.seq.encoder_id] {
            h.update((text.len() as u64).to_le_bytes());
            h.update(text.as_bytes());
        }
        match s.labels {
            Some(l) => l.to_array().iter().for_each(|v| h.update(v.to_le_bytes())),
            None => h.update([0u8]),
        }
        h.update((s.seq.dims as u64).to_le_bytes());
        h.update(s.seq.frame_rate_hz.to_le_bytes());
        for v in &s.seq.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
