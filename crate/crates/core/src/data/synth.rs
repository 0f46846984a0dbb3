//! Seeded synthetic corpus whose labels are a known affine function of the
//! mean-pooled embeddings, used to verify that the pipeline can learn.
//!
//! Every utterance has a low-dimensional latent vector (system centre plus
//! an utterance offset). Each pseudo-encoder sees the latent through its own
//! fixed projection with orthonormal columns, plus zero-mean frame jitter, so
//! any single encoder carries the whole label signal. Labels are affine in
//! the latent, written as an affine map of the concatenated pooled
//! embeddings that spreads the weight evenly over the encoders.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{absolute, Manifest, ScoreRange, Utterance};
use super::meb::{write_embedding, EmbeddingSequence};
use crate::axes::{Axis, AxisScores};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_systems: usize,
    pub utts_per_system: usize,
    /// One entry per pseudo-encoder (`synth0`, `synth1`, …).
    pub encoder_dims: Vec<usize>,
    pub frame_rates_hz: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    /// Seed of the generating map; defaults to `seed`. Corpora sharing a
    /// map seed share the label function but not their clips.
    pub map_seed: Option<u64>,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Width of the shared latent; at most the smallest encoder width.
    pub latent_dim: usize,
    /// Spread of per-system latent centres.
    pub system_std: f64,
    /// Spread of per-utterance latent offsets around the system centre.
    pub utterance_std: f64,
    /// Zero-mean frame-to-frame variation around the utterance latent.
    pub frame_std: f64,
    /// Standard deviation of the noiseless scores.
    pub score_std: f64,
    pub score_range: ScoreRange,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_systems: 40,
            utts_per_system: 25,
            encoder_dims: vec![16, 24],
            frame_rates_hz: vec![8.0, 4.0],
            noise_std: 0.0,
            seed: 0,
            map_seed: None,
            min_duration_s: 2.0,
            max_duration_s: 14.0,
            latent_dim: 8,
            system_std: 0.6,
            utterance_std: 0.8,
            frame_std: 0.3,
            score_std: 1.0,
            score_range: ScoreRange::default(),
        }
    }
}

impl SynthSpec {
    pub fn encoder_ids(&self) -> Vec<String> {
        (0..self.encoder_dims.len())
            .map(|k| format!("synth{k}"))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_systems == 0 || self.utts_per_system == 0 || self.encoder_dims.is_empty() {
            return Err(Error::Config(
                "synthetic corpus sizes must be positive".into(),
            ));
        }
        if self.encoder_dims.len() > 10 {
            // keeps lexicographic encoder order equal to numeric order
            return Err(Error::Config("at most 10 pseudo-encoders".into()));
        }
        if self.encoder_dims.len() != self.frame_rates_hz.len() {
            return Err(Error::Config(
                "encoder_dims and frame_rates_hz differ in length".into(),
            ));
        }
        if self.encoder_dims.contains(&0)
            || self.frame_rates_hz.iter().any(|r| r.is_nan() || *r <= 0.0)
        {
            return Err(Error::Config(
                "dims and frame rates must be positive".into(),
            ));
        }
        if self.latent_dim == 0 || self.encoder_dims.iter().any(|&d| d < self.latent_dim) {
            return Err(Error::Config(
                "latent_dim must be in 1..=min(encoder_dims)".into(),
            ));
        }
        let nonneg = [
            self.noise_std,
            self.system_std,
            self.utterance_std,
            self.frame_std,
            self.score_std,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "standard deviations must be finite and >= 0".into(),
            ));
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return Err(Error::Config("invalid duration range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMap {
    pub axis: Axis,
    pub bias: f64,
    pub weights: Vec<f64>,
}

/// The affine map from pooled embeddings to noiseless scores.
///
/// The pooled vector is the per-encoder mean over frames of the stored f32
/// embeddings (widened to f64), concatenated in `encoders` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingMap {
    pub encoders: Vec<String>,
    pub dims: Vec<usize>,
    pub noise_std: f64,
    pub score_range: ScoreRange,
    pub axes: Vec<AxisMap>,
}

impl GeneratingMap {
    pub fn noiseless(&self, pooled: &[f64]) -> AxisScores {
        let mut out = AxisScores::default();
        for m in &self.axes {
            let mut v = m.bias;
            for (w, x) in m.weights.iter().zip(pooled) {
                v += w * x;
            }
            out.set(m.axis, v);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pooled vector of one utterance's per-encoder sequences, in order.
pub fn pooled_embedding(seqs: &[&EmbeddingSequence]) -> Vec<f64> {
    let mut out = Vec::new();
    for s in seqs {
        let n = s.frames() as f64;
        let mut acc = vec![0.0; s.dims];
        for t in 0..s.frames() {
            for (a, &x) in acc.iter_mut().zip(s.frame(t)) {
                *a += x as f64;
            }
        }
        out.extend(acc.into_iter().map(|a| a / n));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    pub map: GeneratingMap,
    /// Number of labels that hit the score-range clip.
    pub clipped_labels: usize,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MAP_FILE: &str = "generating_map.json";

/// Generates the corpus under `out_dir`: `emb/*.meb`, `manifest.jsonl` and
/// `generating_map.json`.
pub fn synth_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    spec.validate()?;
    let out_dir = absolute(out_dir.as_ref())?;
    let emb_dir = out_dir.join("emb");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;

    let mut map_rng = ChaCha8Rng::seed_from_u64(spec.map_seed.unwrap_or(spec.seed));
    map_rng.set_stream(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let encoders = spec.encoder_ids();
    let l = spec.latent_dim;
    let projections: Vec<Vec<f64>> = spec
        .encoder_dims
        .iter()
        .map(|&d| orthonormal_columns(d, l, &mut map_rng, &std_normal))
        .collect();
    // latent entries have variance system_std² + utterance_std²
    let latent_sd = (spec.system_std.powi(2) + spec.utterance_std.powi(2))
        .sqrt()
        .max(1e-12);
    let share = 1.0 / encoders.len() as f64;
    let axes = Axis::ALL
        .iter()
        .map(|&axis| {
            let c: Vec<f64> = (0..l).map(|_| std_normal.sample(&mut map_rng)).collect();
            let norm = c.iter().map(|w| w * w).sum::<f64>().sqrt().max(1e-12);
            let c: Vec<f64> = c
                .iter()
                .map(|w| w * spec.score_std / (norm * latent_sd))
                .collect();
            // w_k = share · A_k c, so Σ_k w_k · (A_k z) = c · z
            let mut weights = Vec::new();
            for (a, &d) in projections.iter().zip(&spec.encoder_dims) {
                for i in 0..d {
                    weights.push(share * (0..l).map(|j| a[i * l + j] * c[j]).sum::<f64>());
                }
            }
            AxisMap {
                axis,
                bias: (spec.score_range.min + spec.score_range.max) / 2.0,
                weights,
            }
        })
        .collect();
    let map = GeneratingMap {
        encoders: encoders.clone(),
        dims: spec.encoder_dims.clone(),
        noise_std: spec.noise_std,
        score_range: spec.score_range,
        axes,
    };

    let mut entries = Vec::with_capacity(spec.n_systems * spec.utts_per_system);
    let mut clipped = 0usize;
    for s in 0..spec.n_systems {
        let system_id = format!("sys{s:03}");
        let centre: Vec<f64> = (0..l)
            .map(|_| spec.system_std * std_normal.sample(&mut rng))
            .collect();
        for u in 0..spec.utts_per_system {
            let utt_id = format!("{system_id}_utt{u:03}");
            let duration_s = rng.random_range(spec.min_duration_s..=spec.max_duration_s);
            let latent: Vec<f64> = centre
                .iter()
                .map(|c| c + spec.utterance_std * std_normal.sample(&mut rng))
                .collect();
            let mut seqs = Vec::with_capacity(encoders.len());
            for (k, enc) in encoders.iter().enumerate() {
                let d = spec.encoder_dims[k];
                let rate = spec.frame_rates_hz[k];
                let frames = ((duration_s * rate).floor() as usize).max(1);
                let a = &projections[k];
                let centre_k: Vec<f64> = (0..d)
                    .map(|i| (0..l).map(|j| a[i * l + j] * latent[j]).sum())
                    .collect();
                let jitter: Vec<f64> = (0..frames * d)
                    .map(|_| spec.frame_std * std_normal.sample(&mut rng))
                    .collect();
                let mut jitter_mean = vec![0.0; d];
                for row in jitter.chunks_exact(d) {
                    for (m, x) in jitter_mean.iter_mut().zip(row) {
                        *m += x / frames as f64;
                    }
                }
                let data: Vec<f32> = jitter
                    .chunks_exact(d)
                    .flat_map(|row| {
                        row.iter()
                            .zip(&centre_k)
                            .zip(&jitter_mean)
                            .map(|((j, c), m)| (c + j - m) as f32)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                seqs.push(EmbeddingSequence::new(enc.clone(), rate as f32, d, data)?);
            }
            let pooled = pooled_embedding(&seqs.iter().collect::<Vec<_>>());
            let mut scores = map.noiseless(&pooled);
            for axis in Axis::ALL {
                let noise = if spec.noise_std > 0.0 {
                    spec.noise_std * std_normal.sample(&mut rng)
                } else {
                    0.0
                };
                let v = scores.get(axis) + noise;
                let c = spec.score_range.clamp(v);
                if c != v {
                    clipped += 1;
                }
                scores.set(axis, c);
            }
            let mut embedding_paths = BTreeMap::new();
            for seq in &seqs {
                let p = emb_dir.join(format!("{utt_id}.{}.meb", seq.encoder_id));
                write_embedding(seq, &p)?;
                embedding_paths.insert(seq.encoder_id.clone(), p);
            }
            entries.push(Utterance {
                utt_id,
                system_id: system_id.clone(),
                scores: Some(scores),
                embedding_paths,
                duration_s,
            });
        }
    }
    let manifest = Manifest::new(spec.score_range, entries)?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    map.save(out_dir.join(MAP_FILE))?;
    if clipped > 0 {
        log::warn!("{clipped} synthetic labels clipped to the score range");
    }
    Ok(SynthCorpus {
        manifest,
        map,
        clipped_labels: clipped,
    })
}

/// A `rows × cols` row-major matrix with orthonormal columns, from
/// Gram-Schmidt on Gaussian draws.
fn orthonormal_columns<R: Rng>(
    rows: usize,
    cols: usize,
    rng: &mut R,
    normal: &Normal<f64>,
) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, b) in basis.iter().enumerate() {
        for (i, x) in b.iter().enumerate() {
            out[i * cols + j] = *x;
        }
    }
    out
}
