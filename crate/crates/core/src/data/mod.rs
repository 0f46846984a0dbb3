//! Manifests, embedding files, normalization, fusion, splitting and the
//! synthetic corpus generator.

mod fuse;
mod manifest;
mod meb;
mod norm;
mod split;
mod store;
mod synth;

pub use crate::axes::{composite_score, Axis, AxisScores};
pub use fuse::{align_and_fuse, crop_window, random_crop, FrameSeq, FUSED_ID};
pub use manifest::{Manifest, ScoreRange, Utterance, MANIFEST_VERSION};
pub use meb::{read_embedding, write_embedding, EmbeddingSequence, MEB_MAGIC, MEB_VERSION};
pub use norm::{apply_norm, fit_encoder_stats, invert_norm, EncoderStats, NormStats, STD_FLOOR};
pub use split::{stratified_split, train_count};
pub use store::{dataset_fingerprint, fit_norm, EmbeddingStore, FusedSample, StoredUtterance};
pub use synth::{
    pooled_embedding, synth_corpus, AxisMap, GeneratingMap, SynthCorpus, SynthSpec, MANIFEST_FILE,
    MAP_FILE,
};

const CANONICAL_FIRST: [&str; 3] = ["wavlm", "muq", "m2d"];

/// Sorts encoder ids as wavlm, muq, m2d, then any others lexicographically.
pub fn canonical_encoder_order(mut ids: Vec<String>) -> Vec<String> {
    ids.sort_by(|a, b| {
        let rank = |s: &str| CANONICAL_FIRST.iter().position(|c| *c == s).unwrap_or(3);
        rank(a).cmp(&rank(b)).then_with(|| a.cmp(b))
    });
    ids.dedup();
    ids
}
