use std::ops::Range;

use rand::Rng;

use super::canonical_encoder_order;
use crate::error::{Error, Result};

/// Frame-level features in f64 after widening (and usually normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeq {
    pub encoder_id: String,
    pub frame_rate_hz: f64,
    pub dims: usize,
    /// `frames × dims`, row-major.
    pub data: Vec<f64>,
}

impl FrameSeq {
    pub fn frames(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.frame_rate_hz
    }

    pub fn slice_frames(&self, r: Range<usize>) -> FrameSeq {
        FrameSeq {
            data: self.data[r.start * self.dims..r.end * self.dims].to_vec(),
            ..self.clone()
        }
    }
}

/// Encoder id of a fused sequence.
pub const FUSED_ID: &str = "fused";

/// Resamples every sequence onto the frame grid of the lowest-rate input by
/// linear interpolation and concatenates features in canonical encoder
/// order (wavlm, muq, m2d, then the rest lexicographically).
///
/// Frame `k` of a sequence at rate `r` sits at time `k / r`. Target times
/// past a sequence's last frame take its last frame.
pub fn align_and_fuse(seqs: &[FrameSeq]) -> Result<FrameSeq> {
    if seqs.is_empty() {
        return Err(Error::Domain("nothing to fuse".into()));
    }
    if seqs.len() == 1 {
        return Ok(seqs[0].clone());
    }
    let order = canonical_encoder_order(seqs.iter().map(|s| s.encoder_id.clone()).collect());
    let mut sorted: Vec<&FrameSeq> = Vec::with_capacity(seqs.len());
    for id in &order {
        let matches: Vec<&FrameSeq> = seqs.iter().filter(|s| &s.encoder_id == id).collect();
        if matches.len() != 1 {
            return Err(Error::Config(format!(
                "encoder `{id}` given more than once"
            )));
        }
        sorted.push(matches[0]);
    }
    for s in &sorted {
        if s.dims == 0 || s.data.is_empty() || s.data.len() % s.dims != 0 {
            return Err(Error::Domain(format!(
                "`{}` has no whole frames",
                s.encoder_id
            )));
        }
        if s.frame_rate_hz.is_nan() || s.frame_rate_hz <= 0.0 {
            return Err(Error::Domain(format!(
                "`{}` has an invalid frame rate",
                s.encoder_id
            )));
        }
    }
    // first lowest-rate sequence in canonical order defines the grid
    let grid = sorted
        .iter()
        .copied()
        .reduce(|a, b| {
            if b.frame_rate_hz < a.frame_rate_hz {
                b
            } else {
                a
            }
        })
        .expect("non-empty");
    let rate = grid.frame_rate_hz;
    let frames = grid.frames();
    let dims: usize = sorted.iter().map(|s| s.dims).sum();
    let mut data = vec![0.0; frames * dims];
    let mut col = 0;
    for s in &sorted {
        let ratio = s.frame_rate_hz / rate;
        let last = s.frames() - 1;
        for k in 0..frames {
            let pos = k as f64 * ratio;
            let i0 = (pos.floor() as usize).min(last);
            let frac = if i0 >= last { 0.0 } else { pos - i0 as f64 };
            let i1 = (i0 + 1).min(last);
            let (a, b) = (s.frame(i0), s.frame(i1));
            let out = &mut data[k * dims + col..k * dims + col + s.dims];
            for ((o, x0), x1) in out.iter_mut().zip(a).zip(b) {
                *o = x0 + frac * (x1 - x0);
            }
        }
        col += s.dims;
    }
    Ok(FrameSeq {
        encoder_id: FUSED_ID.to_string(),
        frame_rate_hz: rate,
        dims,
        data,
    })
}

/// Frame range of a random crop: the whole sequence when it lasts at most
/// `max_seconds`, otherwise a uniformly placed window of
/// `⌊max_seconds · frame_rate⌋` frames.
pub fn crop_window<R: Rng + ?Sized>(
    frames: usize,
    frame_rate_hz: f64,
    max_seconds: f64,
    rng: &mut R,
) -> Range<usize> {
    let duration = frames as f64 / frame_rate_hz;
    if duration <= max_seconds {
        return 0..frames;
    }
    let window = ((max_seconds * frame_rate_hz).floor() as usize).clamp(1, frames);
    let start = rng.random_range(0..=frames - window);
    start..start + window
}

pub fn random_crop<R: Rng + ?Sized>(seq: &FrameSeq, max_seconds: f64, rng: &mut R) -> FrameSeq {
    let r = crop_window(seq.frames(), seq.frame_rate_hz, max_seconds, rng);
    if r.len() == seq.frames() {
        return seq.clone();
    }
    seq.slice_frames(r)
}
