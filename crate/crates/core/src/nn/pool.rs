use crate::error::{Error, Result};

/// Right-padded batch of frame sequences with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    batch: usize,
    frames: usize,
    dims: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
}

/// Borrowed view of one row of a [`SequenceBatch`].
#[derive(Debug, Clone, Copy)]
pub struct SeqView<'a> {
    pub data: &'a [f64],
    pub mask: &'a [bool],
    pub dims: usize,
}

impl<'a> SeqView<'a> {
    /// View over a dense `frames × dims` block where every frame is real.
    pub fn dense(data: &'a [f64], dims: usize, mask: &'a [bool]) -> Self {
        debug_assert_eq!(data.len(), mask.len() * dims);
        Self { data, mask, dims }
    }

    pub fn frames(&self) -> usize {
        self.mask.len()
    }

    pub fn frame(&self, t: usize) -> &'a [f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn real_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

impl SequenceBatch {
    /// Builds a batch from per-row `frames × dims` blocks, right-padding with
    /// masked zero frames.
    pub fn from_rows(rows: &[(&[f64], usize)], dims: usize) -> Result<Self> {
        if rows.is_empty() || dims == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        let frames = rows.iter().map(|(_, n)| *n).max().unwrap_or(0);
        let batch = rows.len();
        let mut data = vec![0.0; batch * frames * dims];
        let mut mask = vec![false; batch * frames];
        for (b, (row, n)) in rows.iter().enumerate() {
            if *n == 0 {
                return Err(Error::Domain(format!("row {b} has no frames")));
            }
            if row.len() != n * dims {
                return Err(Error::Config(format!(
                    "row {b}: expected {} values, got {}",
                    n * dims,
                    row.len()
                )));
            }
            let off = b * frames * dims;
            data[off..off + row.len()].copy_from_slice(row);
            mask[b * frames..b * frames + n]
                .iter_mut()
                .for_each(|m| *m = true);
        }
        Ok(Self {
            batch,
            frames,
            dims,
            data,
            mask,
        })
    }

    /// Builds a batch from raw parts, enforcing the mask invariants.
    pub fn from_parts(
        batch: usize,
        frames: usize,
        dims: usize,
        data: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != batch * frames * dims || mask.len() != batch * frames {
            return Err(Error::Config("sequence batch buffer sizes disagree".into()));
        }
        let mut s = Self {
            batch,
            frames,
            dims,
            data,
            mask,
        };
        for b in 0..batch {
            if !s.mask[b * frames..(b + 1) * frames].iter().any(|&m| m) {
                return Err(Error::Domain(format!("row {b} is fully masked")));
            }
        }
        // masked frames carry zeros
        for (i, &m) in s.mask.iter().enumerate() {
            if !m {
                s.data[i * dims..(i + 1) * dims]
                    .iter_mut()
                    .for_each(|x| *x = 0.0);
            }
        }
        Ok(s)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, b: usize) -> SeqView<'_> {
        let f = self.frames;
        SeqView {
            data: &self.data[b * f * self.dims..(b + 1) * f * self.dims],
            mask: &self.mask[b * f..(b + 1) * f],
            dims: self.dims,
        }
    }
}

/// Mean over real frames of one sequence.
pub fn masked_mean(seq: SeqView<'_>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; seq.dims];
    let mut count = 0usize;
    for t in 0..seq.frames() {
        if !seq.mask[t] {
            continue;
        }
        count += 1;
        for (o, x) in out.iter_mut().zip(seq.frame(t)) {
            *o += x;
        }
    }
    if count == 0 {
        return Err(Error::Domain("mean pool over a fully masked row".into()));
    }
    let inv = 1.0 / count as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Per-row masked mean, `batch × dims`.
pub fn masked_mean_pool(seq: &SequenceBatch) -> Result<Vec<Vec<f64>>> {
    (0..seq.batch()).map(|b| masked_mean(seq.row(b))).collect()
}
