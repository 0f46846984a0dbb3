//! Single-layer bidirectional LSTM with hand-written backpropagation through
//! time.
//!
//! Gate layout inside the stacked `4H` pre-activation is `[i, f, g, o]`:
//!
//! - `i = σ(z_i)`, `f = σ(z_f)`, `o = σ(z_o)`, `g = tanh(z_g)`
//! - `c_t = f ⊙ c_{t-1} + i ⊙ g`
//! - `h_t = o ⊙ tanh(c_t)`
//!
//! Masked frames are skipped: they neither read nor update the recurrent
//! state and their output slots are zero. The forward direction visits real
//! frames in increasing order, the backward direction in decreasing order, so
//! each direction's final hidden state is its output at the boundary frame.

use super::affine::{affine_accumulate, affine_backward_into};
use super::pool::{SeqView, SequenceBatch};
use crate::error::{Error, Result};

/// Borrowed weights of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `4H × D`
    pub w_ih: &'a [f64],
    /// `4H × H`
    pub w_hh: &'a [f64],
    /// `4H`
    pub b: &'a [f64],
}

impl LstmWeights<'_> {
    fn check(&self, input: usize, hidden: usize) -> Result<()> {
        if hidden == 0 || input == 0 {
            return Err(Error::Config("LSTM sizes must be positive".into()));
        }
        let g = 4 * hidden;
        if self.w_ih.len() != g * input || self.w_hh.len() != g * hidden || self.b.len() != g {
            return Err(Error::Config(format!(
                "LSTM weight shapes do not match input {input}, hidden {hidden}"
            )));
        }
        Ok(())
    }
}

/// Owned weights of one direction, mostly for standalone use and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: vec![0.0; 4 * hidden * input],
            w_hh: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn view(&self) -> LstmWeights<'_> {
        LstmWeights {
            w_ih: &self.w_ih,
            w_hh: &self.w_hh,
            b: &self.b,
        }
    }
}

/// Gradient accumulators for one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let p = LstmParams::zeros(input, hidden);
        Self {
            w_ih: p.w_ih,
            w_hh: p.w_hh,
            b: p.b,
        }
    }
}

#[derive(Debug, Clone)]
struct DirectionTrace {
    /// frame index of each processed step, in processing order
    steps: Vec<usize>,
    /// post-activation gates, `n × 4H`
    gates: Vec<f64>,
    /// cell states, `n × H`
    cells: Vec<f64>,
    /// hidden states, `n × H`
    hidden: Vec<f64>,
}

/// Forward results for one sequence plus what backward needs.
#[derive(Debug, Clone)]
pub struct BlstmTrace {
    hidden: usize,
    frames: usize,
    fwd: DirectionTrace,
    bwd: DirectionTrace,
}

impl BlstmTrace {
    /// `frames × 2H`; row `t` is `[h_fwd(t), h_bwd(t)]`, zero on masked frames.
    pub fn outputs(&self) -> Vec<f64> {
        let h = self.hidden;
        let mut out = vec![0.0; self.frames * 2 * h];
        for (dir, tr) in [(0, &self.fwd), (1, &self.bwd)] {
            for (k, &t) in tr.steps.iter().enumerate() {
                out[t * 2 * h + dir * h..t * 2 * h + (dir + 1) * h]
                    .copy_from_slice(&tr.hidden[k * h..(k + 1) * h]);
            }
        }
        out
    }

    /// `[h_fwd(last real frame), h_bwd(first real frame)]`.
    pub fn final_hidden(&self) -> Vec<f64> {
        let h = self.hidden;
        let n = self.fwd.steps.len();
        let mut out = Vec::with_capacity(2 * h);
        out.extend_from_slice(&self.fwd.hidden[(n - 1) * h..n * h]);
        out.extend_from_slice(&self.bwd.hidden[(n - 1) * h..n * h]);
        out
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn run_direction(
    seq: SeqView<'_>,
    w: LstmWeights<'_>,
    hidden: usize,
    steps: Vec<usize>,
) -> DirectionTrace {
    let h = hidden;
    let n = steps.len();
    let mut gates = vec![0.0; n * 4 * h];
    let mut cells = vec![0.0; n * h];
    let mut hs = vec![0.0; n * h];
    let zero = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    for (k, &t) in steps.iter().enumerate() {
        z.copy_from_slice(w.b);
        affine_accumulate(seq.frame(t), w.w_ih, &mut z);
        let (h_prev, c_prev): (&[f64], &[f64]) = if k == 0 {
            (&zero, &zero)
        } else {
            (&hs[(k - 1) * h..k * h], &cells[(k - 1) * h..k * h])
        };
        affine_accumulate(h_prev, w.w_hh, &mut z);
        let g_out = &mut gates[k * 4 * h..(k + 1) * 4 * h];
        for j in 0..h {
            g_out[j] = sigmoid(z[j]);
            g_out[h + j] = sigmoid(z[h + j]);
            g_out[2 * h + j] = z[2 * h + j].tanh();
            g_out[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let mut c_new = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        for j in 0..h {
            let c = g_out[h + j] * c_prev[j] + g_out[j] * g_out[2 * h + j];
            c_new[j] = c;
            h_new[j] = g_out[3 * h + j] * c.tanh();
        }
        cells[k * h..(k + 1) * h].copy_from_slice(&c_new);
        hs[k * h..(k + 1) * h].copy_from_slice(&h_new);
    }
    DirectionTrace {
        steps,
        gates,
        cells,
        hidden: hs,
    }
}

/// Runs both directions over one sequence.
pub fn blstm_sequence(
    seq: SeqView<'_>,
    fwd: LstmWeights<'_>,
    bwd: LstmWeights<'_>,
    hidden: usize,
) -> Result<BlstmTrace> {
    fwd.check(seq.dims, hidden)?;
    bwd.check(seq.dims, hidden)?;
    let real: Vec<usize> = (0..seq.frames()).filter(|&t| seq.mask[t]).collect();
    if real.is_empty() {
        return Err(Error::Domain("BLSTM over an empty sequence".into()));
    }
    let rev: Vec<usize> = real.iter().rev().copied().collect();
    Ok(BlstmTrace {
        hidden,
        frames: seq.frames(),
        fwd: run_direction(seq, fwd, hidden, real),
        bwd: run_direction(seq, bwd, hidden, rev),
    })
}

/// Batch forward: per row `(outputs frames × 2H, final_hidden 2H)`.
pub fn blstm_forward(
    batch: &SequenceBatch,
    fwd: LstmWeights<'_>,
    bwd: LstmWeights<'_>,
    hidden: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    (0..batch.batch())
        .map(|b| {
            let tr = blstm_sequence(batch.row(b), fwd, bwd, hidden)?;
            Ok((tr.outputs(), tr.final_hidden()))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    seq: SeqView<'_>,
    w: LstmWeights<'_>,
    tr: &DirectionTrace,
    hidden: usize,
    dir: usize,
    d_outputs: Option<&[f64]>,
    d_final: Option<&[f64]>,
    grads: &mut LstmGrads,
) {
    let h = hidden;
    let n = tr.steps.len();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zero = vec![0.0; h];
    for k in (0..n).rev() {
        let t = tr.steps[k];
        let mut dh = dh_next.clone();
        if let Some(d) = d_outputs {
            let row = &d[t * 2 * h + dir * h..t * 2 * h + (dir + 1) * h];
            dh.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        if k == n - 1 {
            if let Some(d) = d_final {
                dh.iter_mut()
                    .zip(&d[dir * h..(dir + 1) * h])
                    .for_each(|(a, b)| *a += b);
            }
        }
        let gates = &tr.gates[k * 4 * h..(k + 1) * 4 * h];
        let c = &tr.cells[k * h..(k + 1) * h];
        let (h_prev, c_prev): (&[f64], &[f64]) = if k == 0 {
            (&zero, &zero)
        } else {
            (
                &tr.hidden[(k - 1) * h..k * h],
                &tr.cells[(k - 1) * h..k * h],
            )
        };
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        for (gb, d) in grads.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        affine_backward_into(seq.frame(t), w.w_ih, &dz, None, &mut grads.w_ih);
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        affine_backward_into(h_prev, w.w_hh, &dz, Some(&mut dh_next), &mut grads.w_hh);
    }
}

/// Backpropagates `∂L/∂outputs` (`frames × 2H`) and/or `∂L/∂final_hidden`
/// (`2H`) into both directions' weight gradients.
#[allow(clippy::too_many_arguments)]
pub fn blstm_backward(
    seq: SeqView<'_>,
    fwd: LstmWeights<'_>,
    bwd: LstmWeights<'_>,
    trace: &BlstmTrace,
    d_outputs: Option<&[f64]>,
    d_final: Option<&[f64]>,
    g_fwd: &mut LstmGrads,
    g_bwd: &mut LstmGrads,
) {
    let h = trace.hidden;
    backprop_direction(seq, fwd, &trace.fwd, h, 0, d_outputs, d_final, g_fwd);
    backprop_direction(seq, bwd, &trace.bwd, h, 1, d_outputs, d_final, g_bwd);
}
