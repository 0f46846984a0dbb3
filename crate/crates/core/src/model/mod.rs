//! Fusion-fed scoring model: an aggregation stage followed by four
//! independent per-axis regression heads.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::axes::{Axis, AxisScores};
use crate::data::canonical_encoder_order;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::{
    affine_accumulate, affine_backward_into, blstm_backward, blstm_sequence, glorot_uniform,
    masked_mean, BlstmTrace, Grads, LstmGrads, LstmWeights, ParamSet, ParamTensor, SeqView,
    SequenceBatch,
};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aggregation {
    /// Mean-pool over time, then the heads.
    #[serde(rename = "mlp")]
    Mlp,
    /// Mean-pool, feed the pooled vector to a BLSTM as a length-1 sequence,
    /// heads read the final hidden state.
    #[serde(rename = "blstm_h")]
    BlstmH,
    /// BLSTM over frames, mean-pool its outputs, then the heads.
    #[serde(rename = "blstm_t")]
    BlstmT,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Mlp, Aggregation::BlstmH, Aggregation::BlstmT];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Mlp => "mlp",
            Aggregation::BlstmH => "blstm_h",
            Aggregation::BlstmT => "blstm_t",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mlp" => Ok(Aggregation::Mlp),
            "blstm_h" | "blstmh" => Ok(Aggregation::BlstmH),
            "blstm_t" | "blstmt" => Ok(Aggregation::BlstmT),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }

    pub fn uses_blstm(self) -> bool {
        self != Aggregation::Mlp
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoders: Vec<String>,
    pub aggregation: Aggregation,
    #[serde(default = "default_blstm_hidden")]
    pub blstm_hidden: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: Vec<usize>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_blstm_hidden() -> usize {
    256
}

fn default_head_hidden() -> Vec<usize> {
    vec![128]
}

impl ModelConfig {
    pub fn new(encoders: Vec<String>, aggregation: Aggregation) -> Self {
        Self {
            encoders,
            aggregation,
            blstm_hidden: default_blstm_hidden(),
            head_hidden: default_head_hidden(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }

    /// Encoders in fusion order.
    pub fn fused_encoders(&self) -> Vec<String> {
        canonical_encoder_order(self.encoders.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoders.is_empty() {
            return Err(Error::Config("model needs at least one encoder".into()));
        }
        if self.fused_encoders().len() != self.encoders.len() {
            return Err(Error::Config("encoder list has duplicates".into()));
        }
        if self.aggregation.uses_blstm() && self.blstm_hidden == 0 {
            return Err(Error::Config("blstm_hidden must be positive".into()));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::Config("head_hidden widths must be positive".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadLayout {
    hidden: Vec<Dense>,
    out: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LstmLayout {
    w_ih: usize,
    w_hh: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    blstm: Option<[LstmLayout; 2]>,
    heads: Vec<HeadLayout>,
}

/// Intermediate values of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pooled: Vec<f64>,
    trace: Option<BlstmTrace>,
    /// Per axis: the head input followed by every hidden activation.
    head_acts: Vec<Vec<Vec<f64>>>,
    pub scores: AxisScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    input_dim: usize,
    params: ParamSet,
    layout: Layout,
}

impl Model {
    /// Builds a freshly initialized model: Glorot-uniform weights, zero
    /// biases, LSTM forget-gate biases at 1.
    pub fn new(config: ModelConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let h = config.blstm_hidden;
        let blstm = if config.aggregation.uses_blstm() {
            let mut dirs = Vec::new();
            for dir in ["fwd", "bwd"] {
                let w_ih = glorot_uniform(&mut rng, input_dim, 4 * h, 4 * h * input_dim);
                let w_hh = glorot_uniform(&mut rng, h, 4 * h, 4 * h * h);
                let mut b = vec![0.0; 4 * h];
                b[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
                dirs.push(LstmLayout {
                    w_ih: params.push(
                        format!("blstm.{dir}.w_ih"),
                        ParamTensor::from_values(&[4 * h, input_dim], w_ih)?,
                    )?,
                    w_hh: params.push(
                        format!("blstm.{dir}.w_hh"),
                        ParamTensor::from_values(&[4 * h, h], w_hh)?,
                    )?,
                    b: params.push(
                        format!("blstm.{dir}.b"),
                        ParamTensor::from_values(&[4 * h], b)?,
                    )?,
                });
            }
            Some([dirs[0], dirs[1]])
        } else {
            None
        };
        let feat_dim = if blstm.is_some() { 2 * h } else { input_dim };
        let mut heads = Vec::with_capacity(4);
        for axis in Axis::ALL {
            let mut fan_in = feat_dim;
            let mut hidden = Vec::new();
            for (i, &width) in config.head_hidden.iter().enumerate() {
                let w = glorot_uniform(&mut rng, fan_in, width, width * fan_in);
                hidden.push(Dense {
                    w: params.push(
                        format!("head.{axis}.l{i}.w"),
                        ParamTensor::from_values(&[width, fan_in], w)?,
                    )?,
                    b: params.push(format!("head.{axis}.l{i}.b"), ParamTensor::zeros(&[width])?)?,
                });
                fan_in = width;
            }
            let w = glorot_uniform(&mut rng, fan_in, 1, fan_in);
            let out = Dense {
                w: params.push(
                    format!("head.{axis}.out.w"),
                    ParamTensor::from_values(&[1, fan_in], w)?,
                )?,
                b: params.push(format!("head.{axis}.out.b"), ParamTensor::zeros(&[1])?)?,
            };
            heads.push(HeadLayout { hidden, out });
        }
        Ok(Self {
            config,
            input_dim,
            params,
            layout: Layout { blstm, heads },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Width of the vector the heads read.
    pub fn feature_dim(&self) -> usize {
        if self.layout.blstm.is_some() {
            2 * self.config.blstm_hidden
        } else {
            self.input_dim
        }
    }

    /// Sets each head's output bias, e.g. to the training-label mean.
    pub fn set_output_bias(&mut self, bias: &AxisScores) {
        for (axis, head) in Axis::ALL.iter().zip(&self.layout.heads) {
            self.params.get_mut(head.out.b).values[0] = bias.get(*axis);
        }
    }

    /// Replaces every parameter value. Names and shapes must match.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.shapes() != self.params.shapes() {
            return Err(Error::Config(
                "parameter layout does not match the model".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    fn lstm(&self, l: LstmLayout) -> LstmWeights<'_> {
        LstmWeights {
            w_ih: &self.params.get(l.w_ih).values,
            w_hh: &self.params.get(l.w_hh).values,
            b: &self.params.get(l.b).values,
        }
    }

    fn check_input(&self, seq: &SeqView<'_>) -> Result<()> {
        if seq.dims != self.input_dim {
            return Err(Error::Config(format!(
                "input has {} feature dims, model expects {}",
                seq.dims, self.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass for one (possibly padded) sequence.
    pub fn forward_cached(&self, seq: SeqView<'_>) -> Result<ForwardCache> {
        self.check_input(&seq)?;
        let pooled = masked_mean(seq)?;
        let h = self.config.blstm_hidden;
        let (feat, trace) = match (self.config.aggregation, self.layout.blstm) {
            (Aggregation::Mlp, _) => (pooled.clone(), None),
            (Aggregation::BlstmH, Some([f, b])) => {
                let one = [true];
                let tr = blstm_sequence(
                    SeqView::dense(&pooled, self.input_dim, &one),
                    self.lstm(f),
                    self.lstm(b),
                    h,
                )?;
                (tr.final_hidden(), Some(tr))
            }
            (Aggregation::BlstmT, Some([f, b])) => {
                let tr = blstm_sequence(seq, self.lstm(f), self.lstm(b), h)?;
                let out = tr.outputs();
                let feat = masked_mean(SeqView {
                    data: &out,
                    mask: seq.mask,
                    dims: 2 * h,
                })?;
                (feat, Some(tr))
            }
            _ => unreachable!("BLSTM layout exists for BLSTM aggregations"),
        };
        let mut scores = AxisScores::default();
        let mut head_acts = Vec::with_capacity(4);
        for (axis, head) in Axis::ALL.iter().zip(&self.layout.heads) {
            let mut acts = vec![feat.clone()];
            for d in &head.hidden {
                let b = &self.params.get(d.b).values;
                let mut z = b.clone();
                affine_accumulate(
                    acts.last().expect("nonempty"),
                    &self.params.get(d.w).values,
                    &mut z,
                );
                z.iter_mut().for_each(|v| *v = v.tanh());
                acts.push(z);
            }
            let mut y = self.params.get(head.out.b).values.clone();
            affine_accumulate(
                acts.last().expect("nonempty"),
                &self.params.get(head.out.w).values,
                &mut y,
            );
            scores.set(*axis, y[0]);
            head_acts.push(acts);
        }
        Ok(ForwardCache {
            pooled,
            trace,
            head_acts,
            scores,
        })
    }

    pub fn forward_one(&self, seq: SeqView<'_>) -> Result<AxisScores> {
        Ok(self.forward_cached(seq)?.scores)
    }

    /// Scores every row of a padded batch.
    pub fn forward(&self, batch: &SequenceBatch, exec: Exec) -> Result<Vec<AxisScores>> {
        if batch.dims() != self.input_dim {
            return Err(Error::Config(format!(
                "input has {} feature dims, model expects {}",
                batch.dims(),
                self.input_dim
            )));
        }
        exec.map_range(batch.batch(), |b| self.forward_one(batch.row(b)))
            .into_iter()
            .collect()
    }

    /// Scores dense (unpadded) sequences given as `frames × input_dim` rows.
    pub fn predict_dense(&self, seqs: &[&[f64]], exec: Exec) -> Result<Vec<AxisScores>> {
        exec.map(seqs, |data| {
            let mask = dense_mask(data.len(), self.input_dim)?;
            self.forward_one(SeqView::dense(data, self.input_dim, &mask))
        })
        .into_iter()
        .collect()
    }

    /// Gradient of `Σ_axis d_scores[axis] · score[axis]` with respect to every
    /// parameter, given the forward cache of `seq`.
    pub fn backward(&self, seq: SeqView<'_>, cache: &ForwardCache, d_scores: &AxisScores) -> Grads {
        let mut grads = self.params.grad_buffer();
        let mut d_feat = vec![0.0; self.feature_dim()];
        for (k, (axis, head)) in Axis::ALL.iter().zip(&self.layout.heads).enumerate() {
            let acts = &cache.head_acts[k];
            let dy = [d_scores.get(*axis)];
            grads.0[head.out.b][0] += dy[0];
            let mut dh = vec![0.0; acts.last().expect("nonempty").len()];
            affine_backward_into(
                acts.last().expect("nonempty"),
                &self.params.get(head.out.w).values,
                &dy,
                Some(&mut dh),
                &mut grads.0[head.out.w],
            );
            for (i, d) in head.hidden.iter().enumerate().rev() {
                let out = &acts[i + 1];
                let dz: Vec<f64> = dh.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
                for (gb, v) in grads.0[d.b].iter_mut().zip(&dz) {
                    *gb += v;
                }
                let mut dx = vec![0.0; acts[i].len()];
                affine_backward_into(
                    &acts[i],
                    &self.params.get(d.w).values,
                    &dz,
                    Some(&mut dx),
                    &mut grads.0[d.w],
                );
                dh = dx;
            }
            for (a, b) in d_feat.iter_mut().zip(&dh) {
                *a += b;
            }
        }
        if let (Some([lf, lb]), Some(trace)) = (self.layout.blstm, cache.trace.as_ref()) {
            let d_in = self.input_dim;
            let h = self.config.blstm_hidden;
            let mut gf = LstmGrads::zeros(d_in, h);
            let mut gb = LstmGrads::zeros(d_in, h);
            match self.config.aggregation {
                Aggregation::BlstmH => {
                    let one = [true];
                    blstm_backward(
                        SeqView::dense(&cache.pooled, d_in, &one),
                        self.lstm(lf),
                        self.lstm(lb),
                        trace,
                        None,
                        Some(&d_feat),
                        &mut gf,
                        &mut gb,
                    );
                }
                Aggregation::BlstmT => {
                    let n = seq.real_frames() as f64;
                    let mut d_out = vec![0.0; seq.frames() * 2 * h];
                    for t in 0..seq.frames() {
                        if seq.mask[t] {
                            for (o, g) in d_out[t * 2 * h..(t + 1) * 2 * h].iter_mut().zip(&d_feat)
                            {
                                *o = g / n;
                            }
                        }
                    }
                    blstm_backward(
                        seq,
                        self.lstm(lf),
                        self.lstm(lb),
                        trace,
                        Some(&d_out),
                        None,
                        &mut gf,
                        &mut gb,
                    );
                }
                Aggregation::Mlp => unreachable!(),
            }
            for (l, g) in [(lf, gf), (lb, gb)] {
                grads.0[l.w_ih] = g.w_ih;
                grads.0[l.w_hh] = g.w_hh;
                grads.0[l.b] = g.b;
            }
        }
        grads
    }

    /// Names of the parameters belonging to `axis`'s head.
    pub fn head_param_names(&self, axis: Axis) -> Vec<String> {
        let prefix = format!("head.{axis}.");
        self.params
            .names()
            .iter()
            .filter(|n| n.starts_with(&prefix))
            .cloned()
            .collect()
    }

    /// Names of parameters shared by every axis.
    pub fn trunk_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .iter()
            .filter(|n| !n.starts_with("head."))
            .cloned()
            .collect()
    }
}

pub(crate) fn dense_mask(len: usize, dims: usize) -> Result<Vec<bool>> {
    if dims == 0 || !len.is_multiple_of(dims) || len == 0 {
        return Err(Error::Config(format!(
            "sequence of {len} values is not a whole number of {dims}-dim frames"
        )));
    }
    Ok(vec![true; len / dims])
}

/// Checks that each axis output has exactly zero gradient with respect to
/// every other axis's head parameters on `seq`.
pub fn head_independence_check(model: &Model, seq: SeqView<'_>) -> Result<bool> {
    let cache = model.forward_cached(seq)?;
    for k in Axis::ALL {
        let mut d = AxisScores::default();
        d.set(k, 1.0);
        let grads = model.backward(seq, &cache, &d);
        for j in Axis::ALL.into_iter().filter(|&j| j != k) {
            for name in model.head_param_names(j) {
                let idx = model.params.index_of(&name).expect("own parameter");
                if grads.0[idx].iter().any(|&g| g != 0.0) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
