//! Differentiable building blocks with hand-written gradients.

mod adam;
mod affine;
mod gradcheck;
mod lstm;
mod param;
mod pool;

pub use adam::{adam_step, AdamConfig, AdamState};
pub(crate) use affine::{affine_accumulate, affine_backward_into};
pub use affine::{affine_backward, affine_forward, AffineGrads};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GRAD_CHECK_SCALE_FLOOR};
pub use lstm::{
    blstm_backward, blstm_forward, blstm_sequence, BlstmTrace, LstmGrads, LstmParams, LstmWeights,
};
pub use param::{glorot_uniform, Grads, ParamSet, ParamShape, ParamTensor};
pub use pool::{masked_mean, masked_mean_pool, SeqView, SequenceBatch};
