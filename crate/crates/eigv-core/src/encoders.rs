//! Input encoders: a linear projection for clip features and a gated
//! recurrent encoder for question tokens.
//!
//! Both encoders map their inputs into the shared model width `d` so the
//! grounding and fusion stages can compare clips against the question with
//! plain inner products.

use crate::error::Result;
use crate::numkit::{RngStream, Scalar, Tape, Tensor, Var};

/// Parameters of the clip encoder: one affine map applied to every clip row.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoderParams<T: Scalar> {
    /// Projection matrix, `[d_in, d]`.
    pub w: Tensor<T>,
    /// Bias added to every projected clip, `[d]`.
    pub b: Tensor<T>,
}

impl<T: Scalar> VideoEncoderParams<T> {
    pub fn init(d_in: usize, d: usize, rng: &mut RngStream) -> Self {
        VideoEncoderParams {
            w: Tensor::xavier(d_in, d, rng),
            b: Tensor::zeros(&[d]),
        }
    }
}

/// Tape handles for the clip encoder's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundVideoEncoder {
    pub w: Var,
    pub b: Var,
}

impl<T: Scalar> VideoEncoderParams<T> {
    /// Registers the parameters on `tape`. Pass `trainable = false` for
    /// evaluation passes that never call `backward`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundVideoEncoder {
        if trainable {
            BoundVideoEncoder {
                w: tape.leaf(self.w.clone(), true),
                b: tape.leaf(self.b.clone(), true),
            }
        } else {
            BoundVideoEncoder {
                w: tape.constant(self.w.clone()),
                b: tape.constant(self.b.clone()),
            }
        }
    }
}

/// Projects raw clip features `[K, d_in]` to model width `[K, d]`.
pub fn encode_video<T: Scalar>(
    tape: &mut Tape<T>,
    enc: &BoundVideoEncoder,
    video: Var,
) -> Result<Var> {
    let projected = tape.matmul(video, enc.w)?;
    tape.add_row_broadcast(projected, enc.b)
}

/// Parameters of the question encoder: a single-layer gated recurrent unit
/// run left-to-right over the token sequence from a zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEncoderParams<T: Scalar> {
    /// Input-to-hidden maps for the update, reset, and candidate gates,
    /// each `[d_q, d]`.
    pub w_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub w_h: Tensor<T>,
    /// Hidden-to-hidden maps, each `[d, d]`.
    pub u_z: Tensor<T>,
    pub u_r: Tensor<T>,
    pub u_h: Tensor<T>,
    /// Gate biases, each `[d]`.
    pub b_z: Tensor<T>,
    pub b_r: Tensor<T>,
    pub b_h: Tensor<T>,
}

impl<T: Scalar> QuestionEncoderParams<T> {
    pub fn init(d_q: usize, d: usize, rng: &mut RngStream) -> Self {
        QuestionEncoderParams {
            w_z: Tensor::xavier(d_q, d, rng),
            w_r: Tensor::xavier(d_q, d, rng),
            w_h: Tensor::xavier(d_q, d, rng),
            u_z: Tensor::xavier(d, d, rng),
            u_r: Tensor::xavier(d, d, rng),
            u_h: Tensor::xavier(d, d, rng),
            b_z: Tensor::zeros(&[d]),
            b_r: Tensor::zeros(&[d]),
            b_h: Tensor::zeros(&[d]),
        }
    }
}

/// Tape handles for the question encoder's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundQuestionEncoder {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

impl<T: Scalar> QuestionEncoderParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundQuestionEncoder {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone(), true)
            } else {
                tape.constant(t.clone())
            }
        };
        BoundQuestionEncoder {
            w_z: reg(&self.w_z),
            w_r: reg(&self.w_r),
            w_h: reg(&self.w_h),
            u_z: reg(&self.u_z),
            u_r: reg(&self.u_r),
            u_h: reg(&self.u_h),
            b_z: reg(&self.b_z),
            b_r: reg(&self.b_r),
            b_h: reg(&self.b_h),
        }
    }
}

/// One recurrence step: `h' = (1 - z) * h + z * cand`, where
/// `z = sigmoid(x W_z + h U_z + b_z)`, `r = sigmoid(x W_r + h U_r + b_r)`,
/// and `cand = tanh(x W_h + (r * h) U_h + b_h)`.
fn gru_step<T: Scalar>(
    tape: &mut Tape<T>,
    enc: &BoundQuestionEncoder,
    x: Var,
    h: Var,
) -> Result<Var> {
    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
        let xw = tape.vecmat(x, w)?;
        let hu = tape.vecmat(hin, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };
    let z_pre = gate(tape, enc.w_z, enc.u_z, enc.b_z, h)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, enc.w_r, enc.u_r, enc.b_r, h)?;
    let r = tape.sigmoid(r_pre)?;
    let gated_h = tape.mul(r, h)?;
    let cand_pre = gate(tape, enc.w_h, enc.u_h, enc.b_h, gated_h)?;
    let cand = tape.tanh(cand_pre)?;
    let keep = tape.one_minus(z)?;
    let kept = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    tape.add(kept, new)
}

/// Encodes a token sequence `[L, d_q]` into a single question vector `[d]`
/// by running the recurrence over rows in order and returning the final
/// hidden state.
pub fn encode_question<T: Scalar>(
    tape: &mut Tape<T>,
    enc: &BoundQuestionEncoder,
    tokens: Var,
) -> Result<Var> {
    let len = tape.value(tokens).rows();
    let d = tape.value(enc.b_z).len();
    let mut h = tape.constant(Tensor::zeros(&[d]));
    for t in 0..len {
        let x = tape.row(tokens, t)?;
        h = gru_step(tape, enc, x, h)?;
    }
    Ok(h)
}
