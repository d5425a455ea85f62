//! Answering backbone: question-guided attention pooling over clips, a
//! fused video–question representation, and answer logits.
//!
//! The backbone is deliberately plain — one attention head, one fusion
//! layer — because the interesting behaviour lives in how the grounding
//! stage decides *which* clips reach it, not in the capacity of the readout.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numkit::{RngStream, Scalar, Tape, Tensor, Var};

/// Which vector downstream contrastive terms should compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastiveRep {
    /// The fused hidden representation (width `d`). Default.
    #[default]
    Fused,
    /// The answer logits (width `n_answers`).
    Logits,
}

/// Backbone parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T: Scalar> {
    /// Bilinear clip-vs-question attention map, `[d, d]`.
    pub w_att: Tensor<T>,
    /// Fusion layer over `[pooled ; question]`, `[2d, d]` and `[d]`.
    pub w_fuse: Tensor<T>,
    pub b_fuse: Tensor<T>,
    /// Answer head, `[d, n_answers]` and `[n_answers]`.
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

impl<T: Scalar> BackboneParams<T> {
    pub fn init(d: usize, n_answers: usize, rng: &mut RngStream) -> Self {
        BackboneParams {
            w_att: Tensor::xavier(d, d, rng),
            w_fuse: Tensor::xavier(2 * d, d, rng),
            b_fuse: Tensor::zeros(&[d]),
            w_out: Tensor::xavier(d, n_answers, rng),
            b_out: Tensor::zeros(&[n_answers]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundBackbone {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone(), true)
            } else {
                tape.constant(t.clone())
            }
        };
        BoundBackbone {
            w_att: reg(&self.w_att),
            w_fuse: reg(&self.w_fuse),
            b_fuse: reg(&self.b_fuse),
            w_out: reg(&self.w_out),
            b_out: reg(&self.b_out),
        }
    }
}

/// Tape handles for [`BackboneParams`].
#[derive(Debug, Clone, Copy)]
pub struct BoundBackbone {
    pub w_att: Var,
    pub w_fuse: Var,
    pub b_fuse: Var,
    pub w_out: Var,
    pub b_out: Var,
}

/// Everything the answering pass produces.
#[derive(Debug, Clone)]
pub struct AnswerOutput {
    /// Fused video–question representation, `[d]`.
    pub answer_rep: Var,
    /// Unnormalised scores over the answer vocabulary, `[n_answers]`.
    pub logits: Var,
    /// Attention weights over clips used for pooling, `[K]`.
    pub attention: Var,
    /// Attention-pooled video vector, `[d]`.
    pub pooled: Var,
}

impl AnswerOutput {
    /// The vector contrastive terms operate on, per `rep` choice.
    pub fn contrastive(&self, rep: ContrastiveRep) -> Var {
        match rep {
            ContrastiveRep::Fused => self.answer_rep,
            ContrastiveRep::Logits => self.logits,
        }
    }
}

/// Runs the readout on an encoded video `[K, d]` and question `[d]`:
/// attention scores `s = (v W_att) q`, weights `softmax(s)`, pooled vector
/// `Σ_k w_k v_k`, fusion `tanh([pooled ; q] W_fuse + b_fuse)`, and answer
/// logits from the fused vector.
pub fn fuse_and_answer<T: Scalar>(
    tape: &mut Tape<T>,
    bb: &BoundBackbone,
    video: Var,
    question: Var,
) -> Result<AnswerOutput> {
    let keys = tape.matmul(video, bb.w_att)?;
    let scores = tape.matvec(keys, question)?;
    let attention = tape.softmax_vec(scores)?;
    let pooled = tape.weighted_row_sum(video, attention)?;
    let joint = tape.concat_vec(pooled, question)?;
    let fused_pre = tape.vecmat(joint, bb.w_fuse)?;
    let fused_pre = tape.add(fused_pre, bb.b_fuse)?;
    let answer_rep = tape.tanh(fused_pre)?;
    let logits_pre = tape.vecmat(answer_rep, bb.w_out)?;
    let logits = tape.add(logits_pre, bb.b_out)?;
    Ok(AnswerOutput {
        answer_rep,
        logits,
        attention,
        pooled,
    })
}
