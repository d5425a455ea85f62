//! The assembled model: encoder, grounding, and backbone parameters under
//! one roof, with binding, canonical parameter traversal, and the
//! intervention-free inference path.

use serde::{Deserialize, Serialize};

use crate::backbone::{fuse_and_answer, BackboneParams, BoundBackbone};
use crate::datagen::GenConfig;
use crate::encoders::{
    encode_question, encode_video, BoundQuestionEncoder, BoundVideoEncoder, QuestionEncoderParams,
    VideoEncoderParams,
};
use crate::error::{Error, Result};
use crate::grounding::{ground, BoundGrounding, GroundMode, GroundingParams};
use crate::numkit::{RngStream, Scalar, Tape, Tensor, Var};

/// Widths the model is built for. Checked against data and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Raw clip-feature width the video encoder ingests.
    pub d_in: usize,
    /// Question token embedding width.
    pub d_q: usize,
    /// Shared model width.
    pub d: usize,
    /// Answer vocabulary size.
    pub n_answers: usize,
}

impl ModelDims {
    /// Dimensions implied by a generator config plus the chosen model width.
    pub fn for_corpus(cfg: &GenConfig, d: usize) -> Self {
        ModelDims {
            d_in: cfg.d_in,
            d_q: cfg.d_q,
            d,
            n_answers: cfg.n_answers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d_in", self.d_in),
            ("d_q", self.d_q),
            ("d", self.d),
            ("n_answers", self.n_answers),
        ] {
            if v == 0 {
                return Err(Error::invalid(
                    "model_dims",
                    format!("{field} must be positive"),
                ));
            }
        }
        Ok(())
    }

    /// Field-by-field comparison that names the first mismatch.
    pub fn check_matches(&self, expected: &ModelDims) -> Result<()> {
        for (field, got, want) in [
            ("d_in", self.d_in, expected.d_in),
            ("d_q", self.d_q, expected.d_q),
            ("d", self.d, expected.d),
            ("n_answers", self.n_answers, expected.n_answers),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch {
                    field: field.to_string(),
                    expected: want,
                    got,
                });
            }
        }
        Ok(())
    }
}

/// Every trainable tensor in the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub dims: ModelDims,
    pub video_enc: VideoEncoderParams<T>,
    pub question_enc: QuestionEncoderParams<T>,
    pub grounding: GroundingParams<T>,
    pub backbone: BackboneParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Initialises every component from streams derived off `seed`, so two
    /// models built with the same dims and seed are identical.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let root = RngStream::new(seed, "model-init");
        let mut video_rng = root.derive("video-enc");
        let mut question_rng = root.derive("question-enc");
        let mut grounding_rng = root.derive("grounding");
        let mut backbone_rng = root.derive("backbone");
        Ok(ModelParams {
            dims,
            video_enc: VideoEncoderParams::init(dims.d_in, dims.d, &mut video_rng),
            question_enc: QuestionEncoderParams::init(dims.d_q, dims.d, &mut question_rng),
            grounding: GroundingParams::init(dims.d, &mut grounding_rng),
            backbone: BackboneParams::init(dims.d, dims.n_answers, &mut backbone_rng),
        })
    }

    /// Registers all parameters on a tape. The returned handle's
    /// [`BoundModel::vars`] order matches [`ModelParams::named_tensors`].
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundModel {
        BoundModel {
            video_enc: self.video_enc.bind(tape, trainable),
            question_enc: self.question_enc.bind(tape, trainable),
            grounding: self.grounding.bind(tape, trainable),
            backbone: self.backbone.bind(tape, trainable),
        }
    }

    /// The canonical parameter traversal. Checkpoints, the optimizer, and
    /// [`BoundModel::vars`] all rely on this single ordering.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("video_enc.w", &self.video_enc.w),
            ("video_enc.b", &self.video_enc.b),
            ("question_enc.w_z", &self.question_enc.w_z),
            ("question_enc.w_r", &self.question_enc.w_r),
            ("question_enc.w_h", &self.question_enc.w_h),
            ("question_enc.u_z", &self.question_enc.u_z),
            ("question_enc.u_r", &self.question_enc.u_r),
            ("question_enc.u_h", &self.question_enc.u_h),
            ("question_enc.b_z", &self.question_enc.b_z),
            ("question_enc.b_r", &self.question_enc.b_r),
            ("question_enc.b_h", &self.question_enc.b_h),
            ("grounding.fc1_w", &self.grounding.fc1_w),
            ("grounding.fc1_b", &self.grounding.fc1_b),
            ("grounding.fc2_w", &self.grounding.fc2_w),
            ("grounding.fc2_b", &self.grounding.fc2_b),
            ("grounding.fc3_w", &self.grounding.fc3_w),
            ("grounding.fc3_b", &self.grounding.fc3_b),
            ("grounding.fc4_w", &self.grounding.fc4_w),
            ("grounding.fc4_b", &self.grounding.fc4_b),
            ("backbone.w_att", &self.backbone.w_att),
            ("backbone.w_fuse", &self.backbone.w_fuse),
            ("backbone.b_fuse", &self.backbone.b_fuse),
            ("backbone.w_out", &self.backbone.w_out),
            ("backbone.b_out", &self.backbone.b_out),
        ]
    }

    /// Mutable traversal in the same order as [`ModelParams::named_tensors`].
    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("video_enc.w", &mut self.video_enc.w),
            ("video_enc.b", &mut self.video_enc.b),
            ("question_enc.w_z", &mut self.question_enc.w_z),
            ("question_enc.w_r", &mut self.question_enc.w_r),
            ("question_enc.w_h", &mut self.question_enc.w_h),
            ("question_enc.u_z", &mut self.question_enc.u_z),
            ("question_enc.u_r", &mut self.question_enc.u_r),
            ("question_enc.u_h", &mut self.question_enc.u_h),
            ("question_enc.b_z", &mut self.question_enc.b_z),
            ("question_enc.b_r", &mut self.question_enc.b_r),
            ("question_enc.b_h", &mut self.question_enc.b_h),
            ("grounding.fc1_w", &mut self.grounding.fc1_w),
            ("grounding.fc1_b", &mut self.grounding.fc1_b),
            ("grounding.fc2_w", &mut self.grounding.fc2_w),
            ("grounding.fc2_b", &mut self.grounding.fc2_b),
            ("grounding.fc3_w", &mut self.grounding.fc3_w),
            ("grounding.fc3_b", &mut self.grounding.fc3_b),
            ("grounding.fc4_w", &mut self.grounding.fc4_w),
            ("grounding.fc4_b", &mut self.grounding.fc4_b),
            ("backbone.w_att", &mut self.backbone.w_att),
            ("backbone.w_fuse", &mut self.backbone.w_fuse),
            ("backbone.b_fuse", &mut self.backbone.b_fuse),
            ("backbone.w_out", &mut self.backbone.w_out),
            ("backbone.b_out", &mut self.backbone.b_out),
        ]
    }

    /// Casts every tensor to another scalar width.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            dims: self.dims,
            video_enc: VideoEncoderParams {
                w: self.video_enc.w.cast(),
                b: self.video_enc.b.cast(),
            },
            question_enc: QuestionEncoderParams {
                w_z: self.question_enc.w_z.cast(),
                w_r: self.question_enc.w_r.cast(),
                w_h: self.question_enc.w_h.cast(),
                u_z: self.question_enc.u_z.cast(),
                u_r: self.question_enc.u_r.cast(),
                u_h: self.question_enc.u_h.cast(),
                b_z: self.question_enc.b_z.cast(),
                b_r: self.question_enc.b_r.cast(),
                b_h: self.question_enc.b_h.cast(),
            },
            grounding: GroundingParams {
                fc1_w: self.grounding.fc1_w.cast(),
                fc1_b: self.grounding.fc1_b.cast(),
                fc2_w: self.grounding.fc2_w.cast(),
                fc2_b: self.grounding.fc2_b.cast(),
                fc3_w: self.grounding.fc3_w.cast(),
                fc3_b: self.grounding.fc3_b.cast(),
                fc4_w: self.grounding.fc4_w.cast(),
                fc4_b: self.grounding.fc4_b.cast(),
            },
            backbone: BackboneParams {
                w_att: self.backbone.w_att.cast(),
                w_fuse: self.backbone.w_fuse.cast(),
                b_fuse: self.backbone.b_fuse.cast(),
                w_out: self.backbone.w_out.cast(),
                b_out: self.backbone.b_out.cast(),
            },
        }
    }
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct BoundModel {
    pub video_enc: BoundVideoEncoder,
    pub question_enc: BoundQuestionEncoder,
    pub grounding: BoundGrounding,
    pub backbone: BoundBackbone,
}

impl BoundModel {
    /// Bound variables in [`ModelParams::named_tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.video_enc.w,
            self.video_enc.b,
            self.question_enc.w_z,
            self.question_enc.w_r,
            self.question_enc.w_h,
            self.question_enc.u_z,
            self.question_enc.u_r,
            self.question_enc.u_h,
            self.question_enc.b_z,
            self.question_enc.b_r,
            self.question_enc.b_h,
            self.grounding.fc1_w,
            self.grounding.fc1_b,
            self.grounding.fc2_w,
            self.grounding.fc2_b,
            self.grounding.fc3_w,
            self.grounding.fc3_b,
            self.grounding.fc4_w,
            self.grounding.fc4_b,
            self.backbone.w_att,
            self.backbone.w_fuse,
            self.backbone.b_fuse,
            self.backbone.w_out,
            self.backbone.b_out,
        ]
    }

    /// Encodes one raw sample onto `tape`: `[K, d_in] -> [K, d]` clips and
    /// `[L, d_q] -> [d]` question.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        video: &Tensor<T>,
        question: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let v_raw = tape.constant(video.clone());
        let q_raw = tape.constant(question.clone());
        let v = encode_video(tape, &self.video_enc, v_raw)?;
        let q = encode_question(tape, &self.question_enc, q_raw)?;
        Ok((v, q))
    }
}

/// One inference result: the answer plus the grounding explanation that
/// came with it.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Raw answer scores.
    pub logits: Vec<f32>,
    /// Argmax of `logits` (lowest index wins ties).
    pub answer: usize,
    /// Deterministic causal/environment routing per clip.
    pub causal_mask: Vec<bool>,
    /// Causal attention over clips.
    pub p_causal: Vec<f32>,
    /// Environment attention over clips.
    pub p_env: Vec<f32>,
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// The inference path: encode, ground deterministically (for the
/// explanation), and answer from the *full* video. No intervention, no
/// disruption, no random draws.
pub fn predict(
    params: &ModelParams<f32>,
    video: &Tensor<f32>,
    question: &Tensor<f32>,
) -> Result<Prediction> {
    let mut tape: Tape<f32> = Tape::new();
    let model = params.bind(&mut tape, false);
    let (v, q) = model.encode(&mut tape, video, question)?;
    let part = ground(
        &mut tape,
        &model.grounding,
        v,
        q,
        GroundMode::HardDeterministic,
        1.0,
        None,
    )?;
    let out = fuse_and_answer(&mut tape, &model.backbone, v, q)?;
    let logits = tape.value(out.logits).data().to_vec();
    let answer = argmax(&logits);
    Ok(Prediction {
        logits,
        answer,
        causal_mask: part.causal_mask,
        p_causal: tape.value(part.p_causal).data().to_vec(),
        p_env: tape.value(part.p_env).data().to_vec(),
    })
}
