//! Evaluation (accuracy + grounding quality) and causal diagnostics
//! (invariance gap, equivariance score).
//!
//! These are the only consumers of the generator's ground-truth masks; the
//! training loop never sees them.

use serde::Serialize;

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::numkit::RngStream;
use crate::trainkit::model::{predict, ModelParams};

/// Metric bundle. `evaluate` fills the first two fields, `diagnostics` the
/// last two; absent fields stay `None` and are omitted from JSON reports.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Metrics {
    /// Fraction of correctly answered samples, in `[0, 1]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Mean IoU between the predicted causal clip set and the planted one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounding_iou: Option<f64>,
    /// Mean total-variation distance between answer distributions before
    /// and after an environment swap; 0 means perfectly invariant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariance_gap: Option<f64>,
    /// Fraction of causal-swap probes whose prediction moved to the
    /// partner's answer, in `[0, 1]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivariance_score: Option<f64>,
}

impl Metrics {
    /// Combines two partial bundles, preferring present fields of `other`.
    pub fn merged(self, other: Metrics) -> Metrics {
        Metrics {
            accuracy: other.accuracy.or(self.accuracy),
            grounding_iou: other.grounding_iou.or(self.grounding_iou),
            invariance_gap: other.invariance_gap.or(self.invariance_gap),
            equivariance_score: other.equivariance_score.or(self.equivariance_score),
        }
    }
}

/// Intersection-over-union of two boolean masks. Two empty masks count as
/// identical (IoU 1).
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Numerically stable softmax over raw scores, at full width.
pub fn softmax_values(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (f64::from(l) - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Accuracy and grounding IoU of `params` on `samples`, using the
/// deterministic inference path throughout.
pub fn evaluate(params: &ModelParams<f32>, samples: &[Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "empty split"));
    }
    let mut correct = 0usize;
    let mut iou_sum = 0.0f64;
    for sample in samples {
        let pred = predict(params, &sample.video, &sample.question)?;
        correct += usize::from(pred.answer == sample.answer);
        iou_sum += mask_iou(&pred.causal_mask, &sample.truth_mask);
    }
    let n = samples.len() as f64;
    Ok(Metrics {
        accuracy: Some(correct as f64 / n),
        grounding_iou: Some(iou_sum / n),
        ..Metrics::default()
    })
}

/// Replaces the rows of `base` selected by `positions` with the
/// correspondingly-indexed `donor_positions` rows of `donor`, in order.
fn swap_rows(
    base: &Sample,
    donor: &Sample,
    positions: &[usize],
    donor_positions: &[usize],
) -> crate::numkit::Tensor<f32> {
    let mut video = base.video.clone();
    let d = video.cols();
    for (&dst, &src) in positions.iter().zip(donor_positions) {
        let row: Vec<f32> = donor.video.row(src).to_vec();
        video.data_mut()[dst * d..(dst + 1) * d].copy_from_slice(&row);
    }
    video
}

fn positions(mask: &[bool], causal: bool) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m == causal)
        .map(|(i, _)| i)
        .collect()
}

/// Probes the two causal expectations the training procedure is meant to
/// instil, using ground truth the trainer never saw.
///
/// *Invariance*: swapping a sample's true environment clips for another
/// sample's should not move the answer distribution. The gap is the mean
/// total-variation distance over `n_probes` random (sample, donor) pairs.
///
/// *Equivariance*: swapping the true causal clips *and* the question for
/// another sample's should move the prediction to that sample's answer; the
/// score is the fraction of probes where it does.
pub fn diagnostics(
    params: &ModelParams<f32>,
    samples: &[Sample],
    n_probes: usize,
    rng: &mut RngStream,
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::invalid("diagnostics", "empty split"));
    }
    if n_probes == 0 {
        return Err(Error::invalid("diagnostics", "need at least one probe"));
    }
    let mut gap_sum = 0.0f64;
    let mut equivariant_hits = 0usize;
    for _ in 0..n_probes {
        let base = &samples[rng.index(samples.len())];
        let donor = &samples[rng.index(samples.len())];

        // Environment swap: same causal content, different surroundings.
        let base_env = positions(&base.truth_mask, false);
        let donor_env = positions(&donor.truth_mask, false);
        let n_env = base_env.len().min(donor_env.len());
        let swapped = swap_rows(base, donor, &base_env[..n_env], &donor_env[..n_env]);
        let before = predict(params, &base.video, &base.question)?;
        let after = predict(params, &swapped, &base.question)?;
        let p = softmax_values(&before.logits);
        let q = softmax_values(&after.logits);
        let tv: f64 = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
        gap_sum += tv;

        // Causal swap: the donor's cause and question should yield the
        // donor's answer.
        let base_causal = positions(&base.truth_mask, true);
        let donor_causal = positions(&donor.truth_mask, true);
        let n_causal = base_causal.len().min(donor_causal.len());
        let transplanted = swap_rows(base, donor, &base_causal[..n_causal], &donor_causal[..n_causal]);
        let moved = predict(params, &transplanted, &donor.question)?;
        equivariant_hits += usize::from(moved.answer == donor.answer);
    }
    let n = n_probes as f64;
    Ok(Metrics {
        invariance_gap: Some(gap_sum / n),
        equivariance_score: Some(equivariant_hits as f64 / n),
        ..Metrics::default()
    })
}
