//! Scene-level interventions and contrastive sample construction.
//!
//! Two families of edits act on a partitioned video. The *intervener* mixes
//! the causal scene, question, and label with a partner sample (changing the
//! answer equivariantly) and independently mixes the environment scene
//! (which must leave the answer alone). The *disruptor* swaps grounded clips
//! against a memory bank of environment clips from other videos to
//! synthesise positives — same cause, different surroundings — and visual
//! negatives — same surroundings, different cause — plus question-swapped
//! linguistic negatives.
//!
//! Everything except [`MemoryBank`] is pure; mixing runs on the tape so
//! gradients reach the grounded scenes being mixed.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numkit::{RngStream, Scalar, Tape, Tensor, Var};

/// Mixing ratios for one anchor sample, plus the batch partner they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionDraw {
    /// Causal-side ratio, drawn from `Beta(alpha, alpha)`.
    pub lambda0: f64,
    /// Environment-side ratio, drawn uniformly from `[0, 1)`.
    pub lambda1: f64,
    /// Index of the partner sample within the batch.
    pub partner: usize,
    /// The Beta concentration the draw used.
    pub alpha: f64,
}

impl InterventionDraw {
    /// Samples both ratios for `partner`. `alpha` must be positive.
    pub fn sample(rng: &mut RngStream, alpha: f64, partner: usize) -> Result<Self> {
        let lambda0 = rng.beta_symmetric(alpha)?;
        let lambda1 = rng.uniform01();
        Ok(InterventionDraw {
            lambda0,
            lambda1,
            partner,
            alpha,
        })
    }

    /// A no-op draw: keep the anchor's own scenes untouched.
    pub fn identity(partner: usize) -> Self {
        InterventionDraw {
            lambda0: 1.0,
            lambda1: 1.0,
            partner,
            alpha: 1.0,
        }
    }
}

fn check_ratio(op: &'static str, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(
            op,
            format!("mixing ratio must lie in [0, 1], got {lambda}"),
        ));
    }
    Ok(())
}

/// Convex mix of two tape nodes: `lambda * a + (1 - lambda) * b`.
fn mix<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, lambda: f64) -> Result<Var> {
    let la = tape.scale(a, T::from_f64(lambda))?;
    let lb = tape.scale(b, T::from_f64(1.0 - lambda))?;
    tape.add(la, lb)
}

/// Mixes the answer-determining half of two samples: causal scenes,
/// questions, and labels all interpolate with the same ratio, so the label
/// stays correct *by construction* — this is the equivariant edit.
///
/// Returns `(c_star, q_star, y_star)`; the soft label is a plain tensor
/// since labels carry no gradient.
pub fn e_intervene<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: (Var, Var, &Tensor<T>),
    partner: (Var, Var, &Tensor<T>),
    lambda0: f64,
) -> Result<(Var, Var, Tensor<T>)> {
    check_ratio("e_intervene", lambda0)?;
    let (c, q, y) = anchor;
    let (cp, qp, yp) = partner;
    if y.shape() != yp.shape() {
        return Err(Error::shape(
            "e_intervene",
            format!("label shapes differ: {:?} vs {:?}", y.shape(), yp.shape()),
        ));
    }
    let c_star = mix(tape, c, cp, lambda0)?;
    let q_star = mix(tape, q, qp, lambda0)?;
    let l = T::from_f64(lambda0);
    let one_minus = T::from_f64(1.0 - lambda0);
    let y_star_data: Vec<T> = y
        .data()
        .iter()
        .zip(yp.data())
        .map(|(&a, &b)| l * a + one_minus * b)
        .collect();
    let y_star = Tensor::new(y.shape().to_vec(), y_star_data)?;
    Ok((c_star, q_star, y_star))
}

/// Mixes two environment scenes: `e* = lambda1 * e + (1 - lambda1) * e'`.
/// No label is produced because this edit must not change the answer — that
/// is the invariance being trained.
pub fn i_intervene<T: Scalar>(
    tape: &mut Tape<T>,
    e_hat: Var,
    e_hat_partner: Var,
    lambda1: f64,
) -> Result<Var> {
    check_ratio("i_intervene", lambda1)?;
    mix(tape, e_hat, e_hat_partner, lambda1)
}

/// Reassembles a full video from its two scenes: `v* = c* + e*`.
pub fn compose_video<T: Scalar>(tape: &mut Tape<T>, c_star: Var, e_star: Var) -> Result<Var> {
    tape.add(c_star, e_star)
}

/// One banked clip: a width-`d` feature row and, when the source corpus
/// provides one, the answer label of the video it came from. The label is
/// the relevance tag the positive filter uses.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry<T: Scalar> {
    pub clip: Tensor<T>,
    pub tag: Option<usize>,
}

/// Bounded FIFO of environment-grounded clips from other training videos.
///
/// The bank only ever holds clips that were routed to the environment side
/// at insertion time; [`MemoryBank::push_environment_rows`] enforces that by
/// construction and rejects attempts to bank a causal-grounded clip.
#[derive(Debug, Clone)]
pub struct MemoryBank<T: Scalar> {
    entries: VecDeque<BankEntry<T>>,
    capacity: usize,
}

impl<T: Scalar> MemoryBank<T> {
    /// `capacity` is the maximum number of retained clips; the oldest are
    /// evicted first once it is exceeded.
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("MemoryBank::new", "capacity must be positive"));
        }
        Ok(MemoryBank {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries whose tag differs from `anchor_tag` (untagged entries always
    /// qualify). This is the pool [`make_positive`] draws from.
    pub fn eligible_count(&self, anchor_tag: usize) -> usize {
        self.entries
            .iter()
            .filter(|e| e.tag != Some(anchor_tag))
            .count()
    }

    /// Banks every row of `video` (`[K, d]` values) that the grounding mask
    /// marked as environment, tagging each with `tag`. Rows where
    /// `causal_mask` is `true` are skipped — they belong to the causal scene
    /// and must never enter the bank. Returns how many clips were pushed.
    pub fn push_environment_rows(
        &mut self,
        video: &Tensor<T>,
        causal_mask: &[bool],
        tag: Option<usize>,
    ) -> Result<usize> {
        if !video.is_matrix() || video.rows() != causal_mask.len() {
            return Err(Error::shape(
                "bank_push",
                format!(
                    "video {:?} does not match mask of length {}",
                    video.shape(),
                    causal_mask.len()
                ),
            ));
        }
        let mut pushed = 0;
        for (i, &causal) in causal_mask.iter().enumerate() {
            if causal {
                continue;
            }
            let clip = Tensor::vector(video.row(i).to_vec())?;
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(BankEntry { clip, tag });
            pushed += 1;
        }
        Ok(pushed)
    }

    /// Read-only view used by the disruptor and by tests.
    pub fn entries(&self) -> impl Iterator<Item = &BankEntry<T>> {
        self.entries.iter()
    }

    fn entry(&self, i: usize) -> &BankEntry<T> {
        &self.entries[i]
    }
}

/// Replaces the environment rows of `v_star` with distinct bank clips whose
/// tag differs from `anchor_tag`, leaving every causal row untouched — the
/// synthesised video should still earn the same answer.
///
/// `causal_mask` must be the re-grounded routing of `v_star` itself. Errors
/// with the exact shortfall if the bank cannot supply enough eligible clips;
/// clips are never reused within one positive.
pub fn make_positive<T: Scalar>(
    tape: &mut Tape<T>,
    v_star: Var,
    causal_mask: &[bool],
    anchor_tag: usize,
    bank: &MemoryBank<T>,
    rng: &mut RngStream,
) -> Result<Var> {
    substitute_rows(tape, v_star, causal_mask, Side::Environment, Some(anchor_tag), bank, rng)
}

/// Provenance of one contrastive negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    /// Causal rows replaced from the bank; environment kept.
    CausalDisrupted,
    /// Original video paired with a different sample's question.
    QuestionSwapped,
}

/// One negative sample: a video/question pair and how it was built.
#[derive(Debug, Clone, Copy)]
pub struct Negative {
    pub video: Var,
    pub question: Var,
    pub kind: NegativeKind,
}

/// Builds `n_visual` causally-disrupted negatives and `n_linguistic`
/// question-swapped negatives for the anchor `(v_star, q_star)`.
///
/// Visual negatives replace every *causal* row of `v_star` with bank clips
/// (distinct within each negative, unfiltered — any foreign clip breaks the
/// cause) and keep environment rows bit-identical. Linguistic negatives pair
/// the untouched `v_star` with questions drawn from `question_pool` entries
/// whose answer label differs from `anchor_label`; an empty filtered pool is
/// an error.
#[allow(clippy::too_many_arguments)]
pub fn make_negatives<T: Scalar>(
    tape: &mut Tape<T>,
    v_star: Var,
    q_star: Var,
    causal_mask: &[bool],
    bank: &MemoryBank<T>,
    question_pool: &[(Tensor<T>, usize)],
    n_visual: usize,
    n_linguistic: usize,
    anchor_label: usize,
    rng: &mut RngStream,
) -> Result<Vec<Negative>> {
    let _ = q_star;
    let mut out = Vec::with_capacity(n_visual + n_linguistic);
    for _ in 0..n_visual {
        let video = substitute_rows(tape, v_star, causal_mask, Side::Causal, None, bank, rng)?;
        out.push(Negative {
            video,
            question: q_star,
            kind: NegativeKind::CausalDisrupted,
        });
    }
    if n_linguistic > 0 {
        let eligible: Vec<&(Tensor<T>, usize)> = question_pool
            .iter()
            .filter(|(_, label)| *label != anchor_label)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyQuestionPool);
        }
        for _ in 0..n_linguistic {
            let (q, _) = eligible[rng.index(eligible.len())];
            let question = tape.constant(q.clone());
            out.push(Negative {
                video: v_star,
                question,
                kind: NegativeKind::QuestionSwapped,
            });
        }
    }
    Ok(out)
}

/// Which side of the partition gets swapped out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Causal,
    Environment,
}

/// Shared row-substitution kernel: rows of `v_star` on `side` are replaced
/// by distinct bank clips (optionally excluding `filter_tag`), the rest pass
/// through with gradient intact.
fn substitute_rows<T: Scalar>(
    tape: &mut Tape<T>,
    v_star: Var,
    causal_mask: &[bool],
    side: Side,
    filter_tag: Option<usize>,
    bank: &MemoryBank<T>,
    rng: &mut RngStream,
) -> Result<Var> {
    let v = tape.value(v_star);
    if !v.is_matrix() || v.rows() != causal_mask.len() {
        return Err(Error::shape(
            "substitute_rows",
            format!(
                "video {:?} does not match mask of length {}",
                v.shape(),
                causal_mask.len()
            ),
        ));
    }
    let (k, d) = (v.rows(), v.cols());
    let replace: Vec<usize> = (0..k)
        .filter(|&i| match side {
            Side::Causal => causal_mask[i],
            Side::Environment => !causal_mask[i],
        })
        .collect();
    if replace.is_empty() {
        return Ok(v_star);
    }

    let eligible: Vec<usize> = (0..bank.len())
        .filter(|&i| match filter_tag {
            Some(tag) => bank.entry(i).tag != Some(tag),
            None => true,
        })
        .collect();
    if eligible.len() < replace.len() {
        return Err(Error::InsufficientBank {
            needed: replace.len(),
            available: eligible.len(),
        });
    }
    let picks = rng.sample_distinct(eligible.len(), replace.len())?;

    // keep = v_star with replaced rows zeroed (keeps gradient on the rest);
    // patch = constant holding the bank clips on the replaced rows.
    let mut keep_weights = vec![T::one(); k];
    let mut patch = vec![T::zero(); k * d];
    for (slot, &row) in replace.iter().enumerate() {
        keep_weights[row] = T::zero();
        let entry = bank.entry(eligible[picks[slot]]);
        if entry.clip.len() != d {
            return Err(Error::shape(
                "substitute_rows",
                format!("bank clip width {} does not match video width {d}", entry.clip.len()),
            ));
        }
        patch[row * d..(row + 1) * d].copy_from_slice(entry.clip.data());
    }
    let keep_v = tape.constant(Tensor::vector(keep_weights)?);
    let kept = tape.scale_rows(v_star, keep_v)?;
    let patch_v = tape.constant(Tensor::matrix(k, d, patch)?);
    tape.add(kept, patch_v)
}

/// The full contrastive neighbourhood of one anchor, ready for scoring.
#[derive(Debug, Clone)]
pub struct ContrastiveSet<T: Scalar> {
    /// The intervened anchor: video, question, soft label.
    pub anchor_video: Var,
    pub anchor_question: Var,
    pub anchor_label: Tensor<T>,
    /// Synthesised positives, each `(video, question)`.
    pub positives: Vec<(Var, Var)>,
    /// Synthesised negatives with provenance.
    pub negatives: Vec<Negative>,
}

impl<T: Scalar> ContrastiveSet<T> {
    /// Validates the counting invariants: at least one positive, and exactly
    /// `n_visual` + `n_linguistic` negatives of the matching kinds.
    pub fn validate(&self, n_visual: usize, n_linguistic: usize) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::invalid(
                "ContrastiveSet",
                "at least one positive is required",
            ));
        }
        let visual = self
            .negatives
            .iter()
            .filter(|n| n.kind == NegativeKind::CausalDisrupted)
            .count();
        let linguistic = self.negatives.len() - visual;
        if visual != n_visual || linguistic != n_linguistic {
            return Err(Error::invalid(
                "ContrastiveSet",
                format!(
                    "expected {n_visual} visual + {n_linguistic} linguistic negatives, \
                     got {visual} + {linguistic}"
                ),
            ));
        }
        Ok(())
    }
}
