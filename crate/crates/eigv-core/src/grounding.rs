//! Question-conditioned scene partitioning.
//!
//! Two bilinear attention heads score every clip against the question: one
//! head rates how *causal* a clip is for answering, the other how much it is
//! interchangeable *environment*. The two per-clip probabilities are stacked
//! into a K×2 logit table and a straight-through categorical draw routes each
//! clip to exactly one side, yielding a causal scene `c` and an environment
//! scene `e` with `c + e = v` reconstructing the encoded video bit for bit in
//! the hard modes.

use crate::error::{Error, Result};
use crate::numkit::{GumbelMode, RngStream, Scalar, Tape, Tensor, Var};

/// Probability floor applied before taking logs, so a clip the softmax has
/// driven to zero cannot produce `-inf` logits.
const LOG_FLOOR: f64 = 1e-12;

/// Parameters of the two scoring heads. Heads 1/2 produce the causal
/// attention (clip side / question side); heads 3/4 produce the environment
/// attention. Keeping the pairs separate lets the model rate the same clip
/// high on both, low on both, or split — the routing only compares the two.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingParams<T: Scalar> {
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
    pub fc3_w: Tensor<T>,
    pub fc3_b: Tensor<T>,
    pub fc4_w: Tensor<T>,
    pub fc4_b: Tensor<T>,
}

impl<T: Scalar> GroundingParams<T> {
    /// All four heads map width `d` to width `d`.
    pub fn init(d: usize, rng: &mut RngStream) -> Self {
        GroundingParams {
            fc1_w: Tensor::xavier(d, d, rng),
            fc1_b: Tensor::zeros(&[d]),
            fc2_w: Tensor::xavier(d, d, rng),
            fc2_b: Tensor::zeros(&[d]),
            fc3_w: Tensor::xavier(d, d, rng),
            fc3_b: Tensor::zeros(&[d]),
            fc4_w: Tensor::xavier(d, d, rng),
            fc4_b: Tensor::zeros(&[d]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundGrounding {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone(), true)
            } else {
                tape.constant(t.clone())
            }
        };
        BoundGrounding {
            fc1_w: reg(&self.fc1_w),
            fc1_b: reg(&self.fc1_b),
            fc2_w: reg(&self.fc2_w),
            fc2_b: reg(&self.fc2_b),
            fc3_w: reg(&self.fc3_w),
            fc3_b: reg(&self.fc3_b),
            fc4_w: reg(&self.fc4_w),
            fc4_b: reg(&self.fc4_b),
        }
    }
}

/// Tape handles for [`GroundingParams`].
#[derive(Debug, Clone, Copy)]
pub struct BoundGrounding {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
    pub fc3_w: Var,
    pub fc3_b: Var,
    pub fc4_w: Var,
    pub fc4_b: Var,
}

/// Per-clip attention over the K clips, one distribution per head.
#[derive(Debug, Clone, Copy)]
pub struct GroundingScores {
    /// Softmax over clips of the causal head, `[K]`.
    pub p_causal: Var,
    /// Softmax over clips of the environment head, `[K]`.
    pub p_env: Var,
}

/// Scores every clip of `video` (`[K, d]`) against `question` (`[d]`):
/// `p_causal = softmax_k((v W1 + b1) · (q W2 + b2))` and likewise
/// `p_env` through heads 3/4. Each distribution sums to one over clips.
pub fn attention_scores<T: Scalar>(
    tape: &mut Tape<T>,
    g: &BoundGrounding,
    video: Var,
    question: Var,
) -> Result<GroundingScores> {
    let head = |tape: &mut Tape<T>, wv: Var, bv: Var, wq: Var, bq: Var| -> Result<Var> {
        let vp = tape.matmul(video, wv)?;
        let vp = tape.add_row_broadcast(vp, bv)?;
        let qp = tape.vecmat(question, wq)?;
        let qp = tape.add(qp, bq)?;
        let scores = tape.matvec(vp, qp)?;
        tape.softmax_vec(scores)
    };
    let p_causal = head(tape, g.fc1_w, g.fc1_b, g.fc2_w, g.fc2_b)?;
    let p_env = head(tape, g.fc3_w, g.fc3_b, g.fc4_w, g.fc4_b)?;
    Ok(GroundingScores { p_causal, p_env })
}

/// How the K×2 routing indicator is materialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundMode {
    /// Straight-through categorical draw per clip: one-hot forward, tempered
    /// softmax backward. Used during training.
    HardStochastic,
    /// Noise-free argmax of the two probabilities (ties go to the causal
    /// column), emitted as a detached constant so no gradient reaches the
    /// scoring heads. Used at inference and when re-grounding synthesised
    /// videos.
    HardDeterministic,
    /// Tempered softmax without discretisation. Analysis only: the two
    /// scenes overlap fractionally and do not reconstruct the video exactly.
    Soft,
}

/// A video split into complementary causal/environment scenes.
#[derive(Debug, Clone)]
pub struct ScenePartition {
    /// Causal scene `[K, d]`: clip rows routed to the causal side, zeros
    /// elsewhere (fractional rows in [`GroundMode::Soft`]).
    pub causal: Var,
    /// Environment scene `[K, d]`, the complement.
    pub env: Var,
    /// The K×2 routing indicator the scenes were built from.
    pub indicator: Var,
    /// Causal attention over clips, `[K]`.
    pub p_causal: Var,
    /// Environment attention over clips, `[K]`.
    pub p_env: Var,
    /// `true` where the clip went to (or leans toward, in soft mode) the
    /// causal scene.
    pub causal_mask: Vec<bool>,
}

/// Hard routing decision from two probability vectors: clip `k` is causal
/// iff `p_causal[k] >= p_env[k]`, so exact ties side with causal.
pub fn deterministic_assignment<T: Scalar>(p_causal: &[T], p_env: &[T]) -> Vec<bool> {
    p_causal
        .iter()
        .zip(p_env)
        .map(|(&c, &e)| c >= e)
        .collect()
}

/// Partitions `video` (`[K, d]`) into causal and environment scenes under
/// `question` (`[d]`).
///
/// The per-clip routing logits are `[ln p_causal(k), ln p_env(k)]` (floored
/// at 1e-12). `rng` is required for the stochastic modes and ignored by
/// [`GroundMode::HardDeterministic`].
pub fn ground<T: Scalar>(
    tape: &mut Tape<T>,
    g: &BoundGrounding,
    video: Var,
    question: Var,
    mode: GroundMode,
    tau: T,
    rng: Option<&mut RngStream>,
) -> Result<ScenePartition> {
    let scores = attention_scores(tape, g, video, question)?;
    let indicator = match mode {
        GroundMode::HardStochastic | GroundMode::Soft => {
            let rng = rng.ok_or_else(|| {
                Error::invalid("ground", "stochastic grounding requires an rng stream")
            })?;
            let lc = tape.log_floor(scores.p_causal, T::from_f64(LOG_FLOOR))?;
            let le = tape.log_floor(scores.p_env, T::from_f64(LOG_FLOOR))?;
            let logits = tape.stack_cols(lc, le)?;
            let gmode = if mode == GroundMode::Soft {
                GumbelMode::Soft
            } else {
                GumbelMode::Hard
            };
            tape.gumbel_softmax_rows(logits, tau, gmode, rng)?
        }
        GroundMode::HardDeterministic => {
            let pc = tape.value(scores.p_causal).data().to_vec();
            let pe = tape.value(scores.p_env).data().to_vec();
            let mask = deterministic_assignment(&pc, &pe);
            let k = mask.len();
            let mut onehot = vec![T::zero(); k * 2];
            for (i, &causal) in mask.iter().enumerate() {
                onehot[i * 2 + usize::from(!causal)] = T::one();
            }
            tape.constant(Tensor::matrix(k, 2, onehot)?)
        }
    };
    let keep_causal = tape.column(indicator, 0)?;
    let keep_env = tape.column(indicator, 1)?;
    let causal = tape.scale_rows(video, keep_causal)?;
    let env = tape.scale_rows(video, keep_env)?;
    let causal_mask = {
        let ind = tape.value(indicator);
        (0..ind.rows()).map(|i| ind.get2(i, 0) >= ind.get2(i, 1)).collect()
    };
    Ok(ScenePartition {
        causal,
        env,
        indicator,
        p_causal: scores.p_causal,
        p_env: scores.p_env,
        causal_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::random_tensor;

    struct Fixture {
        params: GroundingParams<f64>,
        video: Tensor<f64>,
        question: Tensor<f64>,
    }

    fn fixture(seed: u64, k: usize, d: usize) -> Fixture {
        let mut rng = RngStream::new(seed, "grounding-test");
        Fixture {
            params: GroundingParams::init(d, &mut rng),
            video: random_tensor(&[k, d], &mut rng),
            question: random_tensor(&[d], &mut rng),
        }
    }

    fn scores_of(fx: &Fixture) -> (Tensor<f64>, Tensor<f64>) {
        let mut tape: Tape<f64> = Tape::new();
        let g = fx.params.bind(&mut tape, false);
        let v = tape.constant(fx.video.clone());
        let q = tape.constant(fx.question.clone());
        let s = attention_scores(&mut tape, &g, v, q).unwrap();
        (
            tape.value(s.p_causal).clone(),
            tape.value(s.p_env).clone(),
        )
    }

    #[test]
    fn attention_distributions_sum_to_one() {
        let fx = fixture(21, 6, 8);
        let (pc, pe) = scores_of(&fx);
        let sc: f64 = pc.data().iter().sum();
        let se: f64 = pe.data().iter().sum();
        assert!((sc - 1.0).abs() < 1e-9, "causal sums to {sc}");
        assert!((se - 1.0).abs() < 1e-9, "env sums to {se}");
    }

    #[test]
    fn causal_head_ignores_environment_parameters() {
        let fx = fixture(22, 5, 6);
        let (pc_before, _) = scores_of(&fx);
        let mut bumped = Fixture {
            params: fx.params.clone(),
            video: fx.video.clone(),
            question: fx.question.clone(),
        };
        bumped.params.fc3_w = bumped.params.fc3_w.map(|v| v + 0.5);
        bumped.params.fc4_b = bumped.params.fc4_b.map(|v| v - 0.25);
        let (pc_after, pe_after) = scores_of(&bumped);
        assert_eq!(pc_before, pc_after, "causal head must not read heads 3/4");
        let (_, pe_before) = scores_of(&fx);
        assert!(pe_before.max_abs_diff(&pe_after) > 1e-9, "env head should move");
    }

    #[test]
    fn identical_clips_share_attention_uniformly() {
        let mut fx = fixture(23, 4, 6);
        let row: Vec<f64> = fx.video.data()[..6].to_vec();
        fx.video = Tensor::matrix(4, 6, row.repeat(4)).unwrap();
        let (pc, pe) = scores_of(&fx);
        for &p in pc.data().iter().chain(pe.data()) {
            assert!((p - 0.25).abs() < 1e-9, "expected uniform 1/4, got {p}");
        }
    }

    #[test]
    fn hard_partition_reconstructs_video_exactly() {
        let fx = fixture(24, 7, 5);
        let mut rng = RngStream::new(40, "route");
        let mut tape: Tape<f64> = Tape::new();
        let g = fx.params.bind(&mut tape, false);
        let v = tape.constant(fx.video.clone());
        let q = tape.constant(fx.question.clone());
        let part = ground(
            &mut tape,
            &g,
            v,
            q,
            GroundMode::HardStochastic,
            0.5,
            Some(&mut rng),
        )
        .unwrap();
        let sum = tape.add(part.causal, part.env).unwrap();
        assert_eq!(tape.value(sum), &fx.video, "c + e must equal v bit for bit");

        // Each clip lands on exactly one side.
        let ind = tape.value(part.indicator);
        for i in 0..7 {
            assert_eq!(ind.get2(i, 0) + ind.get2(i, 1), 1.0);
            assert!(ind.get2(i, 0) == 0.0 || ind.get2(i, 0) == 1.0);
        }
    }

    #[test]
    fn soft_partition_overlaps_but_stays_close() {
        let fx = fixture(25, 4, 5);
        let mut rng = RngStream::new(41, "route");
        let mut tape: Tape<f64> = Tape::new();
        let g = fx.params.bind(&mut tape, false);
        let v = tape.constant(fx.video.clone());
        let q = tape.constant(fx.question.clone());
        let part = ground(&mut tape, &g, v, q, GroundMode::Soft, 1.0, Some(&mut rng)).unwrap();
        let ind = tape.value(part.indicator);
        for i in 0..4 {
            let s = ind.get2(i, 0) + ind.get2(i, 1);
            assert!((s - 1.0).abs() < 1e-12);
            assert!(ind.get2(i, 0) > 0.0 && ind.get2(i, 0) < 1.0, "soft rows are fractional");
        }
        let sum = tape.add(part.causal, part.env).unwrap();
        assert!(tape.value(sum).max_abs_diff(&fx.video) < 1e-9);
    }

    #[test]
    fn deterministic_assignment_follows_larger_probability() {
        let got = deterministic_assignment::<f64>(&[0.99, 0.01, 0.5], &[0.01, 0.99, 0.5]);
        assert_eq!(got, vec![true, false, true], "ties side with causal");
    }

    #[test]
    fn deterministic_grounding_is_reproducible_and_detached() {
        let fx = fixture(26, 5, 6);
        let run = || -> (Vec<bool>, Tensor<f64>) {
            let mut tape: Tape<f64> = Tape::new();
            let g = fx.params.bind(&mut tape, true);
            let v = tape.constant(fx.video.clone());
            let q = tape.constant(fx.question.clone());
            let part =
                ground(&mut tape, &g, v, q, GroundMode::HardDeterministic, 0.5, None).unwrap();
            let loss = tape.sum(part.causal).unwrap();
            let grads = tape.backward(loss).unwrap();
            (part.causal_mask, grads.get(g.fc1_w).unwrap().clone())
        };
        let (mask_a, grad_a) = run();
        let (mask_b, grad_b) = run();
        assert_eq!(mask_a, mask_b, "no randomness in deterministic mode");
        assert_eq!(grad_a, grad_b);
        assert_eq!(
            grad_a,
            Tensor::zeros(&[6, 6]),
            "detached indicator must not train the scoring heads"
        );
    }

    #[test]
    fn stochastic_grounding_requires_rng() {
        let fx = fixture(27, 3, 4);
        let mut tape: Tape<f64> = Tape::new();
        let g = fx.params.bind(&mut tape, false);
        let v = tape.constant(fx.video.clone());
        let q = tape.constant(fx.question.clone());
        let err = ground(&mut tape, &g, v, q, GroundMode::HardStochastic, 0.5, None)
            .expect_err("missing rng must be rejected");
        assert!(err.to_string().contains("rng"), "unexpected error: {err}");
    }

    #[test]
    fn stochastic_routing_frequency_matches_attention_ratio() {
        let fx = fixture(28, 4, 6);
        let (pc, pe) = scores_of(&fx);
        let expected: Vec<f64> = pc
            .data()
            .iter()
            .zip(pe.data())
            .map(|(&c, &e)| c / (c + e))
            .collect();

        let trials = 10_000;
        let mut rng = RngStream::new(539, "route-freq");
        let mut counts = [0u32; 4];
        for _ in 0..trials {
            let mut tape: Tape<f64> = Tape::new();
            let g = fx.params.bind(&mut tape, false);
            let v = tape.constant(fx.video.clone());
            let q = tape.constant(fx.question.clone());
            let part = ground(
                &mut tape,
                &g,
                v,
                q,
                GroundMode::HardStochastic,
                0.5,
                Some(&mut rng),
            )
            .unwrap();
            for (k, &c) in part.causal_mask.iter().enumerate() {
                if c {
                    counts[k] += 1;
                }
            }
        }
        for k in 0..4 {
            let freq = f64::from(counts[k]) / f64::from(trials);
            assert!(
                (freq - expected[k]).abs() < 0.015,
                "clip {k}: frequency {freq} vs attention ratio {}",
                expected[k]
            );
        }
    }

    #[test]
    fn straight_through_routing_trains_all_four_heads() {
        let fx = fixture(29, 5, 6);
        let mut rng = RngStream::new(42, "route");
        let mut tape: Tape<f64> = Tape::new();
        let g = fx.params.bind(&mut tape, true);
        let v = tape.constant(fx.video.clone());
        let q = tape.constant(fx.question.clone());
        let part = ground(
            &mut tape,
            &g,
            v,
            q,
            GroundMode::HardStochastic,
            0.5,
            Some(&mut rng),
        )
        .unwrap();
        let loss = tape.sum(part.causal).unwrap();
        let grads = tape.backward(loss).unwrap();
        let zero_w = Tensor::zeros(&[6, 6]);
        let zero_b = Tensor::zeros(&[6]);
        for (name, var, zero) in [
            ("fc1_w", g.fc1_w, &zero_w),
            ("fc2_w", g.fc2_w, &zero_w),
            ("fc3_w", g.fc3_w, &zero_w),
            ("fc4_w", g.fc4_w, &zero_w),
            ("fc1_b", g.fc1_b, &zero_b),
            ("fc2_b", g.fc2_b, &zero_b),
            ("fc3_b", g.fc3_b, &zero_b),
            ("fc4_b", g.fc4_b, &zero_b),
        ] {
            let grad = grads.get(var).unwrap();
            assert!(
                grad.max_abs_diff(zero) > 0.0,
                "{name} received no gradient through the straight-through draw"
            );
        }
    }
}
