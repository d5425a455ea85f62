//! Training losses: InfoNCE over synthesised contrast sets, soft-label
//! cross-entropy for the answering head, and their weighted combination.

use crate::error::{Error, Result};
use crate::numkit::{Scalar, Tape, Tensor, Var};

/// Contrastive alignment loss.
///
/// Scores are bare dot products `s = a · x` (optionally L2-normalised first,
/// making them cosines), tempered by `tau`, and the loss is
/// `-ln( exp(s+/τ) / (exp(s+/τ) + Σ_n exp(s_n/τ)) )` — pull the positive
/// in, push every negative away. Differentiable with respect to the anchor,
/// the positive, and every negative.
pub fn info_nce<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    negatives: &[Var],
    tau: T,
    normalize: bool,
) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::invalid("info_nce", "at least one negative is required"));
    }
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::invalid(
            "info_nce",
            format!("temperature must be positive and finite, got {tau}"),
        ));
    }
    let prep = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
        if normalize {
            tape.l2_normalize(x)
        } else {
            Ok(x)
        }
    };
    let a = prep(tape, anchor)?;
    let inv_tau = T::one() / tau;
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    let p = prep(tape, positive)?;
    let s_pos = tape.dot(a, p)?;
    let s_pos = tape.scale(s_pos, inv_tau)?;
    scores.push(s_pos);
    for &n in negatives {
        let n = prep(tape, n)?;
        let s = tape.dot(a, n)?;
        scores.push(tape.scale(s, inv_tau)?);
    }
    let stacked = tape.stack_scalars(&scores)?;
    let lse = tape.logsumexp(stacked)?;
    tape.sub(lse, s_pos)
}

/// Cross-entropy against a soft target: `-Σ_i target_i · ln softmax(logits)_i`.
///
/// The target must be a probability vector (nonnegative, summing to one);
/// interpolated labels from the equivariant intervention satisfy this by
/// construction.
pub fn soft_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    target: &Tensor<T>,
) -> Result<Var> {
    if !target.is_vector() {
        return Err(Error::shape(
            "soft_cross_entropy",
            format!("target must be a vector, got {:?}", target.shape()),
        ));
    }
    let mut sum = T::zero();
    for &t in target.data() {
        if t < T::zero() {
            return Err(Error::invalid(
                "soft_cross_entropy",
                format!("target entries must be nonnegative, found {t}"),
            ));
        }
        sum = sum + t;
    }
    if (sum.to_f64() - 1.0).abs() > 1e-4 {
        return Err(Error::invalid(
            "soft_cross_entropy",
            format!("target must sum to 1, sums to {sum}"),
        ));
    }
    let t = tape.constant(target.clone());
    let log_probs = tape.log_softmax_vec(logits)?;
    let inner = tape.dot(t, log_probs)?;
    tape.scale(inner, -T::one())
}

/// The two loss terms and their weighted total, all live on the tape so the
/// caller can backpropagate `total` and still report each term.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    /// Answering loss on the intervened sample.
    pub erm: Var,
    /// Contrastive loss over the synthesised neighbourhood.
    pub cl: Var,
    /// `erm + beta * cl`.
    pub total: Var,
    /// The balance weight that produced `total`.
    pub beta: f64,
}

/// Combines the answering and contrastive terms: `total = erm + beta * cl`.
pub fn eigv_loss<T: Scalar>(
    tape: &mut Tape<T>,
    erm: Var,
    cl: Var,
    beta: f64,
) -> Result<LossBreakdown> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(
            "eigv_loss",
            format!("balance weight must be nonnegative and finite, got {beta}"),
        ));
    }
    let weighted = tape.scale(cl, T::from_f64(beta))?;
    let total = tape.add(erm, weighted)?;
    Ok(LossBreakdown {
        erm,
        cl,
        total,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{check_gradient, random_tensor, DEFAULT_STEP, DEFAULT_TOL};
    use crate::numkit::RngStream;

    fn scalar_of(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn equal_scores_hit_the_closed_form() {
        // All-zero representations give identical scores; the loss then
        // counts the candidates: ln(N + 1).
        for n in [1usize, 4, 7] {
            let mut tape: Tape<f64> = Tape::new();
            let z = tape.constant(Tensor::zeros(&[3]));
            let negs = vec![z; n];
            let loss = info_nce(&mut tape, z, z, &negs, 1.0, false).unwrap();
            let want = ((n + 1) as f64).ln();
            let got = scalar_of(&tape, loss);
            assert!((got - want).abs() < 1e-9, "N={n}: got {got}, want {want}");
        }
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        // s+ = 20, five negatives at 0: loss = ln(1 + 5 e^-20).
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(Tensor::vector(vec![4.0]).unwrap());
        let p = tape.constant(Tensor::vector(vec![5.0]).unwrap());
        let z = tape.constant(Tensor::vector(vec![0.0]).unwrap());
        let negs = vec![z; 5];
        let loss = info_nce(&mut tape, a, p, &negs, 1.0, false).unwrap();
        let got = scalar_of(&tape, loss);
        let want = (1.0 + 5.0 * (-20.0f64).exp()).ln();
        assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
        assert!(got < 2e-8 && got > 0.0);
    }

    #[test]
    fn loss_moves_the_right_way_with_each_score() {
        let mut rng = RngStream::new(91, "nce");
        let a = random_tensor(&[4], &mut rng);
        let p = random_tensor(&[4], &mut rng);
        let n1 = random_tensor(&[4], &mut rng);
        let n2 = random_tensor(&[4], &mut rng);

        let eval = |pos: &Tensor<f64>, neg1: &Tensor<f64>| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let av = tape.constant(a.clone());
            let pv = tape.constant(pos.clone());
            let n1v = tape.constant(neg1.clone());
            let n2v = tape.constant(n2.clone());
            let loss = info_nce(&mut tape, av, pv, &[n1v, n2v], 1.0, false).unwrap();
            scalar_of(&tape, loss)
        };

        let base = eval(&p, &n1);
        // Nudging the positive toward the anchor lowers the loss...
        let p_closer = {
            let mut t = p.clone();
            for (pi, ai) in t.data_mut().iter_mut().zip(a.data()) {
                *pi += 0.1 * ai;
            }
            t
        };
        assert!(eval(&p_closer, &n1) < base, "higher s+ must lower the loss");
        // ...and nudging a negative toward the anchor raises it.
        let n_closer = {
            let mut t = n1.clone();
            for (ni, ai) in t.data_mut().iter_mut().zip(a.data()) {
                *ni += 0.1 * ai;
            }
            t
        };
        assert!(eval(&p, &n_closer) > base, "higher s- must raise the loss");
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let mut rng = RngStream::new(92, "nce");
        let inputs = [
            random_tensor(&[3], &mut rng),
            random_tensor(&[3], &mut rng),
            random_tensor(&[3], &mut rng),
            random_tensor(&[3], &mut rng),
        ];
        for normalize in [false, true] {
            let report = check_gradient(&inputs, DEFAULT_STEP, DEFAULT_TOL, |tape, vars| {
                info_nce(tape, vars[0], vars[1], &[vars[2], vars[3]], 0.7, normalize)
            })
            .unwrap();
            assert!(report.max_rel_err < DEFAULT_TOL, "normalize={normalize}: {report:?}");
        }
    }

    #[test]
    fn normalized_scores_ignore_anchor_magnitude() {
        let mut rng = RngStream::new(93, "nce");
        let a = random_tensor(&[4], &mut rng);
        let p = random_tensor(&[4], &mut rng);
        let n = random_tensor(&[4], &mut rng);
        let eval = |anchor: Tensor<f64>, normalize: bool| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let av = tape.constant(anchor);
            let pv = tape.constant(p.clone());
            let nv = tape.constant(n.clone());
            let loss = info_nce(&mut tape, av, pv, &[nv], 1.0, normalize).unwrap();
            scalar_of(&tape, loss)
        };
        let scaled = a.map(|v| v * 3.0);
        assert!(
            (eval(a.clone(), true) - eval(scaled.clone(), true)).abs() < 1e-12,
            "cosine scoring is scale-free"
        );
        assert!(
            (eval(a, false) - eval(scaled, false)).abs() > 1e-6,
            "bare dot products are not"
        );
    }

    #[test]
    fn contrastive_input_validation() {
        let mut tape: Tape<f64> = Tape::new();
        let z = tape.constant(Tensor::zeros(&[2]));
        assert!(info_nce(&mut tape, z, z, &[], 1.0, false).is_err());
        assert!(info_nce(&mut tape, z, z, &[z], 0.0, false).is_err());
        assert!(info_nce(&mut tape, z, z, &[z], -1.0, false).is_err());
    }

    #[test]
    fn uniform_softmax_costs_ln_two() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let target = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let loss = soft_cross_entropy(&mut tape, logits, &target).unwrap();
        assert!((scalar_of(&tape, loss) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_linear_in_the_target() {
        let mut rng = RngStream::new(94, "xe");
        let logits_t = random_tensor(&[5], &mut rng);
        let ya = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let yb = Tensor::vector(vec![0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let lambda = 0.3;
        let mixed_data: Vec<f64> = ya
            .data()
            .iter()
            .zip(yb.data())
            .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let mixed = Tensor::vector(mixed_data).unwrap();

        let eval = |target: &Tensor<f64>| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let l = tape.constant(logits_t.clone());
            let loss = soft_cross_entropy(&mut tape, l, target).unwrap();
            scalar_of(&tape, loss)
        };
        let want = lambda * eval(&ya) + (1.0 - lambda) * eval(&yb);
        assert!((eval(&mixed) - want).abs() < 1e-9);
    }

    #[test]
    fn confident_correct_logits_cost_almost_nothing() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![20.0, 0.0]).unwrap());
        let target = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let loss = soft_cross_entropy(&mut tape, logits, &target).unwrap();
        let got = scalar_of(&tape, loss);
        assert!(got < 1e-8 && got >= 0.0, "got {got}");
    }

    #[test]
    fn cross_entropy_dominates_target_entropy() {
        // Gibbs' inequality: XE(p_model, y) >= H(y), equality only when the
        // softmax matches the target.
        let mut rng = RngStream::new(95, "xe");
        for _ in 0..10 {
            let logits_t = random_tensor(&[6], &mut rng);
            let raw = random_tensor(&[6], &mut rng);
            let total: f64 = raw.data().iter().map(|v| v.exp()).sum();
            let target = raw.map(|v| v.exp() / total);
            let entropy: f64 = -target.data().iter().map(|&p| p * p.ln()).sum::<f64>();

            let mut tape: Tape<f64> = Tape::new();
            let l = tape.constant(logits_t);
            let loss = soft_cross_entropy(&mut tape, l, &target).unwrap();
            assert!(scalar_of(&tape, loss) >= entropy - 1e-9);
        }
    }

    #[test]
    fn cross_entropy_rejects_non_distributions() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[3]));
        let negative = Tensor::vector(vec![1.5, -0.5, 0.0]).unwrap();
        assert!(soft_cross_entropy(&mut tape, logits, &negative).is_err());
        let short = Tensor::vector(vec![0.3, 0.3, 0.3]).unwrap();
        assert!(soft_cross_entropy(&mut tape, logits, &short).is_err());
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        let mut rng = RngStream::new(96, "xe");
        let logits_t = random_tensor(&[4], &mut rng);
        let target = Tensor::vector(vec![0.5, 0.25, 0.25, 0.0]).unwrap();
        let report = check_gradient(&[logits_t], DEFAULT_STEP, DEFAULT_TOL, |tape, vars| {
            soft_cross_entropy(tape, vars[0], &target)
        })
        .unwrap();
        assert!(report.max_rel_err < DEFAULT_TOL, "{report:?}");
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let mut tape: Tape<f64> = Tape::new();
        let erm = tape.leaf(Tensor::scalar(1.0), true);
        let cl = tape.leaf(Tensor::scalar(2.0), true);
        let breakdown = eigv_loss(&mut tape, erm, cl, 0.75).unwrap();
        assert!((scalar_of(&tape, breakdown.total) - 2.5).abs() < 1e-15);
        assert_eq!(breakdown.beta, 0.75);

        // d total / d cl = beta, d total / d erm = 1.
        let grads = tape.backward(breakdown.total).unwrap();
        assert_eq!(grads.get(cl).unwrap().item(), 0.75);
        assert_eq!(grads.get(erm).unwrap().item(), 1.0);
    }

    #[test]
    fn zero_weight_reduces_to_the_answering_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let erm = tape.constant(Tensor::scalar(0.625));
        let cl = tape.constant(Tensor::scalar(123.0));
        let breakdown = eigv_loss(&mut tape, erm, cl, 0.0).unwrap();
        assert_eq!(scalar_of(&tape, breakdown.total), 0.625);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let mut tape: Tape<f64> = Tape::new();
        let s = tape.constant(Tensor::scalar(1.0));
        assert!(eigv_loss(&mut tape, s, s, -0.1).is_err());
        assert!(eigv_loss(&mut tape, s, s, f64::NAN).is_err());
    }
}
