//! Adam optimizer with bias-corrected moment estimates.
//!
//! One [`AdamState`] per parameter tensor; [`adam_step`] is a pure update
//! rule with no hidden state, so two runs fed identical gradients produce
//! bit-identical parameters — the property the training-determinism tests
//! lean on.

use crate::error::{Error, Result};
use crate::numkit::scalar::Scalar;
use crate::numkit::tensor::Tensor;

/// First and second moment estimates plus the step count for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state (zero moments) for a parameter of the given shape.
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// Hyperparameters shared by every [`adam_step`] call of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamHyper<T> {
    /// The conventional (0.9, 0.999, 1e-8) moments with a caller-chosen
    /// learning rate.
    pub fn with_lr(lr: T) -> Self {
        AdamHyper {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr > T::zero()
            && self.beta1 >= T::zero()
            && self.beta1 < T::one()
            && self.beta2 >= T::zero()
            && self.beta2 < T::one()
            && self.eps > T::zero();
        if !ok {
            return Err(Error::invalid(
                "adam_step",
                format!(
                    "lr {} beta1 {} beta2 {} eps {} outside (lr>0, 0<=beta<1, eps>0)",
                    self.lr, self.beta1, self.beta2, self.eps
                ),
            ));
        }
        Ok(())
    }
}

/// One Adam update, in place:
///
/// ```text
/// m ← β₁ m + (1−β₁) g        m̂ = m / (1 − β₁ᵗ)
/// v ← β₂ v + (1−β₂) g²       v̂ = v / (1 − β₂ᵗ)
/// θ ← θ − lr · m̂ / (√v̂ + ε)
/// ```
///
/// The timestep advances even when the gradient is zero; with fresh state a
/// zero gradient leaves the parameter untouched.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper<T>,
) -> Result<()> {
    hyper.validate()?;
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                state.m.shape()
            ),
        ));
    }
    grad.ensure_finite("adam_step gradient")?;

    state.step += 1;
    let t = state.step;
    let one = T::one();
    let bc1 = one - hyper.beta1.powi(t as i32);
    let bc2 = one - hyper.beta2.powi(t as i32);

    let m = state.m.data_mut();
    let v = state.v.data_mut();
    let p = param.data_mut();
    for ((pv, mv), (vv, &gv)) in p
        .iter_mut()
        .zip(m.iter_mut())
        .zip(v.iter_mut().zip(grad.data()))
    {
        *mv = hyper.beta1 * *mv + (one - hyper.beta1) * gv;
        *vv = hyper.beta2 * *vv + (one - hyper.beta2) * gv * gv;
        let m_hat = *mv / bc1;
        let v_hat = *vv / bc2;
        *pv = *pv - hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> AdamHyper<f64> {
        AdamHyper::with_lr(0.01)
    }

    #[test]
    fn zero_gradient_keeps_parameter_but_advances_step() {
        let mut p = Tensor::vector(vec![1.5, -0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[2]);
        let mut s = AdamState::new(&[2]);
        adam_step(&mut p, &g, &mut s, &hyper()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With fresh state, bias correction makes m̂ = g and v̂ = g², so the
        // first update is lr·g/(|g|+ε): param 1.0 → ≈ 0.99.
        let mut p = Tensor::vector(vec![1.0]).unwrap();
        let g = Tensor::vector(vec![0.5]).unwrap();
        let mut s = AdamState::new(&[1]);
        adam_step(&mut p, &g, &mut s, &hyper()).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn identical_sequences_are_bitwise_identical() {
        let grads: Vec<Tensor<f32>> = (0..10)
            .map(|i| Tensor::vector(vec![(i as f32 * 0.37).sin(), -0.2 * i as f32]).unwrap())
            .collect();
        let run = || {
            let mut p = Tensor::vector(vec![0.3f32, -1.2]).unwrap();
            let mut s = AdamState::new(&[2]);
            let h = AdamHyper::with_lr(0.005f32);
            for g in &grads {
                adam_step(&mut p, g, &mut s, &h).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_hyperparameters_and_shapes() {
        let mut p = Tensor::vector(vec![1.0]).unwrap();
        let g = Tensor::vector(vec![0.5]).unwrap();
        let mut s = AdamState::new(&[1]);
        let mut h = hyper();
        h.lr = 0.0;
        assert!(adam_step(&mut p, &g, &mut s, &h).is_err());

        let g_bad = Tensor::vector(vec![0.5, 0.5]).unwrap();
        assert!(adam_step(&mut p, &g_bad, &mut s, &hyper()).is_err());
    }
}
