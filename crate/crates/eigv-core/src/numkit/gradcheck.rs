//! Central-finite-difference verification of reverse-mode gradients.
//!
//! Every differentiable operation in this crate is checked against the
//! numeric derivative `(f(x+h) − f(x−h)) / 2h` in `f64`, where truncation
//! and round-off both sit far below the 1e-4 relative tolerance the checks
//! assert. The harness rebuilds the graph from scratch for every probe, so
//! it also works for stochastic graphs as long as the builder replays the
//! same noise (pass it a cloned `RngStream` and it will).

use crate::error::{Error, Result};
use crate::numkit::tape::{Tape, Var};
use crate::numkit::tensor::Tensor;

/// Outcome of a successful gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative error observed over all probed elements.
    pub max_rel_err: f64,
    /// Number of scalar elements probed.
    pub checked: usize,
}

/// Default central-difference step. With `f64` arithmetic this balances
/// truncation (`O(h²)`) against round-off (`O(ε/h)`) comfortably.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative tolerance the verification suite holds every operation to.
pub const DEFAULT_TOL: f64 = 1e-4;

/// Checks the gradient of `build` with respect to every element of every
/// input.
///
/// `build` receives a fresh tape plus one leaf `Var` per input tensor (in
/// order, all marked as parameters) and must return a scalar loss node. It
/// is re-invoked `2·n + 1` times for `n` total input elements; it must be a
/// deterministic function of the leaf values.
///
/// An element passes if `|analytic − numeric|` is below `1e-8` absolutely
/// or below `tol` relative to the larger magnitude. Returns the worst
/// relative error on success and a descriptive error on the first failure.
pub fn check_gradient<F>(
    inputs: &[Tensor<f64>],
    h: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(inputs)?;
    let grads = tape.backward(loss)?;

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .expect("leaf was registered with requires_grad");
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= h;

            let (tp, _, lp) = eval(&plus)?;
            let (tm, _, lm) = eval(&minus)?;
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
            let a = analytic.data()[e];

            let diff = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs());
            let rel = if denom > 0.0 { diff / denom } else { 0.0 };
            if diff > 1e-8 && rel > tol {
                return Err(Error::invalid(
                    "gradcheck",
                    format!(
                        "input {i} element {e}: analytic {a:.9e} vs numeric {numeric:.9e} \
                         (rel err {rel:.3e} > {tol:.1e})"
                    ),
                ));
            }
            if diff > 1e-8 {
                max_rel = max_rel.max(rel);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        checked,
    })
}

/// Gaussian-filled probe tensor with entries scaled to ±O(1), the regime
/// where the default step and tolerance are calibrated.
pub fn random_tensor(shape: &[usize], rng: &mut crate::numkit::rng::RngStream) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gaussian() * 0.8).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
