//! Deterministic, labeled random streams.
//!
//! Every stochastic decision in this system — corpus noise, parameter
//! initialization, Gumbel draws, mixing coefficients, bank sampling — comes
//! from an [`RngStream`]. A stream is a pure function of `(seed, label,
//! counter)`: the same triple yields the same draw on every platform, which
//! is what makes whole training runs bit-reproducible and lets verification
//! code replay an exact noise sequence. Streams are cheap values; derive a
//! child stream per purpose (`"epoch/3/shuffle"`, `"batch/7/gumbel"`) instead
//! of threading one global generator through call sites.
//!
//! The generator is a counter-mode SplitMix64: each output applies the
//! SplitMix64 finalizer to a mix of seed, label hash, and counter. That is
//! statistically solid for simulation work and, unlike sequential
//! generators, makes the counter an explicit, inspectable part of the state.
//!
//! Distributions beyond the uniform are implemented locally (Box–Muller
//! normal, inverse-CDF Gumbel, Marsaglia–Tsang gamma for the symmetric
//! Beta) so that draw sequences do not depend on an external crate's
//! internals.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; stable across platforms.
#[inline]
fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A labeled, counter-addressed random stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    label_hash: u64,
    counter: u64,
}

impl RngStream {
    /// Stream identified by a 64-bit seed and a purpose label.
    pub fn new(seed: u64, label: &str) -> Self {
        RngStream {
            seed,
            label_hash: hash_label(label),
            counter: 0,
        }
    }

    /// Child stream whose draws are independent of the parent's.
    ///
    /// The child folds the parent's identity into its seed, so
    /// `new(s, "a").derive("b")` and `new(s, "b")` are distinct streams.
    pub fn derive(&self, label: &str) -> Self {
        RngStream {
            seed: splitmix64(self.seed ^ self.label_hash.rotate_left(17)),
            label_hash: hash_label(label),
            counter: 0,
        }
    }

    /// Current draw counter. Each `next_u64` consumes exactly one count;
    /// higher-level samplers may consume several.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Rewinds or fast-forwards the stream to an absolute counter value.
    pub fn set_counter(&mut self, counter: u64) {
        self.counter = counter;
    }

    /// Next raw 64-bit draw; advances the counter by one.
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        splitmix64(splitmix64(self.seed ^ self.label_hash) ^ c.wrapping_mul(GOLDEN_GAMMA))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval `(0, 1)`; safe under `ln`.
    fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.open01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Standard Gumbel draw `-ln(-ln U)`, the noise that turns a softmax
    /// into a sampler over its own probabilities.
    pub fn gumbel(&mut self) -> f64 {
        -(-self.open01().ln()).ln()
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang squeeze, with the standard
    /// `U^(1/a)` boost for shapes below one.
    fn gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        if shape < 1.0 {
            return self.gamma(shape + 1.0) * self.open01().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.gaussian();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.open01();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// Draw from Beta(alpha, alpha) as a ratio of two Gamma(alpha) draws.
    ///
    /// Symmetric by construction: the distribution of the draw equals the
    /// distribution of one minus the draw. Errors if `alpha <= 0` or is not
    /// finite.
    pub fn beta_symmetric(&mut self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(
                "beta_symmetric",
                format!("alpha must be a positive finite number, got {alpha}"),
            ));
        }
        let g1 = self.gamma(alpha);
        let g2 = self.gamma(alpha);
        Ok(g1 / (g1 + g2))
    }

    /// Uniform index in `[0, n)`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() over an empty range");
        // Multiply-shift bounding: bias is n / 2^64, irrelevant here.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from `[0, n)`, in draw order.
    ///
    /// Errors if `k > n` — sampling without replacement cannot oblige.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::invalid(
                "sample_distinct",
                format!("cannot draw {k} distinct values from a pool of {n}"),
            ));
        }
        let mut pool: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
            out.push(pool[i]);
        }
        Ok(out)
    }
}
