//! Invariant grounding for video question answering on clip features.
//!
//! This crate implements a small, fully deterministic training system for
//! causal-scene grounding in video QA. A video arrives as a sequence of `K`
//! precomputed clip-feature vectors and a question as a token-embedding
//! sequence. The model learns, without mask supervision, to split the clips
//! into a causal scene (the part that answers the question) and an
//! environment (the part that merely co-occurs), by making the answer
//! *equivariant* to interventions on the causal scene and *invariant* to
//! interventions on the environment.
//!
//! The crate is organized as a pipeline of small modules:
//!
//! - [`numkit`] — tensors, tape-based reverse-mode autodiff, deterministic
//!   labeled RNG streams, Gumbel-Softmax, Adam.
//! - [`datagen`] — a synthetic corpus generator with planted causal clips
//!   and a tunable spurious environment–answer correlation, plus binary
//!   corpus I/O and batching.
//! - [`encoders`] — linear clip encoder and gated recurrent question
//!   encoder into a shared width.
//! - [`grounding`] — question-conditioned scene split via two attention
//!   heads and a straight-through Gumbel selector.
//! - [`backbone`] — attention-pooling answer head shared by every forward
//!   path.
//! - [`intervention`] — scene mixing (causal with labels, environment
//!   without), the clip memory bank, and contrastive view construction.
//! - [`objective`] — InfoNCE and soft cross-entropy combined into the
//!   training loss.
//! - [`model`] — the parameter bundle and the deterministic inference path.
//! - [`trainkit`] — training loop, plateau schedule, evaluation metrics,
//!   robustness diagnostics, checkpoints.
//!
//! Determinism is a design requirement, not an accident: every random draw
//! comes from a seeded, labeled, counter-addressed stream, so identical
//! configurations reproduce loss histories and checkpoints bit for bit.

pub mod datagen;
pub mod backbone;
pub mod encoders;
pub mod error;
pub mod grounding;
pub mod intervention;
pub mod numkit;
pub mod objective;
pub mod trainkit;

pub use error::{Error, Result};
