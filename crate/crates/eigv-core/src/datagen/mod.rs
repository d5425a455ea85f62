//! Synthetic video-QA corpus with a planted causal structure.
//!
//! Each sample is a video of `k` clip-feature vectors plus a question token
//! sequence. A hidden *question concept* and *causal concept* jointly
//! determine the answer through a fixed lookup table; `n_causal_clips` clips
//! carry the causal concept's embedding (plus noise) at random positions,
//! and every remaining clip carries an *environment* concept. The
//! environment is where the trap lives: with probability `rho`, an
//! environment clip draws the concept statistically paired with the answer,
//! so at `rho_train = 0.9` a lazy model can read the answer off the
//! environment — and at `rho_test = 0.1` that shortcut collapses. Conditioned
//! on the causal and question concepts, the answer is independent of the
//! environment by construction.
//!
//! The ground-truth causal positions are recorded per sample as
//! `truth_mask`. The mask exists for *evaluation only*: the training path
//! consumes samples through [`TrainView`], which does not carry it.

pub mod batch;
pub mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{RngStream, Tensor};

/// Generator configuration. Serialized into corpus manifests as provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Training-split size; the val/test splits each hold a fifth of this.
    pub n_videos: usize,
    /// Clips per video.
    pub k: usize,
    /// Raw clip-feature width.
    pub d_in: usize,
    /// Question token embedding width.
    pub d_q: usize,
    /// Question length in tokens.
    pub q_len: usize,
    /// Number of causal concepts (also the number of question concepts).
    pub n_concepts_causal: usize,
    /// Number of environment concepts.
    pub n_concepts_env: usize,
    /// Answer vocabulary size.
    pub n_answers: usize,
    /// Causal clips planted per video.
    pub n_causal_clips: usize,
    /// Environment–answer correlation on train/val/test-iid splits.
    pub rho_train: f64,
    /// Environment–answer correlation on the test-ood split.
    pub rho_test: f64,
    /// Standard deviation of the Gaussian noise added to every embedding.
    pub noise_sigma: f64,
    /// Strength of the question-content component carried by answer-relevant
    /// clips, as a fraction of a concept embedding's expected norm. Clip
    /// features in the wild come from pretrained multimodal encoders, which
    /// leave a shared representation direction between a question and the
    /// frames it asks about; this dial reproduces that alignment (0 removes
    /// it, leaving question and clip content statistically unrelated).
    pub alignment: f64,
    /// Corpus seed; all randomness derives from it.
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_videos: 2000,
            k: 16,
            d_in: 32,
            d_q: 16,
            q_len: 4,
            n_concepts_causal: 8,
            n_concepts_env: 8,
            n_answers: 8,
            n_causal_clips: 4,
            rho_train: 0.9,
            rho_test: 0.1,
            noise_sigma: 0.1,
            alignment: 0.4,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: String| {
            Err(Error::invalid(
                "gen_config",
                format!("{field}: {detail}"),
            ))
        };
        if self.n_videos == 0 {
            return bad("n_videos", "must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if self.n_causal_clips == 0 || self.n_causal_clips >= self.k {
            return bad(
                "n_causal_clips",
                format!(
                    "must leave at least one environment clip (got {} of k={})",
                    self.n_causal_clips, self.k
                ),
            );
        }
        if self.d_in == 0 || self.d_q == 0 || self.q_len == 0 {
            return bad("d_in/d_q/q_len", "dimensions must be positive".into());
        }
        if self.n_concepts_causal == 0 || self.n_concepts_env == 0 {
            return bad("n_concepts", "must be positive".into());
        }
        if self.n_answers < 2 {
            return bad("n_answers", "need at least two answers".into());
        }
        for (name, rho) in [("rho_train", self.rho_train), ("rho_test", self.rho_test)] {
            if !(0.0..=1.0).contains(&rho) {
                return bad(name, format!("must lie in [0, 1], got {rho}"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.alignment >= 0.0) || !self.alignment.is_finite() {
            return bad("alignment", format!("must be >= 0, got {}", self.alignment));
        }
        Ok(())
    }

    /// Size of the val / test-iid / test-ood splits.
    pub fn eval_split_size(&self) -> usize {
        (self.n_videos / 5).max(1)
    }
}

/// The four disjoint corpus splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    TestIid,
    TestOod,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [
        SplitTag::Train,
        SplitTag::Val,
        SplitTag::TestIid,
        SplitTag::TestOod,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::TestIid => "test_iid",
            SplitTag::TestOod => "test_ood",
        }
    }
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One generated sample.
///
/// `truth_mask[i]` marks clip `i` as causally linked to the answer. It is
/// ground truth for grounding metrics and robustness probes; training never
/// reads it (see [`TrainView`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[k, d_in]` raw clip features.
    pub video: Tensor<f32>,
    /// `[q_len, d_q]` question token embeddings.
    pub question: Tensor<f32>,
    /// Answer index in `[0, n_answers)`.
    pub answer: usize,
    /// Evaluation-only causal-position mask, one flag per clip.
    pub truth_mask: Vec<bool>,
}

impl Sample {
    /// The sample as the training path is allowed to see it.
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            video: &self.video,
            question: &self.question,
            answer: self.answer,
        }
    }
}

/// Borrowed view of a sample without the ground-truth mask. Training APIs
/// accept only this, so mask leakage is a compile error rather than a
/// discipline.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub video: &'a Tensor<f32>,
    pub question: &'a Tensor<f32>,
    pub answer: usize,
}

/// A generated corpus: the four splits plus the exact configuration that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: GenConfig,
    pub splits: BTreeMap<SplitTag, Vec<Sample>>,
}

impl Corpus {
    /// Samples of one split; empty if the split is absent.
    pub fn split(&self, tag: SplitTag) -> &[Sample] {
        self.splits.get(&tag).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// The frozen random world behind a corpus: concept embeddings and the
/// answer lookup table. Regenerable from the config alone, which lets
/// evaluation oracles decode what the generator planted without smuggling
/// metadata through [`Sample`].
#[derive(Debug, Clone)]
pub struct ConceptTables {
    /// `[n_concepts_causal, d_in]` causal concept embeddings.
    pub causal: Tensor<f32>,
    /// `[n_concepts_env, d_in]` environment concept embeddings.
    pub env: Tensor<f32>,
    /// Per question concept, a `[q_len, d_q]` token sequence.
    pub question: Vec<Tensor<f32>>,
    /// `[n_concepts_causal, d_in]` question-content directions in clip
    /// space: a fixed random projection of each question concept's mean
    /// token, scaled to `alignment` times a concept embedding's expected
    /// norm. Added to answer-relevant clips.
    pub aligned_question: Tensor<f32>,
    /// `answer_table[question_concept][causal_concept]` → answer.
    pub answer_table: Vec<Vec<usize>>,
}

/// Amplitude of environment concept embeddings relative to causal ones.
/// Question-relevant foreground is the high-salience content in clip
/// features, while background filler carries less energy; keeping that
/// ratio here means the statistically spurious background stays fully
/// learnable (its concepts remain separable far above the noise floor)
/// without being the loudest thing in the video.
const ENV_AMPLITUDE: f64 = 0.5;

impl ConceptTables {
    /// Rebuilds the tables for a config. Pure function of
    /// `(config.seed, structural fields)`.
    pub fn generate(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let s = RngStream::new(cfg.seed, "tables");
        let scaled_matrix = |s: &mut RngStream, rows: usize, cols: usize, amp: f64| {
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| (s.gaussian() * amp) as f32)
                .collect();
            Tensor::from_parts(vec![rows, cols], data)
        };
        let causal = scaled_matrix(&mut s.derive("causal"), cfg.n_concepts_causal, cfg.d_in, 1.0);
        let env = scaled_matrix(
            &mut s.derive("env"),
            cfg.n_concepts_env,
            cfg.d_in,
            ENV_AMPLITUDE,
        );
        let mut qs = s.derive("question");
        let question: Vec<Tensor<f32>> = (0..cfg.n_concepts_causal)
            .map(|_| scaled_matrix(&mut qs, cfg.q_len, cfg.d_q, 1.0))
            .collect();

        // Shared question–clip directions: project each concept's mean token
        // through one fixed random map and scale to alignment × √d_in, the
        // expected norm of a unit-amplitude concept embedding.
        let mut ps = s.derive("align-proj");
        let proj: Vec<f64> = (0..cfg.d_in * cfg.d_q).map(|_| ps.gaussian()).collect();
        let target = cfg.alignment * (cfg.d_in as f64).sqrt();
        let mut aligned = Vec::with_capacity(cfg.n_concepts_causal * cfg.d_in);
        for q in &question {
            let mean_token: Vec<f64> = (0..cfg.d_q)
                .map(|j| {
                    (0..cfg.q_len).map(|t| f64::from(q.data()[t * cfg.d_q + j])).sum::<f64>()
                        / cfg.q_len as f64
                })
                .collect();
            let raw: Vec<f64> = (0..cfg.d_in)
                .map(|i| {
                    (0..cfg.d_q)
                        .map(|j| proj[i * cfg.d_q + j] * mean_token[j])
                        .sum()
                })
                .collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            aligned.extend(raw.iter().map(|x| (x / norm * target) as f32));
        }
        let aligned_question = Tensor::from_parts(vec![cfg.n_concepts_causal, cfg.d_in], aligned);

        // Answer semantics: each answer is a random linear scorer over the
        // question's mean token and the causal concept embedding, and the
        // lookup table records the argmax per (question, cause) pair. Both
        // factors genuinely steer the answer, yet the map stays in the
        // linearly-decodable class that concept embeddings support — an
        // arbitrary (question, cause) → answer table would instead demand
        // product features no shallow readout can form quickly, which is
        // not how answers relate to grounded content in natural questions.
        //
        // The question term is scaled so it carries more decision weight
        // than the scene term (a mean token has variance 1/q_len per
        // coordinate, so the raw terms are far from comparable). A scene
        // that resolved the answer on its own would be indistinguishable
        // from a shortcut; the question must be what disambiguates.
        let q_weight =
            (cfg.d_in as f64 * cfg.q_len as f64 / cfg.d_q as f64).sqrt() * QUESTION_DOMINANCE;
        let mut ts = s.derive("answers");
        let score_q: Vec<f64> = (0..cfg.n_answers * cfg.d_q)
            .map(|_| ts.gaussian() * q_weight)
            .collect();
        let score_c: Vec<f64> = (0..cfg.n_answers * cfg.d_in).map(|_| ts.gaussian()).collect();
        let mean_tokens: Vec<Vec<f64>> = question
            .iter()
            .map(|q| {
                (0..cfg.d_q)
                    .map(|j| {
                        (0..cfg.q_len)
                            .map(|t| f64::from(q.data()[t * cfg.d_q + j]))
                            .sum::<f64>()
                            / cfg.q_len as f64
                    })
                    .collect()
            })
            .collect();
        let answer_table: Vec<Vec<usize>> = (0..cfg.n_concepts_causal)
            .map(|qi| {
                (0..cfg.n_concepts_causal)
                    .map(|ci| {
                        let mut best = 0;
                        let mut best_s = f64::NEG_INFINITY;
                        for a in 0..cfg.n_answers {
                            let sq: f64 = (0..cfg.d_q)
                                .map(|j| score_q[a * cfg.d_q + j] * mean_tokens[qi][j])
                                .sum();
                            let sc: f64 = (0..cfg.d_in)
                                .map(|j| {
                                    score_c[a * cfg.d_in + j]
                                        * f64::from(causal.data()[ci * cfg.d_in + j])
                                })
                                .sum();
                            let sum = sq + sc;
                            if sum > best_s {
                                best_s = sum;
                                best = a;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        Ok(ConceptTables {
            causal,
            env,
            question,
            aligned_question,
            answer_table,
        })
    }

    /// Environment concept statistically paired with an answer.
    pub fn paired_env(&self, answer: usize) -> usize {
        answer % self.env.rows()
    }

    /// Index of the environment concept nearest to a raw clip feature.
    pub fn nearest_env(&self, clip: &[f32]) -> usize {
        nearest_row(&self.env, clip)
    }

    /// Index of the causal concept nearest to a raw clip feature.
    pub fn nearest_causal(&self, clip: &[f32]) -> usize {
        nearest_row(&self.causal, clip)
    }

    /// Index of the question concept whose token sequence is nearest.
    pub fn nearest_question(&self, tokens: &Tensor<f32>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, q) in self.question.iter().enumerate() {
            let d: f64 = q
                .data()
                .iter()
                .zip(tokens.data())
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

fn nearest_row(table: &Tensor<f32>, x: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..table.rows() {
        let d: f64 = table
            .row(i)
            .iter()
            .zip(x)
            .map(|(&a, &b)| {
                let diff = a as f64 - b as f64;
                diff * diff
            })
            .sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Generates the four splits. Per-sample randomness comes from streams
/// derived as `"<split>/<index>"`, so any sample is reproducible in
/// isolation and splits are disjoint by construction.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Corpus> {
    cfg.validate()?;
    let tables = ConceptTables::generate(cfg)?;
    let root = RngStream::new(cfg.seed, "corpus");
    let mut splits = BTreeMap::new();
    for tag in SplitTag::ALL {
        let (n, rho) = match tag {
            SplitTag::Train => (cfg.n_videos, cfg.rho_train),
            SplitTag::Val | SplitTag::TestIid => (cfg.eval_split_size(), cfg.rho_train),
            SplitTag::TestOod => (cfg.eval_split_size(), cfg.rho_test),
        };
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = root.derive(&format!("{tag}/{i}"));
            samples.push(generate_sample(cfg, &tables, rho, &mut s));
        }
        splits.insert(tag, samples);
    }
    Ok(Corpus {
        config: cfg.clone(),
        splits,
    })
}

fn generate_sample(
    cfg: &GenConfig,
    tables: &ConceptTables,
    rho: f64,
    s: &mut RngStream,
) -> Sample {
    let q_concept = s.index(cfg.n_concepts_causal);
    let c_concept = s.index(cfg.n_concepts_causal);
    let answer = tables.answer_table[q_concept][c_concept];
    let paired = tables.paired_env(answer);

    // One environment per video: the video's context is a single concept,
    // answer-paired with probability rho, rendered (with noise) by every
    // non-causal clip. Drawing per clip instead would make the *majority*
    // environment concept an almost deterministic answer key even at
    // moderate rho, which is a far stronger confound than the dial implies.
    let e_concept = if s.uniform01() < rho {
        paired
    } else {
        s.index(cfg.n_concepts_env)
    };

    let positions = s
        .sample_distinct(cfg.k, cfg.n_causal_clips)
        .expect("validated n_causal_clips < k");
    let mut truth_mask = vec![false; cfg.k];
    for &p in &positions {
        truth_mask[p] = true;
    }

    let sigma = cfg.noise_sigma;
    let aligned = tables.aligned_question.row(q_concept);
    let mut video = Vec::with_capacity(cfg.k * cfg.d_in);
    for causal in truth_mask.iter().copied() {
        if causal {
            let row = tables.causal.row(c_concept);
            video.extend(
                row.iter()
                    .zip(aligned)
                    .map(|(&v, &a)| v + a + (s.gaussian() * sigma) as f32),
            );
        } else {
            let row = tables.env.row(e_concept);
            video.extend(row.iter().map(|&v| v + (s.gaussian() * sigma) as f32));
        }
    }

    let qtab = &tables.question[q_concept];
    let question: Vec<f32> = qtab
        .data()
        .iter()
        .map(|&v| v + (s.gaussian() * sigma) as f32)
        .collect();

    Sample {
        video: Tensor::from_parts(vec![cfg.k, cfg.d_in], video),
        question: Tensor::from_parts(vec![cfg.q_len, cfg.d_q], question),
        answer,
        truth_mask,
    }
}
