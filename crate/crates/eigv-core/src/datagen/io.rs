//! On-disk corpus format: `manifest.json` plus one `.f32` blob per tensor.
//!
//! A blob is 8 magic bytes (`EIGVF32\0`) followed by raw little-endian
//! `f32` values in row-major order; shapes live in the manifest, not the
//! blob. Round-tripping a corpus is bit-exact — the reader validates magic,
//! exact byte counts, declared shapes, and mask arity, and names the
//! offending file in every error, because a silently half-read corpus is
//! the worst possible training input.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Corpus, GenConfig, Sample, SplitTag};
use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Leading bytes of every tensor blob.
pub const BLOB_MAGIC: &[u8; 8] = b"EIGVF32\0";

/// Manifest format version this build reads and writes.
pub const FORMAT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: GenConfig,
    splits: std::collections::BTreeMap<SplitTag, Vec<Record>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    video: String,
    shape: [usize; 2],
    question: String,
    qshape: [usize; 2],
    answer: usize,
    truth_mask: Vec<bool>,
}

/// Writes `corpus` into `dir` (created if missing): `manifest.json` plus
/// per-sample `.f32` blobs named `<split>_<index>.<field>.f32`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut splits = std::collections::BTreeMap::new();
    for (&tag, samples) in &corpus.splits {
        let mut records = Vec::with_capacity(samples.len());
        for (i, sample) in samples.iter().enumerate() {
            let video = format!("{tag}_{i:05}.video.f32");
            let question = format!("{tag}_{i:05}.question.f32");
            write_blob(&dir.join(&video), &sample.video)?;
            write_blob(&dir.join(&question), &sample.question)?;
            records.push(Record {
                video,
                shape: [sample.video.rows(), sample.video.cols()],
                question,
                qshape: [sample.question.rows(), sample.question.cols()],
                answer: sample.answer,
                truth_mask: sample.truth_mask.clone(),
            });
        }
        splits.insert(tag, records);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.to_string(),
        config: corpus.config.clone(),
        splits,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reads a corpus written by [`write_corpus`]. Bit-exact inverse.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path).map_err(|e| Error::Format {
        file: manifest_path.display().to_string(),
        detail: format!("cannot read manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&json).map_err(|e| Error::Format {
        file: manifest_path.display().to_string(),
        detail: format!("malformed manifest: {e}"),
    })?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.version,
            supported: FORMAT_VERSION.to_string(),
        });
    }
    let cfg = &manifest.config;
    cfg.validate()?;

    let mut splits = std::collections::BTreeMap::new();
    for (tag, records) in &manifest.splits {
        let mut samples = Vec::with_capacity(records.len());
        for rec in records {
            if rec.shape != [cfg.k, cfg.d_in] {
                return Err(Error::Format {
                    file: rec.video.clone(),
                    detail: format!(
                        "declared shape {:?} disagrees with config [{}, {}]",
                        rec.shape, cfg.k, cfg.d_in
                    ),
                });
            }
            if rec.qshape != [cfg.q_len, cfg.d_q] {
                return Err(Error::Format {
                    file: rec.question.clone(),
                    detail: format!(
                        "declared shape {:?} disagrees with config [{}, {}]",
                        rec.qshape, cfg.q_len, cfg.d_q
                    ),
                });
            }
            if rec.truth_mask.len() != cfg.k
                || rec.truth_mask.iter().filter(|&&b| b).count() != cfg.n_causal_clips
            {
                return Err(Error::Format {
                    file: rec.video.clone(),
                    detail: format!(
                        "truth_mask must have {} entries with {} set",
                        cfg.k, cfg.n_causal_clips
                    ),
                });
            }
            let video = read_blob(&dir.join(&rec.video), rec.shape)?;
            let question = read_blob(&dir.join(&rec.question), rec.qshape)?;
            samples.push(Sample {
                video,
                question,
                answer: rec.answer,
                truth_mask: rec.truth_mask.clone(),
            });
        }
        splits.insert(*tag, samples);
    }
    Ok(Corpus {
        config: manifest.config,
        splits,
    })
}

fn write_blob(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + t.len() * 4);
    bytes.extend_from_slice(BLOB_MAGIC);
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, shape: [usize; 2]) -> Result<Tensor<f32>> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::Format {
        file: name.clone(),
        detail: format!("cannot read blob: {e}"),
    })?;
    if bytes.len() < 8 || &bytes[..8] != BLOB_MAGIC {
        return Err(Error::Format {
            file: name,
            detail: "missing or corrupt blob magic".to_string(),
        });
    }
    let want = shape[0] * shape[1] * 4;
    let got = bytes.len() - 8;
    if got != want {
        return Err(Error::Format {
            file: name,
            detail: format!("expected {want} payload bytes for shape {shape:?}, found {got}"),
        });
    }
    let data: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(vec![shape[0], shape[1]], data).map_err(|e| Error::Format {
        file: path.display().to_string(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, GenConfig};

    fn tiny_corpus() -> Corpus {
        generate_corpus(&GenConfig {
            n_videos: 10,
            seed: 3,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        write_corpus(&corpus, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn truncated_blob_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&tiny_corpus(), dir.path()).unwrap();
        let victim = dir.path().join("train_00003.video.f32");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("train_00003.video.f32"), "{err}");
        assert!(err.contains("expected"), "{err}");
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&tiny_corpus(), dir.path()).unwrap();
        let victim = dir.path().join("val_00000.question.f32");
        let mut bytes = std::fs::read(&victim).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&victim, bytes).unwrap();
        let err = read_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn future_manifest_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&tiny_corpus(), dir.path()).unwrap();
        let manifest = dir.path().join("manifest.json");
        let json = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, json.replace("\"version\": \"1\"", "\"version\": \"2\"")).unwrap();
        let err = read_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { .. }), "{err}");
    }
}
