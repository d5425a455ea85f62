//! Checkpoint serialization: magic, version byte, JSON header, raw blobs.
//!
//! Layout: `EIGVCKPT` (8 bytes) · version (1 byte) · header length (u32 LE)
//! · JSON header · tensor payloads, little-endian, concatenated in the
//! canonical [`ModelParams::named_tensors`] order. The header records the
//! model dims, the scalar width, every tensor's name and shape, and an
//! FNV-1a hash of the payload so corruption is caught before parameters are
//! trusted.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Scalar;
use crate::trainkit::model::{ModelDims, ModelParams};

const MAGIC: &[u8; 8] = b"EIGVCKPT";
const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: ModelDims,
    /// `"f32"` or `"f64"` — the payload element width.
    scalar: String,
    tensors: Vec<TensorMeta>,
    /// FNV-1a over the payload bytes.
    payload_hash: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fmt_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        file: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Serializes the full parameter set to `path`.
pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let named = params.named_tensors();
    let elem = std::mem::size_of::<T>();
    let mut payload = Vec::with_capacity(named.iter().map(|(_, t)| t.len() * elem).sum());
    for (_, tensor) in &named {
        for &v in tensor.data() {
            // Scalar is f32 or f64; both serialize as their LE byte pattern.
            if elem == 4 {
                payload.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            } else {
                payload.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
    }
    let header = Header {
        dims: params.dims,
        scalar: T::NAME.to_string(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorMeta {
                name: (*name).to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload_hash: fnv1a(&payload),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(13 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&u32::try_from(header_json.len()).map_err(|_| {
        fmt_err(path, "header exceeds u32 length")
    })?.to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back. When `expected` is given, the stored dims must
/// match it field for field — loading a desk-width checkpoint into a
/// paper-width configuration fails up front, naming the offending field.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    expected: Option<&ModelDims>,
) -> Result<ModelParams<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 13 {
        return Err(fmt_err(path, "file shorter than the fixed preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fmt_err(path, "bad magic — not a checkpoint file"));
    }
    if bytes[8] != VERSION {
        return Err(Error::UnsupportedVersion {
            found: bytes[8].to_string(),
            supported: VERSION.to_string(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let header_end = 13 + header_len;
    if bytes.len() < header_end {
        return Err(fmt_err(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[13..header_end])
        .map_err(|e| fmt_err(path, format!("unreadable header: {e}")))?;
    if header.scalar != T::NAME {
        return Err(fmt_err(
            path,
            format!("stored as {} but loaded as {}", header.scalar, T::NAME),
        ));
    }
    if let Some(want) = expected {
        header.dims.check_matches(want)?;
    }

    let payload = &bytes[header_end..];
    if fnv1a(payload) != header.payload_hash {
        return Err(fmt_err(path, "payload hash mismatch — corrupt checkpoint"));
    }

    // Rebuild a parameter set of the right shape, then overwrite every
    // tensor from the payload in canonical order.
    let mut params: ModelParams<T> = ModelParams::init(header.dims, 0)?;
    let elem = std::mem::size_of::<T>();
    let mut offset = 0usize;
    {
        let named = params.named_tensors_mut();
        if named.len() != header.tensors.len() {
            return Err(fmt_err(
                path,
                format!(
                    "expected {} tensors, header lists {}",
                    named.len(),
                    header.tensors.len()
                ),
            ));
        }
        for ((name, tensor), meta) in named.into_iter().zip(&header.tensors) {
            if name != meta.name {
                return Err(fmt_err(
                    path,
                    format!("tensor order mismatch: expected {name}, found {}", meta.name),
                ));
            }
            if tensor.shape() != meta.shape.as_slice() {
                return Err(fmt_err(
                    path,
                    format!(
                        "{name}: shape {:?} does not match stored {:?}",
                        tensor.shape(),
                        meta.shape
                    ),
                ));
            }
            let n_bytes = tensor.len() * elem;
            let slice = payload
                .get(offset..offset + n_bytes)
                .ok_or_else(|| fmt_err(path, format!("payload truncated inside {name}")))?;
            for (i, chunk) in slice.chunks_exact(elem).enumerate() {
                let v = if elem == 4 {
                    f64::from(f32::from_le_bytes(chunk.try_into().unwrap()))
                } else {
                    f64::from_le_bytes(chunk.try_into().unwrap())
                };
                tensor.data_mut()[i] = T::from_f64(v);
            }
            offset += n_bytes;
        }
    }
    if offset != payload.len() {
        return Err(fmt_err(
            path,
            format!("{} trailing payload bytes", payload.len() - offset),
        ));
    }
    params.dims = header.dims;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{RngStream, Tensor};
    use crate::trainkit::model::predict;

    fn dims() -> ModelDims {
        ModelDims {
            d_in: 5,
            d_q: 3,
            d: 6,
            n_answers: 4,
        }
    }

    fn probe() -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = RngStream::new(99, "ckpt-probe");
        (
            Tensor::from_fn(&[4, 5], || rng.gaussian() as f32),
            Tensor::from_fn(&[2, 3], || rng.gaussian() as f32),
        )
    }

    #[test]
    fn round_trip_reproduces_logits_bitwise() {
        let params: ModelParams<f32> = ModelParams::init(dims(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded: ModelParams<f32> = load_checkpoint(&path, Some(&dims())).unwrap();
        assert_eq!(params, loaded, "every tensor survives the trip");

        let (video, question) = probe();
        let a = predict(&params, &video, &question).unwrap();
        let b = predict(&loaded, &video, &question).unwrap();
        assert_eq!(a.logits, b.logits, "logits must be bit-identical");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let params: ModelParams<f32> = ModelParams::init(dims(), 18).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 7]).unwrap();
        let err = load_checkpoint::<f32>(&path, None).unwrap_err();
        assert!(
            err.to_string().contains("truncated") || err.to_string().contains("corrupt"),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn flipped_payload_byte_is_caught_by_the_hash() {
        let params: ModelParams<f32> = ModelParams::init(dims(), 19).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let err = load_checkpoint::<f32>(&path, None).unwrap_err();
        assert!(err.to_string().contains("hash"), "unexpected error: {err}");
    }

    #[test]
    fn wrong_dims_name_the_field() {
        let params: ModelParams<f32> = ModelParams::init(dims(), 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let mut want = dims();
        want.d = 512;
        let err = load_checkpoint::<f32>(&path, Some(&want)).unwrap_err();
        match err {
            Error::DimensionMismatch { field, expected, got } => {
                assert_eq!(field, "d");
                assert_eq!((expected, got), (512, 6));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn foreign_versions_and_scalars_are_refused() {
        let params: ModelParams<f32> = ModelParams::init(dims(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();

        // Bump the version byte.
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 9;
        let vpath = dir.path().join("future.ckpt");
        fs::write(&vpath, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&vpath, None).unwrap_err(),
            Error::UnsupportedVersion { .. }
        ));

        // Load an f32 checkpoint as f64.
        let err = load_checkpoint::<f64>(&path, None).unwrap_err();
        assert!(err.to_string().contains("f32"), "unexpected error: {err}");
    }

    #[test]
    fn wide_parameters_round_trip_too() {
        let params: ModelParams<f64> = ModelParams::init(dims(), 22).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model64.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded: ModelParams<f64> = load_checkpoint(&path, None).unwrap();
        assert_eq!(params, loaded);
    }
}
