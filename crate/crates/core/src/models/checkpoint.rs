//! Versioned checkpoints: a little-endian weight blob plus a JSON sidecar.
//!
//! Blob layout: magic `GCCKPT01`, dtype tag (u8 length + ASCII), u32 tensor
//! count, then per tensor a u64 element count followed by the elements.
//! Trainable parameters come first, then buffers, both in canonical order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tier::{CapacityTier, Multiplier};
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: u32 = 1;
const MAGIC: &[u8; 8] = b"GCCKPT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Generator,
    Discriminator,
    Classifier,
    Embedder,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
            ModelKind::Classifier => "classifier",
            ModelKind::Embedder => "embedder",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(ModelKind::Generator),
            "discriminator" => Ok(ModelKind::Discriminator),
            "classifier" => Ok(ModelKind::Classifier),
            "embedder" => Ok(ModelKind::Embedder),
            _ => Err(Error::arg(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Sidecar metadata describing a checkpoint blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub id: String,
    pub init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<Multiplier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<CapacityTier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    #[serde(default)]
    pub lineage: Vec<String>,
    /// Instance-level fields (loss configuration, sources, seeds).
    #[serde(default)]
    pub extra: serde_json::Value,
    #[serde(default)]
    pub dtype: String,
    #[serde(default)]
    pub blob_sha256: String,
}

impl CheckpointMeta {
    pub fn new(kind: ModelKind, id: impl Into<String>, init_seed: u64) -> Self {
        CheckpointMeta {
            format_version: CHECKPOINT_FORMAT,
            kind,
            id: id.into(),
            init_seed,
            width: None,
            tier: None,
            iteration: None,
            lineage: Vec::new(),
            extra: serde_json::Value::Null,
            dtype: String::new(),
            blob_sha256: String::new(),
        }
    }
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

/// Serializes parameters and buffers into the blob layout.
pub fn encode_params<T: Scalar, P: ParamSet<T> + ?Sized>(params: &P) -> Vec<u8> {
    let tensors: Vec<&[T]> = params
        .params()
        .into_iter()
        .chain(params.buffers())
        .collect();
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(32 + 8 * tensors.len() + total * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.len() as u8);
    out.extend_from_slice(T::DTYPE.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for &v in t {
            v.write_le(&mut out);
        }
    }
    out
}

/// SHA-256 of the encoded parameters; equal digests mean bit-identical weights.
pub fn params_digest<T: Scalar, P: ParamSet<T> + ?Sized>(params: &P) -> String {
    sha256_hex(&encode_params(params))
}

fn decode_into<T: Scalar, P: ParamSet<T> + ?Sized>(
    path: &Path,
    bytes: &[u8],
    params: &mut P,
) -> Result<()> {
    let bad = |reason: String| Error::integrity(path, reason);
    if bytes.len() < 13 || &bytes[..8] != MAGIC {
        return Err(bad("bad checkpoint magic".into()));
    }
    let tag_len = bytes[8] as usize;
    let mut pos = 9 + tag_len;
    if bytes.len() < pos + 4 {
        return Err(bad("truncated header".into()));
    }
    let tag = std::str::from_utf8(&bytes[9..pos]).unwrap_or("?");
    if tag != T::DTYPE {
        return Err(bad(format!("dtype {tag}, expected {}", T::DTYPE)));
    }
    let count = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
    pos += 4;
    let expected = params.params().len() + params.buffers().len();
    if count != expected {
        return Err(bad(format!("{count} tensors, architecture has {expected}")));
    }
    let mut k = 0;
    for pass in 0..2 {
        let tensors = if pass == 0 {
            params.params_mut()
        } else {
            params.buffers_mut()
        };
        for t in tensors {
            if bytes.len() < pos + 8 {
                return Err(bad("truncated tensor header".into()));
            }
            let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
            pos += 8;
            if len != t.len() {
                return Err(bad(format!(
                    "tensor {k} has {len} elements, expected {}",
                    t.len()
                )));
            }
            let end = pos + len * T::BYTES;
            if bytes.len() < end {
                return Err(bad(format!("tensor {k} truncated")));
            }
            for (dst, chunk) in t.iter_mut().zip(bytes[pos..end].chunks_exact(T::BYTES)) {
                *dst = T::read_le(chunk);
            }
            pos = end;
            k += 1;
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(())
}

/// Writes `blob` and its sidecar atomically; fills in dtype and digest.
pub fn save_checkpoint<T: Scalar, P: ParamSet<T> + ?Sized>(
    blob: &Path,
    params: &P,
    mut meta: CheckpointMeta,
) -> Result<CheckpointMeta> {
    let bytes = encode_params(params);
    meta.format_version = CHECKPOINT_FORMAT;
    meta.dtype = T::DTYPE.to_string();
    meta.blob_sha256 = sha256_hex(&bytes);
    write_atomic(blob, &bytes)?;
    let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
    write_atomic(&sidecar_path(blob), &json)?;
    Ok(meta)
}

pub fn read_meta(blob: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(blob);
    let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&text)
        .map_err(|e| Error::integrity(&side, format!("unreadable metadata: {e}")))?;
    if meta.format_version != CHECKPOINT_FORMAT {
        return Err(Error::integrity(
            &side,
            format!(
                "format version {}, expected {CHECKPOINT_FORMAT}",
                meta.format_version
            ),
        ));
    }
    Ok(meta)
}

/// Verifies the blob digest against its sidecar and loads the weights into
/// `params`, whose architecture must match.
pub fn load_checkpoint<T: Scalar, P: ParamSet<T> + ?Sized>(
    blob: &Path,
    params: &mut P,
) -> Result<CheckpointMeta> {
    let meta = read_meta(blob)?;
    let bytes = std::fs::read(blob).map_err(|e| Error::io(blob, e))?;
    let digest = sha256_hex(&bytes);
    if digest != meta.blob_sha256 {
        return Err(Error::integrity(
            blob,
            "weight digest does not match metadata",
        ));
    }
    decode_into(blob, &bytes, params)?;
    Ok(meta)
}

/// Checks a checkpoint's digest without loading it.
pub fn verify_checkpoint(blob: &Path) -> Result<CheckpointMeta> {
    let meta = read_meta(blob)?;
    let bytes = std::fs::read(blob).map_err(|e| Error::io(blob, e))?;
    if sha256_hex(&bytes) != meta.blob_sha256 {
        return Err(Error::integrity(
            blob,
            "weight digest does not match metadata",
        ));
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClassifierParams, GeneratorConfig, GeneratorParams};

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("g.bin");
        let g = GeneratorParams::<f32>::init(
            4,
            GeneratorConfig {
                width: Multiplier::new(1, 16).unwrap(),
            },
        );
        let mut meta = CheckpointMeta::new(ModelKind::Generator, "g", 4);
        meta.width = Some(g.config.width);
        meta.lineage = vec!["c0".into()];
        let saved = save_checkpoint(&blob, &g, meta).unwrap();
        assert_eq!(saved.blob_sha256, params_digest(&g));

        let mut fresh = GeneratorParams::<f32>::init(5, g.config);
        let back = load_checkpoint(&blob, &mut fresh).unwrap();
        assert_eq!(back, saved);
        assert_eq!(fresh.flat_params(), g.flat_params());
        assert_eq!(fresh.buffers(), g.buffers());

        let mut bytes = std::fs::read(&blob).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&blob, &mut fresh),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn architecture_mismatch_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("c.bin");
        let c = ClassifierParams::<f32>::init(1, CapacityTier::parse("1/4").unwrap());
        save_checkpoint(
            &blob,
            &c,
            CheckpointMeta::new(ModelKind::Classifier, "c", 1),
        )
        .unwrap();
        let mut other = ClassifierParams::<f32>::init(1, CapacityTier::parse("1/2").unwrap());
        assert!(matches!(
            load_checkpoint(&blob, &mut other),
            Err(Error::Integrity { .. })
        ));
        let mut wide = ClassifierParams::<f64>::init(1, CapacityTier::parse("1/4").unwrap());
        assert!(matches!(
            load_checkpoint(&blob, &mut wide),
            Err(Error::Integrity { .. })
        ));
    }
}
