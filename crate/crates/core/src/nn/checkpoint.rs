//! Binary checkpoint format.
//!
//! ```text
//! magic        4  b"FGLB"
//! version      1  FORMAT_VERSION
//! precision    1  4 = f32, 8 = f64
//! total_len    8  u64, length of the whole file including the CRC
//! spec_len     4  u32, then spec_len bytes of JSON (ModelSpec)
//! step         8  u64, nominal checkpoint step
//! env_steps    8  u64, environment transitions actually consumed
//! normalizer      channels u32, mean f64 x C, var f64 x C, eps f64,
//!                 momentum f64, count u64
//! rng            seed [u8; 32], stream u64, word_pos u128
//! tensors         count u32, then per tensor: name_len u16, name,
//!                 rank u8, dims u32 x rank, data (precision bytes each)
//! crc32        4  over every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::model::{Architecture, Model, ModelSpec};
use super::normalizer::ObservationNormalizer;
use super::ModelError;
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"FGLB";
pub const FORMAT_VERSION: u8 = 1;
/// Byte offset of the version field.
pub const VERSION_OFFSET: usize = 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("truncated checkpoint: header declares {expected} bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("architecture mismatch: expected {expected}, checkpoint holds {found}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Serializable snapshot of an RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint<S: Scalar> {
    pub model: Model<S>,
    /// Nominal step (a multiple of the checkpoint interval during training).
    pub step: u64,
    pub env_steps: u64,
    pub rng: RngState,
}

impl<S: Scalar> ModelCheckpoint<S> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(S::PRECISION.tag());
        out.extend_from_slice(&0u64.to_le_bytes()); // patched below
        let spec = serde_json::to_vec(self.model.spec()).expect("spec serializes");
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.env_steps.to_le_bytes());

        let norm = self.model.normalizer();
        out.extend_from_slice(&(norm.channels() as u32).to_le_bytes());
        for v in norm.mean().iter().chain(norm.var()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&norm.eps().to_le_bytes());
        out.extend_from_slice(&norm.momentum().to_le_bytes());
        out.extend_from_slice(&norm.sample_count().to_le_bytes());

        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (_, name, tensor) in params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.rank() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            S::to_le_bytes_vec(tensor.data(), &mut out);
        }
        let total = (out.len() + 4) as u64;
        out[6..14].copy_from_slice(&total.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes a checkpoint, converting stored tensors to `S` if the file
    /// was written at the other precision.
    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 14 {
            return Err(CheckpointError::Truncated {
                expected: 14,
                actual: bytes.len() as u64,
            });
        }
        if bytes[VERSION_OFFSET] != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: bytes[VERSION_OFFSET],
                expected: FORMAT_VERSION,
            });
        }
        let total = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
        if (bytes.len() as u64) < total {
            return Err(CheckpointError::Truncated {
                expected: total,
                actual: bytes.len() as u64,
            });
        }
        if bytes.len() as u64 != total || total < 18 {
            return Err(CheckpointError::Malformed(format!("length {} does not match header {total}", bytes.len())));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let precision = Precision::from_tag(bytes[5]).ok_or_else(|| CheckpointError::Malformed(format!("precision tag {}", bytes[5])))?;

        let mut r = Reader { buf: body, pos: 14 };
        let spec_len = r.u32()? as usize;
        let spec: ModelSpec = serde_json::from_slice(r.take(spec_len)?).map_err(|e| CheckpointError::Malformed(format!("spec: {e}")))?;
        let step = r.u64()?;
        let env_steps = r.u64()?;

        let channels = r.u32()? as usize;
        let mean = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let var = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let eps = r.f64()?;
        let momentum = r.f64()?;
        let count = r.u64()?;
        let normalizer = ObservationNormalizer::from_parts(mean, var, eps, momentum, count);

        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));

        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CheckpointError::Malformed("tensor name".into()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let tensor = match precision {
                Precision::Single => read_values::<f32, S>(&mut r, n)?,
                Precision::Double => read_values::<f64, S>(&mut r, n)?,
            };
            let tensor = Tensor::new(shape, tensor).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            tensors.push((name, tensor));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let model = Model::from_parts(spec, tensors, normalizer)?;
        Ok(Self {
            model,
            step,
            env_steps,
            rng: RngState { seed, stream, word_pos },
        })
    }
}

fn read_values<F: Scalar, S: Scalar>(r: &mut Reader<'_>, n: usize) -> Result<Vec<S>, CheckpointError> {
    let width = F::PRECISION.tag() as usize;
    let raw = r.take(n * width)?;
    Ok(raw.chunks_exact(width).map(|c| S::lit(F::from_le_chunk(c).as_f64())).collect())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Malformed(format!("field at byte {} overruns the payload", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint<S: Scalar>(checkpoint: &ModelCheckpoint<S>, path: &Path) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, checkpoint.encode())?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ModelCheckpoint<S>, CheckpointError> {
    ModelCheckpoint::decode(&fs::read(path)?)
}

/// Loads a checkpoint and rejects it unless it holds `expected`.
pub fn load_checkpoint_expecting<S: Scalar>(path: &Path, expected: Architecture) -> Result<ModelCheckpoint<S>, CheckpointError> {
    let ckpt = load_checkpoint::<S>(path)?;
    let found = ckpt.model.spec().architecture;
    if found != expected {
        return Err(CheckpointError::ArchitectureMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(ckpt)
}
