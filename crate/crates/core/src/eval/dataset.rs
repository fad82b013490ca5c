//! Alignment dataset: rendered stimuli with surrogate responses.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic         4  b"FGLD"
//! version       1  DATASET_VERSION
//! rows          4  u32
//! height        4  u32
//! width         4  u32   feature dim = height * width
//! neurons       4  u32
//! dataset_seed  8  u64
//! cortex_seed   8  u64
//! noise_sigma   8  f64
//! stimuli          f32 x rows * height * width, row-major
//! responses        f64 x rows * neurons, row-major
//! crc32         4  over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::cortex::SurrogateCortex;
use super::EvalError;
use crate::env::world::sample_state;
use crate::env::{render, WorldConfig};
use crate::seed;

pub const DATASET_MAGIC: &[u8; 4] = b"FGLD";
pub const DATASET_VERSION: u8 = 1;
pub const DEFAULT_STIMULI: usize = 500;
const HEADER_LEN: usize = 4 + 1 + 4 * 4 + 8 * 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDataset {
    pub height: usize,
    pub width: usize,
    /// Raw pixels in `[0, 1]`, `rows * height * width`.
    pub stimuli: Vec<f32>,
    pub responses: DMatrix<f64>,
    pub dataset_seed: u64,
    pub cortex_seed: u64,
    pub noise_sigma: f64,
}

/// Views from `count` seeded random poses.
pub fn generate_stimuli(world: &WorldConfig, count: usize, dataset_seed: u64) -> Result<Vec<f32>, EvalError> {
    let mut out = Vec::with_capacity(count * world.render_height * world.render_width);
    for i in 0..count {
        let mut rng = seed::rng(seed::derive(dataset_seed, &[seed::DATASET, i as u64]));
        let state = sample_state(world, &mut rng)?;
        out.extend_from_slice(&render(&state, world).pixels);
    }
    Ok(out)
}

impl AlignmentDataset {
    pub fn generate(world: &WorldConfig, count: usize, dataset_seed: u64, cortex: &SurrogateCortex) -> Result<Self, EvalError> {
        if count < 3 {
            return Err(EvalError::Config(format!("dataset needs at least 3 stimuli, got {count}")));
        }
        let stimuli = generate_stimuli(world, count, dataset_seed)?;
        let responses = cortex.responses(&stimuli)?;
        Ok(Self {
            height: world.render_height,
            width: world.render_width,
            stimuli,
            responses,
            dataset_seed,
            cortex_seed: cortex.seed,
            noise_sigma: cortex.noise_sigma,
        })
    }

    pub fn rows(&self) -> usize {
        self.responses.nrows()
    }

    pub fn neurons(&self) -> usize {
        self.responses.ncols()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let per = self.height * self.width;
        if per == 0 || self.stimuli.len() != self.rows() * per {
            return Err(EvalError::Data(format!(
                "{} stimulus values do not form {} images of {}x{}",
                self.stimuli.len(),
                self.rows(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.stimuli.len() * 4 + self.responses.len() * 8 + 4);
        out.extend_from_slice(DATASET_MAGIC);
        out.push(DATASET_VERSION);
        for v in [self.rows(), self.height, self.width, self.neurons()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.dataset_seed.to_le_bytes());
        out.extend_from_slice(&self.cortex_seed.to_le_bytes());
        out.extend_from_slice(&self.noise_sigma.to_le_bytes());
        for p in &self.stimuli {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for r in 0..self.rows() {
            for k in 0..self.neurons() {
                out.extend_from_slice(&self.responses[(r, k)].to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EvalError> {
        let bad = |m: String| Err(EvalError::Data(m));
        if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != DATASET_MAGIC {
            return bad("not an alignment dataset (bad magic)".into());
        }
        if bytes[4] != DATASET_VERSION {
            return bad(format!("unsupported dataset version {} (expected {DATASET_VERSION})", bytes[4]));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let (rows, height, width, neurons) = (u32_at(5), u32_at(9), u32_at(13), u32_at(17));
        let expected = HEADER_LEN + rows * height * width * 4 + rows * neurons * 8 + 4;
        if bytes.len() != expected {
            return bad(format!("dataset is {} bytes; header implies {expected}", bytes.len()));
        }
        let body = &bytes[..expected - 4];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return bad(format!("dataset checksum mismatch: stored {stored:08x}, computed {computed:08x}"));
        }
        let mut o = HEADER_LEN;
        let stimuli: Vec<f32> = bytes[o..o + rows * height * width * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        o += rows * height * width * 4;
        let vals: Vec<f64> = bytes[o..o + rows * neurons * 8].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let ds = Self {
            height,
            width,
            stimuli,
            responses: DMatrix::from_row_slice(rows, neurons, &vals),
            dataset_seed: u64_at(21),
            cortex_seed: u64_at(29),
            noise_sigma: f64::from_bits(u64_at(37)),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AlignmentDataset {
        AlignmentDataset {
            height: 2,
            width: 3,
            stimuli: (0..18).map(|i| i as f32 / 17.0).collect(),
            responses: DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64),
            dataset_seed: 11,
            cortex_seed: 12,
            noise_sigma: 0.1,
        }
    }

    #[test]
    fn round_trip_and_corruption() {
        let ds = tiny();
        let bytes = ds.encode();
        assert_eq!(AlignmentDataset::decode(&bytes).unwrap(), ds);
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 3] ^= 1;
        assert!(AlignmentDataset::decode(&flipped).unwrap_err().to_string().contains("checksum"));
        assert!(AlignmentDataset::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
