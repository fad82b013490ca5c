//! Debug dumps: binary PGM frames and JSON-lines episode traces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::Observation;
use super::world::{Action, WorldState};

/// Writes an 8-bit binary (P5) PGM.
pub fn write_pgm(path: &Path, obs: &Observation) -> std::io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", obs.width, obs.height)?;
    let bytes: Vec<u8> = obs.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    f.write_all(&bytes)?;
    f.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub action: [f64; 3],
    pub reward: f64,
}

impl TraceRecord {
    pub fn new(state: &WorldState, action: Action, reward: f64) -> Self {
        Self {
            step: state.step,
            x: state.x,
            y: state.y,
            heading: state.heading,
            action: [action.forward, action.strafe, action.rotate],
            reward,
        }
    }
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, rec: &TraceRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
