use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub const METRICS_HEADER: &str = "step,episodes,mean_return,success_rate,policy_loss,value_loss,entropy,clip_fraction,lr";

/// One summary row. Episode statistics cover the episodes finished since
/// the previous row (NaN when none finished); losses are from the latest
/// update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    /// Episodes finished so far in this run.
    pub episodes: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e}",
            self.step, self.episodes, self.mean_return, self.success_rate, self.policy_loss, self.value_loss, self.entropy, self.clip_fraction, self.lr
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            episodes: f[1].parse().ok()?,
            mean_return: num(2)?,
            success_rate: num(3)?,
            policy_loss: num(4)?,
            value_loss: num(5)?,
            entropy: num(6)?,
            clip_fraction: num(7)?,
            lr: num(8)?,
        })
    }
}

/// Streams rows to a CSV file, flushing after each one.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> io::Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()
    }
}

/// Reads a metrics CSV written by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> io::Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{}: missing metrics header", path.display()))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| MetricsRow::parse(l).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad metrics row {l:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trips() {
        let row = MetricsRow {
            step: 4000,
            episodes: 17,
            mean_return: 3.25,
            success_rate: 0.5,
            policy_loss: -0.01,
            value_loss: 1.5,
            entropy: 4.2,
            clip_fraction: 0.125,
            lr: 9e-5,
        };
        assert_eq!(MetricsRow::parse(&row.to_csv()).unwrap(), row);
        let empty = MetricsRow {
            mean_return: f64::NAN,
            ..row
        };
        assert!(MetricsRow::parse(&empty.to_csv()).unwrap().mean_return.is_nan());
    }
}
