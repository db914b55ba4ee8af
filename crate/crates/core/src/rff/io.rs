//! `NSRF` classifier files.
//!
//! ```text
//! "NSRF" | version: u32 | d: u64 | D: u64 | σ: f64 | W: f64 × D·d (row-major)
//!        | b: f64 × D | w: f64 × 2D | bias: f64
//!        [ | C: u64 | L: u64 | mean: f64 × C | std: f64 × C ]
//! ```
//!
//! All values little-endian. The optional trailing block carries the
//! input normalization.

use std::io::{Read, Write};

use super::classifier::{DistilledClassifier, InputNormalization};
use super::projection::RffProjection;
use super::{Result, RffError};

pub const CLASSIFIER_MAGIC: &[u8; 4] = b"NSRF";
pub const CLASSIFIER_VERSION: u32 = 1;

pub fn write_classifier<W: Write>(mut w: W, c: &DistilledClassifier) -> Result<()> {
    let p = &c.projection;
    let mut buf = Vec::with_capacity(32 + 8 * (p.frequencies().len() + 3 * p.pairs() + 1));
    buf.extend_from_slice(CLASSIFIER_MAGIC);
    buf.extend_from_slice(&CLASSIFIER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(p.input_dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(p.pairs() as u64).to_le_bytes());
    buf.extend_from_slice(&p.sigma().to_le_bytes());
    for v in p.frequencies().iter().chain(p.phases()).chain(&c.weights) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.bias.to_le_bytes());
    if let Some(n) = &c.normalization {
        buf.extend_from_slice(&(n.channels as u64).to_le_bytes());
        buf.extend_from_slice(&(n.length as u64).to_le_bytes());
        for v in n.mean.iter().chain(&n.std) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| RffError::Format(format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .filter(|&b| b <= self.bytes.len() - self.pos)
            .ok_or_else(|| RffError::Format(format!("truncated while reading {what}")))?;
        let out = self.bytes[self.pos..self.pos + bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.pos += bytes;
        Ok(out)
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| RffError::Format(format!("{what} does not fit in memory")))
    }
}

pub fn read_classifier<R: Read>(mut r: R) -> Result<DistilledClassifier> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut rd = Reader { bytes: &bytes, pos: 0 };
    if &rd.take::<4>("magic")? != CLASSIFIER_MAGIC {
        return Err(RffError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(rd.take("version")?);
    if version != CLASSIFIER_VERSION {
        return Err(RffError::Format(format!("unsupported version {version}")));
    }
    let d = rd.dim("d")?;
    let pairs = rd.dim("D")?;
    let sigma = f64::from_le_bytes(rd.take("sigma")?);
    let w = rd.f64s(pairs.saturating_mul(d), "W")?;
    let b = rd.f64s(pairs, "b")?;
    let weights = rd.f64s(pairs.saturating_mul(2), "weights")?;
    let bias = f64::from_le_bytes(rd.take("bias")?);
    let projection = RffProjection::from_parts(d, pairs, sigma, w, b)?;
    let mut c = DistilledClassifier::new(projection, weights, bias)?;
    if rd.pos < bytes.len() {
        let channels = rd.dim("C")?;
        let length = rd.dim("L")?;
        let mean = rd.f64s(channels, "mean")?;
        let std = rd.f64s(channels, "std")?;
        if channels.checked_mul(length) != Some(d) {
            return Err(RffError::Format(format!("normalization block {channels}×{length} does not match d = {d}")));
        }
        c.normalization = Some(InputNormalization {
            channels,
            length,
            mean,
            std,
        });
    }
    if rd.pos != bytes.len() {
        return Err(RffError::Format(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    Ok(c)
}
