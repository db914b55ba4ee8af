//! `NSAD` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NSAD" | version: u32 | record*
//! record := name_len: u32 | name: UTF-8 | rank: u32 | dims: u64 × rank | values: f64 × ∏dims
//! ```
//!
//! Records run to end of file.

use std::io::{Read, Write};

use super::{ParamStore, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSAD";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in params.entries() {
        let name = name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Checkpoint(format!("{name}: dimension overflow")))?;
        if n.checked_mul(8).is_none_or(|b| b > bytes.len() - cur.pos) {
            return Err(TensorError::Checkpoint(format!("{name}: truncated values")));
        }
        let data = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        store.push(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_pinned() {
        let mut p = ParamStore::new();
        p.push("w", Tensor::vector(vec![1.0]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let mut expect = b"NSAD".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(b"w");
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(1.0f64.to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_checkpoint(&b"XXXX\x01\0\0\0"[..]).is_err());
        assert!(read_checkpoint(&b"NSAD\x02\0\0\0"[..]).is_err());
        let mut p = ParamStore::new();
        p.push("w", Tensor::vector(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        buf.pop();
        assert!(read_checkpoint(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            params in prop::collection::vec(
                ("[a-z_.]{1,12}", prop::collection::vec(1usize..4, 0..3), any::<u64>()),
                0..5,
            )
        ) {
            let mut store = ParamStore::new();
            for (name, shape, bits) in params {
                let n: usize = shape.iter().product();
                let data = (0..n as u64).map(|i| f64::from_bits(bits.wrapping_add(i))).collect();
                store.push(name, Tensor::new(shape, data).unwrap());
            }
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &store).unwrap();
            let back = read_checkpoint(&buf[..]).unwrap();
            let mut buf2 = Vec::new();
            write_checkpoint(&mut buf2, &back).unwrap();
            prop_assert_eq!(buf, buf2);
            prop_assert_eq!(back.len(), store.len());
        }
    }
}
