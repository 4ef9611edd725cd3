//! `ENC1` container: magic, length-prefixed JSON config, then named tensors
//! `(name length, name, rank, extents, values)` until end of file. All
//! integers are little-endian u64, all values little-endian f64.

use crate::numerics::Tensor;

use super::EncoderError;

const MAGIC: &[u8; 4] = b"ENC1";

pub fn write_container<'a>(config_json: &str, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.reserve(t.len() * 8);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EncoderError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| EncoderError::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize, EncoderError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }
}

pub fn read_container(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>), EncoderError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(EncoderError::Format("bad magic; expected ENC1".into()));
    }
    let len = r.u64("config length")?;
    let config = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|e| EncoderError::Format(format!("config is not UTF-8: {e}")))?
        .to_string();
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u64("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| EncoderError::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u64("rank")?;
        if rank > 8 {
            return Err(EncoderError::Format(format!("tensor {name}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64("extent")).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| EncoderError::Format(format!("tensor {name}: size overflow")))?;
        let raw = r.take(n.saturating_mul(8), &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok((config, tensors))
}
