//! Named-tensor checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "NTNS" | version: u32 | count: u32 |
//!   count × ( name_len: u32 | name: UTF-8 | rank: u32 | dims: u32 × rank | data: f32 × prod(dims) )
//! ```
//!
//! Tensors are written in sorted-name order, so equal maps produce equal files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTNS";
pub const VERSION: u32 = 1;

fn format_err(pos: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        pos,
        msg: msg.into(),
    }
}

pub fn encode(tensors: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let payload: usize = tensors.values().map(|t| 4 * t.len()).sum();
    let mut out = Vec::with_capacity(12 + payload + 64 * tensors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(tensors.len())
            .map_err(|_| Error::invalid("too many tensors"))?
            .to_le_bytes(),
    );
    for (name, t) in tensors {
        if name.is_empty() {
            return Err(Error::invalid("tensor names must be non-empty"));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Builds the map for [`encode`] from a list, rejecting empty or repeated names.
pub fn collect_named(items: impl IntoIterator<Item = (String, Tensor)>) -> Result<BTreeMap<String, Tensor>> {
    let mut map = BTreeMap::new();
    for (name, t) in items {
        if name.is_empty() {
            return Err(Error::invalid("tensor names must be non-empty"));
        }
        if map.contains_key(&name) {
            return Err(Error::Tensor {
                name,
                msg: "duplicate name".into(),
            });
        }
        map.insert(name, t);
    }
    Ok(map)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(self.pos, format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Parses one checkpoint from the front of `bytes`; returns it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(BTreeMap<String, Tensor>, usize)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic, expected NTNS"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let count = c.u32("tensor count")?;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let name_pos = c.pos;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| format_err(name_pos + 4, "name is not UTF-8"))?
            .to_string();
        if name.is_empty() {
            return Err(format_err(name_pos, "empty tensor name"));
        }
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| format_err(name_pos, format!("tensor `{name}` has invalid shape {shape:?}")))?;
        let raw = c.take(
            n.checked_mul(4)
                .ok_or_else(|| format_err(c.pos, "payload size overflow"))?,
            &format!("data of `{name}`"),
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data)?;
        if map.insert(name.clone(), t).is_some() {
            return Err(format_err(name_pos, format!("duplicate tensor `{name}`")));
        }
    }
    Ok((map, c.pos))
}

/// Parses a complete checkpoint; trailing bytes are rejected.
pub fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let (map, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(format_err(used, format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(map)
}

pub fn save_checkpoint(path: impl AsRef<Path>, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor> {
        collect_named([
            ("b".to_string(), Tensor::new([2, 1], vec![1.5, -0.0]).unwrap()),
            (
                "a.weight".to_string(),
                Tensor::new([3], vec![f32::MIN_POSITIVE, 3.0, -7.25]).unwrap(),
            ),
        ])
        .unwrap()
    }

    #[test]
    fn layout_is_little_endian_and_sorted() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"NTNS");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &8u32.to_le_bytes());
        assert_eq!(&bytes[16..24], b"a.weight");
        assert_eq!(&bytes[24..28], &1u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &3u32.to_le_bytes());
        assert_eq!(&bytes[36..40], &3.0f32.to_le_bytes());
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = sample();
        let bytes = encode(&m).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(back["b"].data()[1].is_sign_negative());
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&bytes[..10]).is_err());
        bytes.push(0);
        assert!(decode(&bytes).unwrap_err().to_string().contains("trailing"));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn rejects_duplicate_and_empty_names() {
        let t = Tensor::zeros([1]);
        assert!(collect_named([("x".into(), t.clone()), ("x".into(), t.clone())]).is_err());
        assert!(collect_named([(String::new(), t)]).is_err());
    }
}
