//! Bit-exact named-tensor checkpoint format.
//!
//! Layout: magic `FEIR`, u32 version (= 1), u32 tensor count, then per
//! tensor: u32 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank,
//! rank u32 extents, raw row-major little-endian data. Rank 0 carries no
//! extent words and exactly one scalar. All integers little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

const MAGIC: [u8; 4] = [0x46, 0x45, 0x49, 0x52];
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes named tensors to the checkpoint byte format.
pub fn encode_checkpoint(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::InvalidArgument("too many tensors for one checkpoint".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let name_len = u32::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::InvalidArgument(format!("rank of {name} exceeds 255")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(rank);
        for &d in t.dims() {
            let e = u32::try_from(d)
                .map_err(|_| Error::InvalidArgument(format!("extent of {name} exceeds u32")))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the checkpoint byte format. Extent products are bounds-checked
/// against the remaining input before any allocation.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::CheckpointBadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointUnknownVersion(version));
    }
    let count = cur.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::CheckpointInvalidName)?
            .to_string();
        let dtype = cur.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::CheckpointUnknownDtype(dtype));
        }
        let rank = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let e = cur.u32()?;
            dims.push(e as usize);
            elems = elems.checked_mul(e as u64).ok_or(Error::CheckpointTruncated)?;
        }
        let nbytes = elems.checked_mul(4).ok_or(Error::CheckpointTruncated)?;
        if nbytes > (cur.bytes.len() - cur.pos) as u64 {
            return Err(Error::CheckpointTruncated);
        }
        let raw = cur.take(nbytes as usize)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push((name, Tensor::new(&dims, data)?));
    }
    if cur.pos != cur.bytes.len() {
        return Err(Error::CheckpointTrailingData);
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    Ok(std::fs::write(path, encode_checkpoint(tensors)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode_checkpoint(&std::fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::CheckpointTruncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<(String, Tensor<f32>)> {
        vec![
            ("model.kernel.w".into(), Tensor::new(&[2, 3], vec![0.5, -1.25, 3.0, -0.0, 1e-20, 255.0]).unwrap()),
            ("trainer.step".into(), Tensor::scalar(42.0)),
            ("bias".into(), Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap()),
        ]
    }

    fn assert_bitwise_equal(a: &[(String, Tensor<f32>)], b: &[(String, Tensor<f32>)]) {
        assert_eq!(a.len(), b.len());
        for ((na, ta), (nb, tb)) in a.iter().zip(b) {
            assert_eq!(na, nb);
            assert_eq!(ta.dims(), tb.dims());
            for (&x, &y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let tensors = fixture();
        let bytes = encode_checkpoint(&tensors).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_bitwise_equal(&tensors, &back);
    }

    #[test]
    fn rank_zero_has_no_extent_words() {
        let tensors = vec![("s".into(), Tensor::<f32>::scalar(7.0))];
        let bytes = encode_checkpoint(&tensors).unwrap();
        // magic 4 + version 4 + count 4 + name_len 4 + name 1 + dtype 1 + rank 1 + scalar 4
        assert_eq!(bytes.len(), 23);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back[0].1.rank(), 0);
        assert_eq!(back[0].1.item(), 7.0);
    }

    #[test]
    fn empty_table_is_valid() {
        let bytes = encode_checkpoint(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode_checkpoint(&bytes).unwrap().is_empty());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let tensors = fixture();
        save_checkpoint(&path, &tensors).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_bitwise_equal(&tensors, &back);
    }

    #[test]
    fn bad_magic_is_distinct() {
        let mut bytes = encode_checkpoint(&fixture()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointBadMagic)));
    }

    #[test]
    fn unknown_version_is_distinct() {
        let mut bytes = encode_checkpoint(&fixture()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointUnknownVersion(9))));
    }

    #[test]
    fn unknown_dtype_is_distinct() {
        let tensors = vec![("a".into(), Tensor::<f32>::scalar(1.0))];
        let mut bytes = encode_checkpoint(&tensors).unwrap();
        // dtype byte sits right after magic, version, count, name_len, name.
        let dtype_at = 4 + 4 + 4 + 4 + 1;
        assert_eq!(bytes[dtype_at], DTYPE_F32);
        bytes[dtype_at] = 3;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointUnknownDtype(3))));
    }

    #[test]
    fn truncation_at_every_offset_fails_cleanly() {
        let bytes = encode_checkpoint(&fixture()).unwrap();
        for cut in 0..bytes.len() {
            match decode_checkpoint(&bytes[..cut]) {
                Err(Error::CheckpointTruncated) => {}
                other => panic!("cut at {cut}: expected truncation error, got {other:?}"),
            }
        }
        assert!(decode_checkpoint(&bytes).is_ok());
    }

    #[test]
    fn trailing_data_is_rejected() {
        let mut bytes = encode_checkpoint(&fixture()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointTrailingData)));
    }

    #[test]
    fn invalid_utf8_name_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0xFF, 0xFE]);
        bytes.push(DTYPE_F32);
        bytes.push(0);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointInvalidName)));
    }

    #[test]
    fn oversized_extents_fail_before_allocating() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'a');
        bytes.push(DTYPE_F32);
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointTruncated)));

        let mut bytes2 = Vec::new();
        bytes2.extend_from_slice(&MAGIC);
        bytes2.extend_from_slice(&1u32.to_le_bytes());
        bytes2.extend_from_slice(&1u32.to_le_bytes());
        bytes2.extend_from_slice(&1u32.to_le_bytes());
        bytes2.push(b'a');
        bytes2.push(DTYPE_F32);
        bytes2.push(2);
        bytes2.extend_from_slice(&0x1000_0000u32.to_le_bytes());
        bytes2.extend_from_slice(&4u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes2), Err(Error::CheckpointTruncated)));
    }
}
