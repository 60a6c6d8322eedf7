//! DTF, the binary tensor interchange format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | ASCII magic `DTF1`                        |
//! | 1            | dtype code, `0x01` = float32 LE           |
//! | 1            | rank `r`                                  |
//! | 8 × r        | extents as `u64`                          |
//! | 4 × numel    | row-major float32 payload                 |
//!
//! Nothing follows the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"DTF1";
pub const DTYPE_F32: u8 = 0x01;

/// Serialize a tensor to DTF bytes.
pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse DTF bytes. Errors carry the byte offset where parsing failed.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let dtype = *bytes
        .get(4)
        .ok_or_else(|| Error::format(4, "truncated dtype"))?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(4, format!("unknown dtype code {dtype:#04x}")));
    }
    let rank = *bytes
        .get(5)
        .ok_or_else(|| Error::format(5, "truncated rank"))? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(5, format!("unsupported rank {rank}")));
    }

    let mut offset = 6usize;
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let raw = bytes
            .get(offset..offset + 8)
            .ok_or_else(|| Error::format(offset as u64, "truncated extents"))?;
        let d = u64::from_le_bytes(raw.try_into().expect("8-byte slice"));
        if d == 0 {
            return Err(Error::format(offset as u64, "zero extent"));
        }
        let d = usize::try_from(d)
            .map_err(|_| Error::format(offset as u64, "extent exceeds address space"))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::format(offset as u64, "element count overflows"))?;
        shape.push(d);
        offset += 8;
    }

    let payload_len = numel
        .checked_mul(4)
        .ok_or_else(|| Error::format(offset as u64, "payload size overflows"))?;
    let available = bytes.len() - offset;
    if available < payload_len {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {payload_len} bytes, found {available}"),
        ));
    }
    if available > payload_len {
        return Err(Error::format(
            (offset + payload_len) as u64,
            "trailing bytes after payload",
        ));
    }

    let mut data = Vec::with_capacity(numel);
    for (i, chunk) in bytes[offset..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format((offset + 4 * i) as u64, "non-finite value"));
        }
        data.push(v);
    }
    Tensor::new(shape, data)
}

pub fn write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::from(e).at(path))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode(&bytes).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_is_38_bytes() {
        let t = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(bytes.len(), 4 + 1 + 1 + 16 + 16);
        assert_eq!(&bytes[..6], b"DTF1\x01\x02");
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_headers() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = encode(&t);

        let mut bad = good.clone();
        bad[3] = b'2';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = good.clone();
        bad[4] = 0x02;
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 4, .. })));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(decode(truncated), Err(Error::Format { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            decode(&trailing),
            Err(Error::Format { offset, .. }) if offset == good.len() as u64
        ));

        assert!(matches!(
            decode(&good[..9]),
            Err(Error::Format { offset: 6, .. })
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dtf");
        let t = Tensor::new(vec![2, 1, 3], vec![0.5, -0.25, 1e-30, 7.0, 8.0, -9.0]).unwrap();
        write(&t, &path).unwrap();
        assert_eq!(read(&path).unwrap(), t);
        assert!(read(dir.path().join("missing.dtf")).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(
            (shape, data) in prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|shape| {
                let n: usize = shape.iter().product();
                (Just(shape), prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO, n))
            })
        ) {
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
