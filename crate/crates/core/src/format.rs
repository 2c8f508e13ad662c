//! P2IT binary tensor format.
//!
//! ```text
//! "P2IT" | version u32 = 1 | ndim u32 | ndim x dim u32 | dtype u32 = 1 (f32) | payload
//! ```
//!
//! All integers and payload values are little-endian.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"P2IT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
const MAX_NDIM: u32 = 16;

/// Size in bytes of the encoded tensor.
pub fn encoded_len(t: &Tensor) -> u64 {
    (4 + 4 + 4 + 4 * t.dims.len() + 4 + 4 * t.data.len()) as u64
}

pub fn write_tensor<W: Write>(sink: &mut W, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(encoded_len(t) as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format {
            offset: 0,
            reason: format!("dim {d} does not fit in u32"),
        })?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf).map_err(|e| Error::io("<sink>", e))
}

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: start + got as u64,
                        reason: format!("truncated {what}: needed {} bytes, got {got}", buf.len()),
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io("<source>", e)),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn read_tensor<R: Read>(source: &mut R) -> Result<Tensor> {
    let mut cur = Cursor {
        inner: source,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    cur.fill(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {:?}", String::from_utf8_lossy(&magic)),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let ndim = cur.u32("ndim")?;
    if ndim > MAX_NDIM {
        return Err(Error::Format {
            offset: 8,
            reason: format!("ndim {ndim} exceeds {MAX_NDIM}"),
        });
    }
    let dims_offset = cur.offset;
    let mut dims = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        dims.push(cur.u32("dims")? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format {
            offset: dims_offset,
            reason: format!("dims {dims:?} overflow"),
        })?;
    let dtype_offset = cur.offset;
    let dtype = cur.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format {
            offset: dtype_offset,
            reason: format!("unsupported dtype code {dtype}"),
        });
    }
    // Read in chunks so a hostile header cannot force a huge allocation up front.
    let mut data = Vec::with_capacity(count.min(1 << 20));
    let mut chunk = vec![0u8; 4 * count.clamp(1, 1 << 16)];
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(chunk.len() / 4);
        cur.fill(&mut chunk[..4 * n], "payload")?;
        data.extend(
            chunk[..4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        remaining -= n;
    }
    Ok(Tensor { dims, data })
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
    read_tensor(&mut &bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Tensor {
        Tensor::new(vec![2, 1, 3, 2], (0..12).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&sample());
        assert_eq!(&b[0..4], b"P2IT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[28..32].try_into().unwrap()), 1);
        assert_eq!(b.len() as u64, encoded_len(&sample()));
        assert_eq!(b.len(), 32 + 48);
    }

    #[test]
    fn bad_magic() {
        let mut b = to_bytes(&sample());
        b[..4].copy_from_slice(b"XXXX");
        match from_bytes(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let b = to_bytes(&sample());
        let short = &b[..b.len() - 4];
        match from_bytes(short) {
            Err(Error::Format { offset, reason }) => {
                assert!(reason.contains("payload"), "{reason}");
                assert_eq!(offset, (b.len() - 4) as u64);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overflowing_dims() {
        let t = Tensor {
            dims: vec![u32::MAX as usize, u32::MAX as usize, u32::MAX as usize],
            data: vec![],
        };
        let b = to_bytes(&t);
        match from_bytes(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_dtype() {
        let mut b = to_bytes(&sample());
        b[28] = 2;
        assert!(matches!(from_bytes(&b), Err(Error::Format { offset: 28, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut s = seed;
            let data: Vec<f32> = (0..n).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = f32::from_bits((s >> 32) as u32);
                if v.is_finite() { v } else { 0.5 }
            }).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = from_bytes(&to_bytes(&t)).unwrap();
            prop_assert_eq!(&back.dims, &t.dims);
            let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
