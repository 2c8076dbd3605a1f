//! Flat binary tensor format.
//!
//! Layout: `b"CALT"`, one version byte, rank as u64 LE, each dimension as
//! u64 LE, then the data as f64 LE in row-major order.

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CALT";
pub const VERSION: u8 = 1;
const MAX_RANK: u64 = 16;

impl Tensor {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(self.rank() as u64).to_le_bytes())?;
        for &d in self.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.numel() * 8);
        for v in self.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 8 * (self.rank() + self.numel()));
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one tensor. `offset` is the stream position of the first byte
    /// and is advanced past the record; it only feeds error messages.
    pub fn read_from<R: Read>(r: &mut R, offset: &mut u64) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, offset, "magic")?;
        if &magic != MAGIC {
            return Err(TensorError::Format {
                offset: *offset - 4,
                reason: format!("bad magic {magic:?}, expected \"CALT\""),
            });
        }
        let mut version = [0u8; 1];
        read_exact(r, &mut version, offset, "version")?;
        if version[0] != VERSION {
            return Err(TensorError::Format {
                offset: *offset - 1,
                reason: format!("unsupported version {}", version[0]),
            });
        }
        let rank = read_u64(r, offset, "rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(TensorError::Format {
                offset: *offset - 8,
                reason: format!("rank {rank} outside 1..={MAX_RANK}"),
            });
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(r, offset, "dimension")?;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n > 0 && n < (1 << 40))
                .ok_or_else(|| TensorError::Format {
                    offset: *offset - 8,
                    reason: format!("dimension {d} gives an invalid element count"),
                })?;
            shape.push(d as usize);
        }
        let mut bytes = vec![0u8; numel as usize * 8];
        read_exact(r, &mut bytes, offset, "tensor data")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut offset = 0;
        let mut cursor = bytes;
        let t = Self::read_from(&mut cursor, &mut offset)?;
        if !cursor.is_empty() {
            return Err(TensorError::Format {
                offset,
                reason: format!("{} trailing bytes", cursor.len()),
            });
        }
        Ok(t)
    }
}

pub(crate) fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    offset: &mut u64,
    what: &str,
) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(TensorError::Format {
                    offset: *offset + filled as u64,
                    reason: format!("truncated while reading {what}"),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

/// Reads a u64 LE value, advancing `offset`.
pub fn read_u64<R: Read>(r: &mut R, offset: &mut u64, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, offset, what)?;
    Ok(u64::from_le_bytes(b))
}
