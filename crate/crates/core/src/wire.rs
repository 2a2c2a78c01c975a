//! Little-endian read helpers with byte-offset diagnostics for the binary
//! model formats (`.pnm`, `.pas`, `.psp`).

use crate::{Error, Result};
use byteorder::{ReadBytesExt, LE};
use std::io::Read;

/// Wraps a reader and tracks how many bytes have been consumed so that
/// truncation and corruption errors can name the offending offset.
pub struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    pub fn new(inner: R) -> Self {
        Cursor { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(
                    at,
                    format!("truncated: expected {} more bytes", buf.len()),
                )
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn read_u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn read_u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = vec![0f32; n];
        let at = self.offset;
        self.inner
            .read_f32_into::<LE>(&mut out)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::format(
                    at,
                    format!("truncated: expected {} f32 values", n),
                ),
                _ => Error::Io(e),
            })?;
        self.offset += 4 * n as u64;
        Ok(out)
    }

    /// Checks a fixed magic tag at the current offset.
    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.offset;
        let mut got = [0u8; 4];
        self.read_exact(&mut got)?;
        if &got != magic {
            return Err(Error::format(
                at,
                format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&got)
                ),
            ));
        }
        Ok(())
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(self.offset, "trailing bytes after payload")),
        }
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}
