//! Little-endian binary encoding for cache and checkpoint files.
//!
//! Every file starts with a 4-byte magic and a u32 format version written by
//! the caller through [`BinWriter::header`]; [`BinReader::expect_header`]
//! refuses files whose magic or version does not match.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("corrupt data: {0}")]
    Corrupt(String),
}

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        BinWriter { inner }
    }

    pub fn header(&mut self, magic: [u8; 4], version: u32) -> Result<(), BinError> {
        self.inner.write_all(&magic)?;
        self.u32(version)
    }

    pub fn u8(&mut self, v: u8) -> Result<(), BinError> {
        Ok(self.inner.write_all(&[v])?)
    }

    pub fn u32(&mut self, v: u32) -> Result<(), BinError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn u64(&mut self, v: u64) -> Result<(), BinError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn f64(&mut self, v: f64) -> Result<(), BinError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn str(&mut self, s: &str) -> Result<(), BinError> {
        self.u64(s.len() as u64)?;
        Ok(self.inner.write_all(s.as_bytes())?)
    }

    pub fn f64_slice(&mut self, vs: &[f64]) -> Result<(), BinError> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn u32_slice(&mut self, vs: &[u32]) -> Result<(), BinError> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.u32(v)?;
        }
        Ok(())
    }

    pub fn usize_slice(&mut self, vs: &[usize]) -> Result<(), BinError> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.u64(v as u64)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, BinError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct BinReader<R: Read> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        BinReader { inner }
    }

    pub fn expect_header(&mut self, magic: [u8; 4], version: u32) -> Result<(), BinError> {
        let mut found = [0u8; 4];
        self.inner.read_exact(&mut found)?;
        if found != magic {
            return Err(BinError::BadMagic { expected: magic });
        }
        let v = self.u32()?;
        if v != version {
            return Err(BinError::UnsupportedVersion { found: v, supported: version });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, BinError> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64, BinError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64, BinError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn str(&mut self) -> Result<String, BinError> {
        let n = self.u64()? as usize;
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| BinError::Corrupt(format!("invalid utf8: {e}")))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>, BinError> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn u32_vec(&mut self) -> Result<Vec<u32>, BinError> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u32()?);
        }
        Ok(out)
    }

    pub fn usize_vec(&mut self) -> Result<Vec<usize>, BinError> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u64()? as usize);
        }
        Ok(out)
    }
}
