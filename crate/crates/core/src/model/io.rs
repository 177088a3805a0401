//! Little-endian binary encoding shared by checkpoints and named-tensor files.

use std::path::{Path, PathBuf};

use crate::tensorcore::Tensor;
use crate::{Error, Result};

pub const NAMED_TENSORS_MAGIC: &[u8; 8] = b"RCGNTENS";

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn payload(&mut self, t: &Tensor<f32>) {
        for v in t.data() {
            self.bytes(&v.to_le_bytes());
        }
    }

    /// Name, rank, extents, then the f32 payload.
    pub fn named_tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.str(name);
        self.u32(t.rank() as u32);
        for &e in t.shape() {
            self.u32(e as u32);
        }
        self.payload(t);
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Self {
        Reader {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn fail(&self, detail: impl Into<String>) -> Error {
        Error::format(&self.path, detail)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: needed {n} bytes at offset {}, {} remain",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.fail("invalid UTF-8 in string"))
    }

    pub fn payload(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.fail("tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| self.fail(e.to_string()))
    }

    pub fn named_tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(self.fail(format!("tensor {name}: unsupported rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let t = self.payload(&shape)?;
        Ok((name, t))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write `RCGNTENS`, a u32 count, then each named tensor.
pub fn write_named_tensors<'a>(path: &Path, entries: impl Iterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
    let entries: Vec<_> = entries.collect();
    let mut w = Writer::default();
    w.bytes(NAMED_TENSORS_MAGIC);
    w.u32(entries.len() as u32);
    for (name, t) in entries {
        w.named_tensor(name, t);
    }
    write_file(path, &w.buf)
}

pub fn read_named_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    if r.take(8)? != NAMED_TENSORS_MAGIC {
        return Err(r.fail("bad magic, not a named-tensor file"));
    }
    let n = r.u32()? as usize;
    let entries = (0..n).map(|_| r.named_tensor()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(entries)
}
