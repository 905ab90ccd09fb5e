//! Model weight file.
//!
//! Layout: magic `LVCM`, u32 version, u32 arch-descriptor length followed by
//! that many bytes of UTF-8 JSON, then tensor records until EOF. Each record
//! is u32 name length, name bytes, u8 rank, u32 dims, raw little-endian f64
//! payload. Round trips are bit-exact.

use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LVCM";
const VERSION: u32 = 1;

/// A parsed model file: the architecture descriptor JSON plus weights.
pub struct ModelFile {
    pub arch_json: String,
    pub params: ParamStore,
}

pub fn save_model(path: &Path, arch_json: &str, params: &ParamStore) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let aj = arch_json.as_bytes();
    w.write_all(&(aj.len() as u32).to_le_bytes())?;
    w.write_all(aj)?;
    for (name, t) in params.iter() {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path)?;
    parse_model(&bytes)
}

pub fn parse_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Cursor { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::header("bad model magic, expected LVCM"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::header(format!("unsupported model version {version}")));
    }
    let alen = r.u32()? as usize;
    let arch_json = String::from_utf8(r.take(alen)?.to_vec())
        .map_err(|_| Error::header("arch descriptor is not UTF-8"))?;
    let mut params = ParamStore::new();
    while !r.at_end() {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::header("tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(ModelFile { arch_json, params })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::header("truncated model file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}
