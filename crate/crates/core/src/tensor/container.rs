//! Portable binary array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"SNNT"
//! u32    format version (currently 1)
//! u32    metadata count, then per item: u32 name length, name bytes, u64 value
//! u32    entry count, then per entry:
//!        u32 name length, name bytes, u8 dtype tag, u32 ndim,
//!        u64 x ndim dims, raw little-endian IEEE-754 payload
//! ```
//!
//! Entries keep insertion order, so save -> load -> save is byte-identical.
//! Used for checkpoints and for static image tensors on disk.

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SNNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Entry {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.byte_size());
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        Entry {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "entry `{}` holds {} data, requested {}",
                self.name,
                self.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let size = self.dtype.byte_size();
        let data: Vec<T> = self.payload.chunks_exact(size).map(T::read_le).collect();
        Tensor::from_vec(self.shape.clone(), data)
    }
}

/// Named-array container with a small u64 metadata section.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub meta: Vec<(String, u64)>,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, name: impl Into<String>, value: u64) {
        let name = name.into();
        match self.meta.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => *v = value,
            None => self.meta.push((name, value)),
        }
    }

    pub fn get_meta(&self, name: &str) -> Option<u64> {
        self.meta.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push(Entry::from_tensor(name, t));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{}`", name)))?
            .to_tensor()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (name, value) in &self.meta {
            write_name(&mut w, name)?;
            w.write_all(&value.to_le_bytes())?;
        }
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            write_name(&mut w, &e.name)?;
            w.write_all(&[e.dtype.tag()])?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&e.payload)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a container file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {} (expected {})",
                version, FORMAT_VERSION
            )));
        }
        let mut container = Container::new();
        let meta_count = read_u32(&mut r)?;
        for _ in 0..meta_count {
            let name = read_name(&mut r)?;
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf)?;
            container.meta.push((name, u64::from_le_bytes(buf)));
        }
        let entry_count = read_u32(&mut r)?;
        for _ in 0..entry_count {
            let name = read_name(&mut r)?;
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag)?;
            let dtype = Dtype::from_tag(tag[0]).ok_or_else(|| {
                Error::Checkpoint(format!("entry `{}` has unknown dtype tag {}", name, tag[0]))
            })?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut buf = [0u8; 8];
                read_exact(&mut r, &mut buf)?;
                shape.push(u64::from_le_bytes(buf) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut payload = vec![0u8; numel * dtype.byte_size()];
            read_exact(&mut r, &mut payload)?;
            container.entries.push(Entry { name, dtype, shape, payload });
        }
        Ok(container)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_to(&mut buf)?;
        use std::io::Write as _;
        buf.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_name(w: &mut impl Write, name: &str) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Checkpoint(format!("unreasonable name length {}", len)));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("name is not valid utf-8".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {}", e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set_meta("epoch", 7);
        c.set_meta("seed", 42);
        let t = Tensor::from_vec(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        c.push_tensor("w", &t);
        c.push_tensor("b", &Tensor::<f64>::zeros(&[3]));
        c
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let c2 = Container::read_from(bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        c2.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(c2.get_meta("epoch"), Some(7));
        let t: Tensor<f64> = c2.tensor("w").unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data()[4], 5.0);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        for cut in [3, 10, bytes.len() - 1] {
            let err = Container::read_from(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "cut at {}", cut);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        bytes[4] = 99;
        let err = Container::read_from(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let mut c = Container::new();
        c.push_tensor("w", &Tensor::<f32>::zeros(&[2]));
        let err = c.tensor::<f64>("w").unwrap_err();
        assert!(err.to_string().contains("f32"));
    }
}
