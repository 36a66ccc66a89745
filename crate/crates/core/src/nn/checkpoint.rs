//! Binary tensor container.
//!
//! Layout, all integers little-endian: `b"STDL"`, `u32` format version,
//! `u64` entry count, then per entry `u64` name length, UTF-8 name, `u8`
//! dtype tag, `u64` rank, `rank x u64` dims, raw little-endian data.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    /// Opaque bytes, used for UTF-8 text such as the run configuration.
    U8 = 2,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

/// Ordered list of named arrays. Entry order is preserved, so
/// save -> load -> save is byte-identical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        dims: Vec<usize>,
        payload: Payload,
    ) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
        }
        if dims.iter().product::<usize>() != payload.len() {
            return Err(Error::Checkpoint(format!(
                "entry `{name}`: dims {dims:?} do not match data"
            )));
        }
        self.entries.push(Entry {
            name,
            dims,
            payload,
        });
        Ok(())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let n = values.len();
        self.push(name, vec![n], Payload::F64(values))
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: &str) -> Result<()> {
        let bytes = text.as_bytes().to_vec();
        self.push(name, vec![bytes.len()], Payload::U8(bytes))
    }

    /// Adds every parameter as `"{prefix}/{name}"`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        for p in store.iter() {
            self.push(
                format!("{prefix}/{}", p.name),
                p.shape.clone(),
                Payload::F64(p.data.clone()),
            )?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    }

    /// Reads an entry as f64, widening f32 data.
    pub fn get_f64(&self, name: &str) -> Result<Vec<f64>> {
        match &self.get(name)?.payload {
            Payload::F64(v) => Ok(v.clone()),
            Payload::F32(v) => Ok(v.iter().map(|x| f64::from(*x)).collect()),
            Payload::U8(_) => Err(Error::Checkpoint(format!("entry `{name}` is not numeric"))),
        }
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        match self.get_f64(name)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Checkpoint(format!("entry `{name}` is not a scalar"))),
        }
    }

    pub fn get_text(&self, name: &str) -> Result<String> {
        match &self.get(name)?.payload {
            Payload::U8(b) => String::from_utf8(b.clone())
                .map_err(|_| Error::Checkpoint(format!("entry `{name}` is not UTF-8"))),
            _ => Err(Error::Checkpoint(format!("entry `{name}` is not text"))),
        }
    }

    /// Overwrites `store` from `"{prefix}/{name}"` entries, checking shapes.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let key = format!("{prefix}/{}", p.name);
            let entry = self.get(&key)?;
            if entry.dims != p.shape {
                return Err(Error::Checkpoint(format!(
                    "entry `{key}` has shape {:?}, expected {:?}",
                    entry.dims, p.shape
                )));
            }
            p.data = self.get_f64(&key)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u64).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.dtype() as u8);
            out.extend_from_slice(&(e.dims.len() as u64).to_le_bytes());
            for d in &e.dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let count = r.usize()?;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let len = r.usize()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_owned();
            let dtype = DType::from_tag(r.take(1)?[0])?;
            let rank = r.usize()?;
            let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::Checkpoint(format!("entry `{name}` is too large")))?;
            let raw = r.take(
                n.checked_mul(dtype.width())
                    .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            )?;
            let payload = match dtype {
                DType::F32 => Payload::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                DType::F64 => Payload::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                DType::U8 => Payload::U8(raw.to_vec()),
            };
            ckpt.push(name, dims, payload)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(ckpt)
    }

    /// Writes via a temporary sibling and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store
            .push("l0.w", vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 3.0])
            .unwrap();
        let mut c = Checkpoint::new();
        c.push_store("theta", &store).unwrap();
        c.push("half", vec![3], Payload::F32(vec![0.5, -1.0, 2.0]))
            .unwrap();
        c.push_f64("iteration", vec![42.0]).unwrap();
        c.push_text("config", "[distill]\nrho = 0.8\n").unwrap();
        c
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"STDL");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 4);
        let name_len = u64::from_le_bytes(b[16..24].try_into().unwrap()) as usize;
        assert_eq!(&b[24..24 + name_len], b"theta/l0.w");
        assert_eq!(b[24 + name_len], 1);
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let b = c.to_bytes();
        let back = Checkpoint::from_bytes(&b).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), b);
        assert_eq!(back.get_scalar("iteration").unwrap(), 42.0);
        assert_eq!(back.get_text("config").unwrap(), "[distill]\nrho = 0.8\n");
        assert_eq!(back.get_f64("half").unwrap(), vec![0.5, -1.0, 2.0]);
        let mut store = ParamStore::new();
        store.push("l0.w", vec![2, 2], vec![0.0; 4]).unwrap();
        back.load_store("theta", &mut store).unwrap();
        assert_eq!(store.get(0).data[2], f64::MIN_POSITIVE);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let b = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = b.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut version = b;
        version[4] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
        let mut c = Checkpoint::new();
        assert!(c.push("x", vec![2], Payload::F64(vec![1.0])).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.stdl");
        sample().save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let path2 = dir.path().join("b.stdl");
        loaded.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }
}
