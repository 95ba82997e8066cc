use std::collections::HashMap;

use super::CodecError;
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"CTXC";
const VERSION: u32 = 1;
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of uniquely named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

fn bad(msg: impl Into<String>) -> CodecError {
    CodecError::Container(msg.into())
}

fn element_count(dims: &[usize]) -> Option<usize> {
    let mut n: u64 = 1;
    for &d in dims {
        n = n.checked_mul(d as u64)?;
        if n > MAX_ELEMENTS {
            return None;
        }
    }
    Some(n as usize)
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<(), CodecError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(bad(format!("duplicate entry \"{name}\"")));
        }
        if name.len() > u16::MAX as usize {
            return Err(bad("entry name too long"));
        }
        if dims.len() > u32::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(bad(format!("entry \"{name}\" has unrepresentable dims")));
        }
        let n = element_count(&dims).ok_or_else(|| bad(format!("entry \"{name}\" exceeds 2^31 elements")))?;
        if n != data.len() {
            return Err(bad(format!("entry \"{name}\" has dims {dims:?} but {} values", data.len())));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, dims, data });
        Ok(())
    }

    pub fn push_tensor<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<(), CodecError> {
        let data = t.data().iter().map(|v| v.as_f64() as f32).collect();
        self.push(name, t.shape().to_vec(), data)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Entry `name` as a tensor, checked against `shape` when given.
    pub fn tensor<T: Real>(&self, name: &str, shape: Option<&[usize]>) -> Result<Tensor<T>, CodecError> {
        let e = self.get(name).ok_or_else(|| bad(format!("missing entry \"{name}\"")))?;
        if let Some(s) = shape {
            if e.dims != s {
                return Err(bad(format!("entry \"{name}\" has dims {:?}, expected {s:?}", e.dims)));
            }
        }
        Tensor::new(e.dims.clone(), e.data.iter().map(|&v| T::of(v as f64)).collect())
            .map_err(|err| bad(format!("entry \"{name}\": {err}")))
    }

    /// Flat values of entry `name`, which must hold exactly `len` values.
    pub fn values(&self, name: &str, len: usize) -> Result<&[f32], CodecError> {
        let e = self.get(name).ok_or_else(|| bad(format!("missing entry \"{name}\"")))?;
        if e.data.len() != len {
            return Err(bad(format!("entry \"{name}\" has {} values, expected {len}", e.data.len())));
        }
        Ok(&e.data)
    }
}

pub fn write_container(c: &TensorContainer) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(c.len()).map_err(|_| bad("too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in c.entries() {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.bytes.len() - self.pos < n {
            return Err(bad(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<TensorContainer, CodecError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut c = TensorContainer::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| bad("entry name is not UTF-8"))?.to_owned();
        let rank = r.u32("rank")? as usize;
        if rank > (bytes.len() - r.pos) / 4 {
            return Err(bad(format!("truncated dims of \"{name}\"")));
        }
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = element_count(&dims).ok_or_else(|| bad(format!("entry \"{name}\" exceeds 2^31 elements")))?;
        let payload = r.take(n * 4, "payload")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        c.push(name, dims, data)?;
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(c)
}
