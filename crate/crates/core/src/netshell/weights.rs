use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Matrix};

const MAGIC: &[u8; 4] = b"NSW1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named tensors in the `NSW1` manifest format: magic, u32 entry count, then
/// per entry u32 name length, UTF-8 name, u32 rank, u32 dims and
/// little-endian f32 values. Entries are written in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, WeightEntry>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!("{name}: dims {dims:?} hold {} values", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                index: i,
                msg: format!("{name} has a non-finite value"),
            });
        }
        self.entries.insert(name, WeightEntry { dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&WeightEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::format(format!("missing weight {name}")))
    }

    /// Entry data after checking its dims.
    pub fn expect(&self, name: &str, dims: &[usize]) -> Result<&[f64]> {
        let e = self.get(name)?;
        if e.dims != dims {
            return Err(Error::shape(format!("{name}: expected dims {dims:?}, found {:?}", e.dims)));
        }
        Ok(&e.data)
    }

    pub fn put_matrix(&mut self, name: &str, m: &Matrix) -> Result<()> {
        self.insert(name, vec![m.rows, m.cols], m.data.clone())
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let e = self.get(name)?;
        match e.dims.as_slice() {
            &[r, c] => Matrix::from_vec(r, c, e.data.clone()),
            other => Err(Error::shape(format!("{name}: expected a matrix, found dims {other:?}"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.get(name)?;
        if e.dims.len() != 1 {
            return Err(Error::shape(format!("{name}: expected a vector, found dims {:?}", e.dims)));
        }
        Ok(e.data.clone())
    }

    pub fn put_conv(&mut self, prefix: &str, c: &Conv2d) -> Result<()> {
        self.insert(
            format!("{prefix}.weight"),
            vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
            c.weight.clone(),
        )?;
        self.insert(format!("{prefix}.bias"), vec![c.out_channels], c.bias.clone())
    }

    pub fn conv(&self, prefix: &str) -> Result<Conv2d> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let &[o, i, k, k2] = w.dims.as_slice() else {
            return Err(Error::shape(format!("{prefix}.weight must be rank 4, found {:?}", w.dims)));
        };
        if k != k2 {
            return Err(Error::shape(format!("{prefix}.weight kernel {k}x{k2} is not square")));
        }
        let b = self.expect(&format!("{prefix}.bias"), &[o])?;
        Conv2d::from_parts(o, i, k, w.data.clone(), b.to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for d in &e.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let truncated = |what: &str| Error::format(format!("weight manifest truncated in {what}"));
        let u32_at = |bytes: &mut &[u8], what: &str| -> Result<u32> {
            let mut b = [0u8; 4];
            bytes.read_exact(&mut b).map_err(|_| truncated(what))?;
            Ok(u32::from_le_bytes(b))
        };
        let mut magic = [0u8; 4];
        bytes.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
        if &magic != MAGIC {
            return Err(Error::format("bad weight manifest magic (expected NSW1)"));
        }
        let count = u32_at(&mut bytes, "entry count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let len = u32_at(&mut bytes, "name length")? as usize;
            if bytes.len() < len {
                return Err(truncated("name"));
            }
            let name = std::str::from_utf8(&bytes[..len])
                .map_err(|_| Error::format("weight name is not UTF-8"))?
                .to_string();
            bytes = &bytes[len..];
            let rank = u32_at(&mut bytes, "rank")? as usize;
            if rank > 8 {
                return Err(Error::format(format!("{name}: rank {rank} too large")));
            }
            let dims = (0..rank)
                .map(|_| u32_at(&mut bytes, "dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if bytes.len() < 4 * n {
                return Err(truncated(&name));
            }
            let data = bytes[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            bytes = &bytes[4 * n..];
            store.insert(name, dims, data)?;
        }
        if !bytes.is_empty() {
            return Err(Error::format(format!("{} trailing bytes after weight manifest", bytes.len())));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copy with every value rounded to f32, as a save/load round trip would.
    pub fn quantized(&self) -> Self {
        let mut s = self.clone();
        for e in s.entries.values_mut() {
            e.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        s
    }
}
