//! Self-describing binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"PHTCKPT\0"
//! version u32
//! meta    u64 length + UTF-8 JSON
//! count   u32
//! tensor* u32 name length, name, u8 dtype length, dtype,
//!         u32 ndim, u64 dims..., raw values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PHTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_store(store: &ParamStore<T>, meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: store
                .iter()
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every tensor whose name starts with `prefix` into `store`.
    /// All parameters of the store under `prefix` must be present.
    pub fn load_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut loaded = 0;
        let wanted: Vec<String> = store
            .iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, n, _)| n.to_string())
            .collect();
        for name in wanted {
            let t = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            store.assign(&name, t.clone())?;
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.len() as u8);
            out.extend_from_slice(T::DTYPE.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype_len = r.take(1)?[0] as usize;
            let dtype = r.take(dtype_len)?;
            if dtype != T::DTYPE.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: dtype {} but expected {}",
                    String::from_utf8_lossy(dtype),
                    T::DTYPE
                )));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * T::BYTES)?;
            let data = raw.chunks(T::BYTES).map(T::read_le).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e3f32..1e3, 1..40), cols in 1usize..5) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let t = Tensor::new(vec![rows, cols], values[..rows * cols].to_vec()).unwrap();
            let ck = Checkpoint {
                meta: serde_json::json!({"k": 1}),
                tensors: vec![("a.w".to_string(), t), ("b".to_string(), Tensor::scalar(2.5))],
            };
            let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let ck = Checkpoint {
            meta: serde_json::Value::Null,
            tensors: vec![("x".to_string(), Tensor::<f64>::scalar(1.0))],
        };
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f64>::from_bytes(b"nonsense").is_err());
    }
}
