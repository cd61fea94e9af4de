//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "STBAM1"
//! u32 entry count, then per entry: u32 len + key bytes, u32 len + value bytes
//! u32 tensor count, then per tensor:
//!     u32 len + name bytes, u32 rank, u64 per dimension, f64 per value
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 6] = b"STBAM1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Echo of the run configuration (model sizes, loss settings).
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, config: BTreeMap<String, String>) -> Self {
        let tensors = store
            .entries()
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                values: e.value.as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect();
        Self { config, tensors }
    }

    /// Copy every tensor into the parameter with the same name. Names and
    /// shapes must match exactly.
    pub fn apply<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors but the model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for t in &self.tensors {
            let id = store
                .find(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no parameter named '{}'", t.name)))?;
            let values = Tensor::new(t.shape.clone(), t.values.iter().map(|&v| T::of(v)).collect())
                .map_err(|_| Error::Checkpoint(format!("tensor '{}' is inconsistent with its shape", t.name)))?;
            store.set_value(id, values)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend((s.len() as u32).to_le_bytes());
            out.extend(s.as_bytes());
        };
        out.extend((self.config.len() as u32).to_le_bytes());
        for (k, v) in &self.config {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend((t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend((d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            return Err(Error::Checkpoint("not an STBAM checkpoint".into()));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let mut config = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            config.insert(k, v);
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 2 {
                return Err(Error::Checkpoint(format!("tensor '{name}' has unsupported rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= (bytes.len() - r.pos) / 8)
                .ok_or_else(|| Error::Checkpoint(format!("truncated checkpoint: tensor '{name}' shape {shape:?}")))?;
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read checkpoint: {e}")))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let s = self
            .bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos)))?;
        self.pos += len;
        String::from_utf8(s.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 in checkpoint".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(&[2, 2], &[1.5, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap())
            .unwrap();
        s.add("b", Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap()).unwrap();
        s
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let mut cfg = BTreeMap::new();
        cfg.insert("n".to_string(), "6".to_string());
        let c = Checkpoint::from_store(&store(), cfg);
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let mut target = store();
        target.value_mut(target.find("w").unwrap()).as_mut_slice().fill(0.0);
        back.apply(&mut target).unwrap();
        let w = target.value(target.find("w").unwrap());
        assert_eq!(w.as_slice()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(w.as_slice()[3], 1e300);
    }

    #[test]
    fn bad_magic() {
        let e = Checkpoint::from_bytes(b"PNG....").unwrap_err();
        assert!(e.to_string().contains("not an STBAM checkpoint"));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = Checkpoint::from_store(&store(), BTreeMap::new()).to_bytes();
        for cut in [7, 12, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let c = Checkpoint::from_store(&store(), BTreeMap::new());
        let mut other = ParamStore::<f64>::new();
        other.add("w", Tensor::zeros(&[3, 3])).unwrap();
        other.add("b", Tensor::zeros(&[3])).unwrap();
        let e = c.apply(&mut other).unwrap_err();
        assert!(e.to_string().contains("tensor 'w'"), "{e}");
        assert!(matches!(e, Error::Checkpoint(_)));
    }
}
