//! Binary checkpoints.
//!
//! Layout, all integers little-endian `u64`:
//!
//! ```text
//! "RXFOODv1"            8-byte magic
//! len, bytes            configuration text (UTF-8)
//! repeated until EOF, in lexicographic name order:
//!   len, bytes          parameter name
//!   rank, extents...    shape
//!   f64 × numel         values, little-endian
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{contract_err, Error, Result};
use crate::params::ParamTree;
use crate::scalar::Real;
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 8] = b"RXFOODv1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: BTreeMap<String, Tensor<f64>>,
}

impl Checkpoint {
    pub fn from_params<T: Real, S: ParamTree<Tensor<T>>>(config: &str, params: &S) -> Self {
        let mut tensors = BTreeMap::new();
        params.visit("", &mut |name, t| {
            tensors.insert(name.to_string(), t.cast::<f64>());
        });
        Self {
            config: config.to_string(),
            tensors,
        }
    }

    /// Fills `template` slot by slot; names and shapes must match exactly.
    pub fn fill<T: Real, S: ParamTree<Tensor<T>>>(&self, template: &mut S) -> Result<()> {
        let mut used = 0;
        let mut failure = None;
        template.visit_mut("", &mut |name, slot| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some(t) if t.shape() == slot.shape() => {
                    *slot = t.cast();
                    used += 1;
                }
                Some(t) => {
                    failure = Some(contract_err!(
                        "checkpoint `{name}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        slot.shape()
                    ))
                }
                None => failure = Some(contract_err!("checkpoint is missing `{name}`")),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if used != self.tensors.len() {
            return Err(contract_err!(
                "checkpoint holds {} tensors, model uses {used}",
                self.tensors.len()
            ));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
        put(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        for (name, t) in &self.tensors {
            put(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put(&mut out, t.rank());
            for &e in t.shape() {
                put(&mut out, e);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.get(..8) != Some(&MAGIC[..]) {
            return Err(bad("bad magic: not an rxfood checkpoint".into()));
        }
        let mut r = Reader { bytes, pos: 8 };
        let len = r.u64().ok_or_else(|| bad("truncated config length".into()))?;
        let config = r
            .take(len)
            .and_then(|b| String::from_utf8(b.to_vec()).ok())
            .ok_or_else(|| bad("truncated or non-UTF-8 config".into()))?;
        let mut tensors = BTreeMap::new();
        while r.pos < bytes.len() {
            let name = r
                .u64()
                .and_then(|n| r.take(n))
                .and_then(|b| String::from_utf8(b.to_vec()).ok())
                .ok_or_else(|| bad("truncated parameter name".into()))?;
            let rank = r.u64().ok_or_else(|| bad(format!("`{name}`: truncated rank")))?;
            if rank == 0 || rank > MAX_RANK {
                return Err(bad(format!("`{name}`: rank {rank} is out of range")));
            }
            let shape = (0..rank)
                .map(|_| r.u64())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad(format!("`{name}`: truncated shape")))?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| bad(format!("`{name}`: implausible shape {shape:?}")))?;
            let data = r
                .take(numel * 8)
                .ok_or_else(|| bad(format!("`{name}`: truncated data")))?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(bad(format!("`{name}` appears twice")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u64(&mut self) -> Option<usize> {
        let b = self.take(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().ok()?)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualnet::{FusionMode, NetConfig, NetParams};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetConfig { image_size: 8, scales: 2, base_channels: 4, d: 4, c: 4 };
        let p = NetParams::<Tensor<f64>>::init(&cfg, FusionMode::Rxfood, 11).unwrap();
        let ck = Checkpoint::from_params("mode = rxfood\n", &p);
        let back = Checkpoint::decode(&ck.encode(), Path::new("c")).unwrap();
        assert_eq!(back, ck);
        let mut q = NetParams::<Tensor<f64>>::zeroed(&cfg, FusionMode::Rxfood).unwrap();
        back.fill(&mut q).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn magic_and_truncation_are_checked() {
        let p = crate::exchange::ExchangeParams::<Tensor<f64>>::init_identity(1).unwrap();
        let bytes = Checkpoint::from_params("", &p).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad, Path::new("c")).is_err());
        for cut in [4, 12, bytes.len() - 3] {
            assert!(Checkpoint::decode(&bytes[..cut], Path::new("c")).is_err());
        }
    }

    #[test]
    fn fill_rejects_foreign_checkpoints() {
        let cfg = NetConfig { image_size: 8, scales: 2, base_channels: 4, d: 4, c: 4 };
        let p = NetParams::<Tensor<f64>>::init(&cfg, FusionMode::None, 1).unwrap();
        let ck = Checkpoint::from_params("", &p);
        let mut other = NetParams::<Tensor<f64>>::zeroed(&cfg, FusionMode::Rxfood).unwrap();
        assert!(ck.fill(&mut other).is_err());
        let wider = NetConfig { base_channels: 8, ..cfg };
        let mut other = NetParams::<Tensor<f64>>::zeroed(&wider, FusionMode::None).unwrap();
        assert!(ck.fill(&mut other).is_err());
    }
}
