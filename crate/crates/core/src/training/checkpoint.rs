//! Binary checkpoint container.
//!
//! Layout: magic `PYRPIX01`; `u32` length + UTF-8 config echo; `u32` record
//! count; per record `u32` name length, name, dtype tag `u8`, `u32` rank,
//! `u64` extents, little-endian payload; trailing CRC32 (IEEE) of everything
//! before it. All integers are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Factor;
use crate::nn::ParamSet;
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 8] = b"PYRPIX01";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub records: Vec<Record>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
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
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self {
            config: config.into(),
            records: Vec::new(),
        }
    }

    pub fn push_tensor<T: Element>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        self.records.push(Record {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        });
    }

    pub fn push_params<T: Element>(&mut self, prefix: &str, params: &ParamSet<T>) {
        for (name, t) in params.iter() {
            self.push_tensor(format!("{prefix}{name}"), t);
        }
    }

    /// Stores a factor's autoregressive net under `{prefix}` and its embedding
    /// net under `{embed_prefix}`.
    pub fn push_factor<T: Element>(&mut self, prefix: &str, embed_prefix: &str, factor: &Factor<T>) {
        self.push_params(prefix, factor.net.params());
        if let Some(e) = &factor.embed {
            self.push_params(embed_prefix, e.params());
        }
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        let r = self.record(name).ok_or_else(|| bad(format!("missing record {name}")))?;
        if r.dtype != T::DTYPE {
            return Err(bad(format!("record {name} is {:?}, expected {:?}", r.dtype, T::DTYPE)));
        }
        let data = r.payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
        Tensor::new(r.shape.clone(), data)
    }

    /// Fills `params` from the records named `{prefix}{param name}`.
    pub fn load_params<T: Element>(&self, prefix: &str, params: &ParamSet<T>) -> Result<ParamSet<T>> {
        let mut out = ParamSet::default();
        for (name, _) in params.iter() {
            out.add(name.to_string(), self.tensor(&format!("{prefix}{name}"))?);
        }
        Ok(out)
    }

    pub fn load_factor<T: Element>(&self, prefix: &str, embed_prefix: &str, factor: &mut Factor<T>) -> Result<()> {
        let net = self.load_params(prefix, factor.net.params())?;
        factor.net.load_params(&net)?;
        if let Some(e) = factor.embed.as_mut() {
            let p = self.load_params(embed_prefix, e.params())?;
            e.load_params(&p)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.dtype.tag());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&r.payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(bad(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len(),
        };
        let config = r.string()?;
        let count = r.u32()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| bad(format!("record {name}: unknown dtype tag {tag}")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| bad(format!("record {name}: size overflow")))?;
            let payload = r.take(numel)?.to_vec();
            records.push(Record {
                name,
                dtype,
                shape,
                payload,
            });
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { config, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, FactorKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("a=1\nb=two\n");
        c.push_tensor(
            "w",
            &Tensor::<f32>::new(vec![2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25]).unwrap(),
        );
        c.push_tensor("d", &Tensor::<f64>::new(vec![3], vec![0.1, 1e300, -2.0]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], b"PYRPIX01");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let w: Tensor<f32> = back.tensor("w").unwrap();
        assert_eq!(w.data()[1].to_bits(), (-0.0f32).to_bits());
        assert!(back.tensor::<f32>("d").is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"PYRPIX00xxxx").is_err());
        let good = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 9]).is_err());
    }

    #[test]
    fn factor_round_trip() {
        let arch = ArchConfig {
            filters: 4,
            embed_filters: 4,
            components: 2,
            ..ArchConfig::default()
        };
        let f = Factor::<f32>::new(FactorKind::ColorFromGray, &arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut c = Checkpoint::new("");
        c.push_factor("cond_model.", "embed_net.", &f);
        let mut g = Factor::<f32>::uninitialized(FactorKind::ColorFromGray, &arch).unwrap();
        assert!(!g.is_initialized());
        c.load_factor("cond_model.", "embed_net.", &mut g).unwrap();
        assert!(g.is_initialized());
        assert_eq!(g.net.params().tensors(), f.net.params().tensors());
        assert_eq!(
            g.embed.as_ref().unwrap().params().tensors(),
            f.embed.as_ref().unwrap().params().tensors()
        );
        let mut other = Checkpoint::new("");
        other.push_factor("cond_model.", "embed_net.", &g);
        assert_eq!(other.to_bytes(), c.to_bytes());

        let wide = ArchConfig { filters: 8, ..arch };
        let mut h = Factor::<f32>::uninitialized(FactorKind::ColorFromGray, &wide).unwrap();
        assert!(c.load_factor("cond_model.", "embed_net.", &mut h).is_err());
    }
}
