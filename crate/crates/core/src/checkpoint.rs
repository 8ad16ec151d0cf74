//! Checkpoints of trainable parameters.
//!
//! Frozen weights are rebuilt from the seeds in the embedded configuration,
//! so only trainable tensors are stored.
//!
//! ```text
//! magic "SRCK" | version u32 | config_len u64 | config text (UTF-8)
//! n_params u64 | per param:
//!   name_len u32 | name | ndim u32 | dims u32 × ndim | data f64 × product(dims)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::autograd::Tensor;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NDIM: usize = 4;

/// Decoded checkpoint contents, not yet bound to a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(config: &RunConfig, model: &Model) -> Self {
        let params = model
            .store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        Self {
            config_text: config.to_text(),
            params,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let clen = r.u64()?;
        let config_text = std::str::from_utf8(r.take(clen)?)
            .map_err(|_| bad("configuration is not UTF-8"))?
            .to_string();
        let n = r.u64()?;
        let mut params = BTreeMap::new();
        for _ in 0..n {
            let nlen = r.u32()?;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| bad("parameter name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()?;
            if ndim == 0 || ndim > MAX_NDIM {
                return Err(bad(format!("`{name}` has {ndim} dimensions")));
            }
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l > 0 && l.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| bad(format!("`{name}` has shape {shape:?} beyond the file")))?;
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            if params.insert(name.clone(), t).is_some() {
                return Err(bad(format!("duplicate parameter `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config_text, params })
    }

    /// Rebuilds the model from the embedded configuration and loads the
    /// stored tensors. The stored set must match the trainable set exactly.
    pub fn restore(&self) -> Result<(RunConfig, Model)> {
        let cfg = RunConfig::parse(&self.config_text)?;
        cfg.validate()?;
        let mut model = Model::build(cfg.model_config()?)?;
        let trainable: Vec<_> = model
            .store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, p)| (id, p.name.clone()))
            .collect();
        if trainable.len() != self.params.len() {
            return Err(bad(format!(
                "checkpoint holds {} tensors but the model trains {}",
                self.params.len(),
                trainable.len()
            )));
        }
        for (id, name) in trainable {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| bad(format!("missing parameter `{name}`")))?;
            model.store.set_value(id, t.clone()).map_err(|e| bad(format!("`{name}`: {e}")))?;
        }
        Ok((cfg, model))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| bad(format!("length {v} overflows")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::RegimeKind;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "vision.layers=2",
            "language.layers=2",
            "adapter.vision_positions=1,2",
            "adapter.language_positions=1,2",
        ])
        .unwrap();
        c
    }

    #[test]
    fn round_trip_restores_trainable_tensors() {
        let cfg = small_config();
        let mut model = Model::build(cfg.model_config().unwrap()).unwrap();
        let id = model.store.id("head.out.bias").unwrap();
        model.store.set_value(id, Tensor::vector(vec![0.1, -0.2, 0.3, 1e-300]).unwrap()).unwrap();
        let ck = Checkpoint::from_model(&cfg, &model);
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        let (cfg2, restored) = back.restore().unwrap();
        assert_eq!(cfg2, cfg);
        for ((_, a), (_, b)) in model.store.iter().zip(restored.store.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.bit_eq(&b.value), "{}", a.name);
        }
        assert!(ck.params.keys().all(|k| !k.starts_with("vision.") && !k.starts_with("language.")));
    }

    #[test]
    fn mismatched_or_corrupt_checkpoints_fail() {
        let cfg = small_config();
        let model = Model::build(cfg.model_config().unwrap()).unwrap();
        let mut ck = Checkpoint::from_model(&cfg, &model);
        let bytes = ck.encode();
        for cut in [0, 5, 20, bytes.len() - 3] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Format { .. })));
        }
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(Checkpoint::decode(&extra).is_err());
        // A config for another regime expects a different trainable set.
        let mut other = cfg.clone();
        other.model.regime = RegimeKind::FrozenVlOnly;
        ck.config_text = other.to_text();
        assert!(ck.restore().is_err());
    }
}
