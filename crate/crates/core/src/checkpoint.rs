//! Self-describing binary checkpoint: config echo, vocabulary and every
//! parameter. The byte layout is described in `docs/checkpoint-format.md`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::{Group, ParamStore};
use crate::tensor::Tensor;
use crate::text::Vocab;

pub const MAGIC: &[u8; 8] = b"MISDCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub params: Vec<SavedParam>,
}

impl TrainConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            width: self.width,
            gate: self.gate,
            infonce: self.infonce,
            variant: self.variant,
        }
    }
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, vocab: &Vocab, store: &ParamStore) -> Self {
        Self {
            config: config.clone(),
            vocab: vocab.clone(),
            params: store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Copies saved values into a store with the same parameter layout.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for sp in &self.params {
            let id = store
                .find(&sp.name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{}'", sp.name)))?;
            let p = store.get_mut(id);
            if p.group != sp.group || p.value.shape() != sp.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter '{}': saved {} {:?}, model {} {:?}",
                    sp.name,
                    sp.group,
                    sp.value.shape(),
                    p.group,
                    p.value.shape()
                )));
            }
            p.value = sp.value.clone();
        }
        Ok(())
    }

    /// Rebuilds the model this checkpoint was taken from.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(
            self.config.model_config(self.vocab.len()),
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        self.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.vocab.min_count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for t in self.vocab.tokens() {
            put_str(&mut out, t);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.push(p.group.tag());
            put_str(&mut out, &p.name);
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let cfg_len = r.u64()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|e| e.to_string())?;
        let config = TrainConfig::parse(cfg_text).map_err(|e| e.to_string())?;
        let min_count = r.u64()? as usize;
        let n_tokens = r.u32()? as usize;
        let tokens = (0..n_tokens)
            .map(|_| r.string())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let vocab = Vocab::from_tokens(tokens, min_count).map_err(|e| e.to_string())?;
        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let tag = r.take(1)?[0];
            let group = Group::from_tag(tag).ok_or_else(|| format!("bad group tag {tag}"))?;
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            let value = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            params.push(SavedParam { name, group, value });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { config, vocab, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}
