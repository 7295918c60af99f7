//! Named-tensor checkpoint archive.
//!
//! Layout (integers little-endian):
//! magic "MMCK" | version u32 | meta_len u32 | meta TOML (epoch, step,
//! config echo) | tensor count u32 | per tensor: name_len u32, UTF-8 name,
//! rank u32, dims u32[rank], f32 LE payload.
//!
//! Tensors are the parameters in store order followed by the AdamW moments
//! as `opt.m.<name>` / `opt.v.<name>`; a save -> load round trip resumes
//! training bit-exactly.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::train::{AdamW, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    epoch: usize,
    step: u64,
    config: TrainConfig,
}

/// Parsed checkpoint contents.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub tensors: HashMap<String, Tensor<f32>>,
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    epoch: usize,
    store: &ParamStore<f32>,
    opt: &AdamW<f32>,
) -> Result<()> {
    let meta = toml::to_string(&Meta {
        epoch,
        step: opt.step,
        config: cfg.clone(),
    })
    .expect("meta serializes");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    bytes.extend_from_slice(meta.as_bytes());
    let count = store.len() * 3;
    bytes.extend_from_slice(&(count as u32).to_le_bytes());
    let mut write_tensor = |name: &str, t: &Tensor<f32>| {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    for i in 0..store.len() {
        write_tensor(store.name(i), store.tensor(i));
    }
    for i in 0..store.len() {
        write_tensor(&format!("opt.m.{}", store.name(i)), &opt.m[i]);
    }
    for i in 0..store.len() {
        write_tensor(&format!("opt.v.{}", store.name(i)), &opt.v[i]);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: n,
                found: self.bytes.len() - self.pos,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic: [u8; 4] = c.take(4)?.try_into().expect("4");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let meta_len = c.u32()? as usize;
    let meta_bytes = c.take(meta_len)?;
    let meta: Meta = toml::from_str(
        std::str::from_utf8(meta_bytes)
            .map_err(|e| Error::Config(format!("checkpoint meta: {e}")))?,
    )
    .map_err(|e| Error::Config(format!("checkpoint meta: {e}")))?;
    let count = c.u32()? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::Config(format!("checkpoint tensor name: {e}")))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = c.take(numel * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4")))
            .collect();
        tensors.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(Checkpoint {
        config: meta.config,
        epoch: meta.epoch,
        step: meta.step,
        tensors,
    })
}

impl Checkpoint {
    fn take_shaped(&self, name: &str, expected: &[usize]) -> Result<Tensor<f32>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::TensorShape {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: vec![],
            })?;
        if t.shape() != expected {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    /// Restores parameters and optimizer state, validating every tensor
    /// shape against the live model.
    pub fn restore_into(&self, store: &mut ParamStore<f32>, opt: &mut AdamW<f32>) -> Result<()> {
        for i in 0..store.len() {
            let name = store.name(i).to_string();
            let shape = store.tensor(i).shape().to_vec();
            store.set_tensor(i, self.take_shaped(&name, &shape)?);
            opt.m[i] = self.take_shaped(&format!("opt.m.{name}"), &shape)?;
            opt.v[i] = self.take_shaped(&format!("opt.v.{name}"), &shape)?;
        }
        opt.step = self.step;
        Ok(())
    }
}
