//! Binary checkpoint container.
//!
//! ```text
//! "GRNETCKP"            8-byte magic
//! u32 version           currently 1
//! block*                until end of file
//!
//! block:  [u8; 4] tag, u64 payload length, payload
//!   CONF  model configuration, JSON
//!   WGHT  stream weights: f64 α₁, α₂, f64 L₁, L₂, u64 epoch
//!   NORM  per stream (spatial, residual): u32 channels, f64 means, f64 stds
//!   TENS  u32 count, then per tensor: u16 name length, UTF-8 name,
//!         u8 rank, u32 dims, f64 values (row-major)
//!   HIST  training history, JSON
//! ```
//!
//! Integers and floats are little-endian. Unknown block tags are skipped.

use std::fs;
use std::path::Path;

use super::{ChannelStats, EpochRecord, GrNet, InputNorm, ModelConfig};
use crate::afm::StreamWeights;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained model plus its per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GrNet,
    pub history: Vec<EpochRecord>,
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(v).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn block(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        block(&mut out, b"CONF", &to_json(&m.config)?);

        let mut w = Vec::new();
        put_f64s(&mut w, &m.weights.alpha);
        put_f64s(&mut w, &m.weights.losses);
        w.extend_from_slice(&(m.weights.epoch as u64).to_le_bytes());
        block(&mut out, b"WGHT", &w);

        let mut n = Vec::new();
        for s in [&m.norm.rgb, &m.norm.gr] {
            n.extend_from_slice(&(s.mean.len() as u32).to_le_bytes());
            put_f64s(&mut n, &s.mean);
            put_f64s(&mut n, &s.std);
        }
        block(&mut out, b"NORM", &n);

        let mut t = Vec::new();
        let names = m.parameter_names();
        t.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for (name, tensor) in names.iter().zip(m.parameters()) {
            t.extend_from_slice(&(name.len() as u16).to_le_bytes());
            t.extend_from_slice(name.as_bytes());
            t.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                t.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f64s(&mut t, tensor.data());
        }
        block(&mut out, b"TENS", &t);
        block(&mut out, b"HIST", &to_json(&self.history)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let (mut config, mut weights, mut norm, mut tensors, mut history) =
            (None, None, None, None, None);
        while !r.done() {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            let mut p = Reader { buf: payload, pos: 0 };
            let bad_json = |e: serde_json::Error| Error::Checkpoint(e.to_string());
            match &tag {
                b"CONF" => {
                    config = Some(serde_json::from_slice::<ModelConfig>(payload).map_err(bad_json)?)
                }
                b"WGHT" => {
                    weights = Some(StreamWeights {
                        alpha: [p.f64()?, p.f64()?],
                        losses: [p.f64()?, p.f64()?],
                        epoch: p.u64()? as usize,
                    })
                }
                b"NORM" => {
                    let mut stats = Vec::new();
                    for _ in 0..2 {
                        let c = p.u32()? as usize;
                        stats.push(ChannelStats {
                            mean: p.f64s(c)?,
                            std: p.f64s(c)?,
                        });
                    }
                    let gr = stats.pop().unwrap();
                    let rgb = stats.pop().unwrap();
                    norm = Some(InputNorm { rgb, gr });
                }
                b"TENS" => {
                    let count = p.u32()? as usize;
                    let mut list = Vec::with_capacity(count);
                    for _ in 0..count {
                        let nlen = p.u16()? as usize;
                        let name = String::from_utf8(p.take(nlen)?.to_vec())
                            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
                        let rank = p.u8()? as usize;
                        let shape = (0..rank)
                            .map(|_| p.u32().map(|d| d as usize))
                            .collect::<Result<Vec<_>>>()?;
                        let numel = shape.iter().product();
                        list.push((name, Tensor::new(&shape, p.f64s(numel)?)?));
                    }
                    tensors = Some(list);
                }
                b"HIST" => {
                    history = Some(
                        serde_json::from_slice::<Vec<EpochRecord>>(payload).map_err(bad_json)?,
                    )
                }
                _ => {}
            }
        }
        let missing = |what: &str| Error::Checkpoint(format!("missing {what} block"));
        let config = config.ok_or_else(|| missing("CONF"))?;
        let tensors = tensors.ok_or_else(|| missing("TENS"))?;
        let mut model = GrNet::new(config)?;
        let names = model.parameter_names();
        if names.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                tensors.len(),
                names.len()
            )));
        }
        for ((want, slot), (name, tensor)) in names.iter().zip(model.parameters_mut()).zip(tensors) {
            if *want != name || slot.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match {want} {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        model.weights = weights.ok_or_else(|| missing("WGHT"))?;
        model.norm = norm.ok_or_else(|| missing("NORM"))?;
        Ok(Checkpoint {
            model,
            history: history.unwrap_or_default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
