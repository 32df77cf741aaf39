//! Checkpoint container.
//!
//! ```text
//! magic "DTMAPFCK" (8) | version u32 | scalar bytes u8
//! header length u64 | header JSON (configs, counters, generator state)
//! tensor count u32, then per tensor: name length u16 | name | rank u8 | dims u32...
//! parameter values, first moments, second moments (layout order)
//! SHA-256 of everything above (32)
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DTConfig;
use crate::error::ModelError;
use crate::model::Model;
use crate::params::{Layout, Params};
use crate::scalar::Scalar;
use crate::train::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"DTMAPFCK";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: DTConfig,
    train: TrainConfig,
    step: u64,
    batches: u64,
    rng: ChaCha8Rng,
    running_loss_bits: u64,
    running_accuracy_bits: u64,
}

pub fn encode_checkpoint<F: Scalar>(state: &TrainState<F>) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(F::BYTES);
    let header = serde_json::to_vec(&Header {
        config: state.model.config.clone(),
        train: state.train.clone(),
        step: state.step,
        batches: state.batches,
        rng: state.rng.clone(),
        running_loss_bits: state.running_loss.to_bits(),
        running_accuracy_bits: state.running_accuracy.to_bits(),
    })?;
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let layout = state.model.layout();
    out.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
    for t in &layout.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    for p in [&state.model.params, &state.m, &state.v] {
        for x in &p.data {
            x.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. With `expected`, the stored tensor table must match
/// the layout of that config.
pub fn decode_checkpoint<F: Scalar>(
    bytes: &[u8],
    expected: Option<&DTConfig>,
) -> Result<TrainState<F>, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.into());
    if bytes.len() < MAGIC.len() + 32 {
        return Err(bad("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (corrupted file)"));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "version {version}, this build reads {VERSION}"
        )));
    }
    let width = r.u8()?;
    if width != F::BYTES {
        return Err(ModelError::Checkpoint(format!(
            "stored with {width}-byte scalars, loading as {}-byte",
            F::BYTES
        )));
    }
    let hlen = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    header.config.validate()?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        table.push((name, shape));
    }
    let reference = expected.unwrap_or(&header.config);
    let layout = Layout::new(reference);
    check_table(&layout, &table)?;
    if expected.is_some_and(|e| *e != header.config) {
        return Err(ModelError::Shape(
            "checkpoint config differs from the expected config".into(),
        ));
    }
    let layout = std::sync::Arc::new(layout);
    let mut read = || -> Result<Params<F>, ModelError> {
        let raw = r.take(layout.total * F::BYTES as usize)?;
        Ok(Params {
            layout: layout.clone(),
            data: raw.chunks_exact(F::BYTES as usize).map(F::read_le).collect(),
        })
    };
    let params = read()?;
    let m = read()?;
    let v = read()?;
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(TrainState {
        model: Model::from_params(header.config, params)?,
        train: header.train,
        m,
        v,
        step: header.step,
        batches: header.batches,
        rng: header.rng,
        running_loss: f64::from_bits(header.running_loss_bits),
        running_accuracy: f64::from_bits(header.running_accuracy_bits),
    })
}

fn check_table(layout: &Layout, table: &[(String, Vec<usize>)]) -> Result<(), ModelError> {
    if table.len() != layout.tensors.len() {
        return Err(ModelError::Shape(format!(
            "checkpoint has {} tensors, config expects {}",
            table.len(),
            layout.tensors.len()
        )));
    }
    for ((name, shape), spec) in table.iter().zip(&layout.tensors) {
        if *name != spec.name || *shape != spec.shape {
            return Err(ModelError::Shape(format!(
                "tensor {name} {shape:?} where config expects {} {:?}",
                spec.name, spec.shape
            )));
        }
    }
    Ok(())
}

pub fn save_checkpoint<F: Scalar>(state: &TrainState<F>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(state)?)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<TrainState<F>, ModelError> {
    decode_checkpoint(&fs::read(path)?, None)
}

/// Like [`load_checkpoint`] but fails unless the file matches `config`.
pub fn load_checkpoint_as<F: Scalar>(path: &Path, config: &DTConfig) -> Result<TrainState<F>, ModelError> {
    decode_checkpoint(&fs::read(path)?, Some(config))
}
