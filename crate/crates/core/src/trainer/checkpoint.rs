//! Binary checkpoint: `FIPG`, a little-endian `u32` version, a `u64` header
//! length, a JSON header, then raw little-endian `f32` payloads.
//!
//! The header lists every tensor as `{name, dtype, shape, offset}` with
//! offsets relative to the start of the payload section.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::nn::{Module, Slot};
use crate::optim::{Adam, Moments};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FIPG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    epoch: u64,
    opt_g_steps: u64,
    opt_d_steps: u64,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, t: &Tensor<f32>) {
        self.entries.push(TensorEntry {
            name,
            dtype: f32::DTYPE.into(),
            shape: t.shape().to_vec(),
            offset: self.payload.len() as u64,
        });
        for v in t.data() {
            v.write_le(&mut self.payload);
        }
    }

    fn module(&mut self, prefix: &str, m: &dyn Module<f32>) {
        m.visit(prefix, &mut |name, t| self.push(name.to_string(), t));
    }

    fn adam(&mut self, prefix: &str, opt: &Adam) {
        for s in &opt.moments {
            self.push(format!("{prefix}.m.{}", s.name), &s.m);
            self.push(format!("{prefix}.v.{}", s.name), &s.v);
        }
    }
}

/// Serializes the full training state.
pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut w = Writer { entries: Vec::new(), payload: Vec::new() };
    w.module("g", &state.generator);
    w.module("d", &state.discriminator);
    w.adam("opt_g", &state.opt_g);
    w.adam("opt_d", &state.opt_d);
    let header = Header {
        config: state.config.clone(),
        step: state.step,
        epoch: state.epoch,
        opt_g_steps: state.opt_g.steps,
        opt_d_steps: state.opt_d.steps,
        tensors: w.entries,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + w.payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&w.payload);
    Ok(out)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Saves `state` and returns its model id (hex SHA-256 of the file bytes).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<String> {
    let bytes = checkpoint_bytes(state)?;
    write_atomically(path, &bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Reader<'a> {
    entries: std::collections::HashMap<&'a str, &'a TensorEntry>,
    payload: &'a [u8],
    used: usize,
}

impl Reader<'_> {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor<f32>> {
        let e = self.entries.get(name).ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if e.dtype != f32::DTYPE {
            return Err(corrupt(format!("tensor {name} has dtype {}", e.dtype)));
        }
        if e.shape != shape {
            return Err(corrupt(format!("tensor {name} has shape {:?}, expected {shape:?}", e.shape)));
        }
        let len: usize = shape.iter().product();
        let start = usize::try_from(e.offset).map_err(|_| corrupt("offset overflow"))?;
        let end = start
            .checked_add(len * f32::BYTES)
            .filter(|&end| end <= self.payload.len())
            .ok_or_else(|| corrupt(format!("tensor {name} runs past the end of the file")))?;
        let data = self.payload[start..end].chunks_exact(f32::BYTES).map(f32::read_le).collect();
        self.used += 1;
        Tensor::from_vec(shape, data)
    }

    fn module(&mut self, prefix: &str, m: &mut dyn Module<f32>) -> Result<()> {
        let mut err = None;
        m.visit_mut(prefix, &mut |name, slot| {
            if err.is_some() {
                return;
            }
            let target = match slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            match self.take(name, target.shape()) {
                Ok(t) => *target = t,
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn adam(&mut self, prefix: &str, opt: &mut Adam) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = opt.moments.iter().map(|s| (s.name.clone(), s.m.shape().to_vec())).collect();
        opt.moments = names
            .into_iter()
            .map(|(name, shape)| {
                Ok(Moments {
                    m: self.take(&format!("{prefix}.m.{name}"), &shape)?,
                    v: self.take(&format!("{prefix}.v.{name}"), &shape)?,
                    name,
                })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}

/// Parses checkpoint bytes back into a training state.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing FIPG magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header runs past the end of the file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut state = TrainState::new(header.config.clone()).map_err(|e| corrupt(format!("bad config: {e}")))?;
    let mut reader = Reader {
        entries: header.tensors.iter().map(|e| (e.name.as_str(), e)).collect(),
        payload: &bytes[header_end..],
        used: 0,
    };
    reader.module("g", &mut state.generator)?;
    reader.module("d", &mut state.discriminator)?;
    reader.adam("opt_g", &mut state.opt_g)?;
    reader.adam("opt_d", &mut state.opt_d)?;
    if reader.used != header.tensors.len() {
        return Err(corrupt("checkpoint holds tensors this model does not have"));
    }
    state.step = header.step;
    state.epoch = header.epoch;
    state.opt_g.steps = header.opt_g_steps;
    state.opt_d.steps = header.opt_d_steps;
    Ok(state)
}

/// Loads a checkpoint; returns the state and its model id.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, String)> {
    let bytes = std::fs::read(path)?;
    let state = checkpoint_from_bytes(&bytes)?;
    Ok((state, hex::encode(Sha256::digest(&bytes))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscriminatorConfig, GeneratorConfig};
    use crate::trainer::{parameter_digest, DatasetSource};

    fn trained() -> TrainState {
        let cfg = TrainConfig {
            batch_size: 2,
            generator: GeneratorConfig { image_side: 32, ..GeneratorConfig::miniature() },
            discriminator: DiscriminatorConfig::miniature(),
            dataset: DatasetSource::Synthetic(2),
            ..Default::default()
        };
        let mut s = TrainState::new(cfg.clone()).unwrap();
        let imgs = cfg.dataset.load(32, 0).unwrap();
        s.fit(&imgs, |_, _| Ok(())).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = trained();
        let bytes = checkpoint_bytes(&s).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(parameter_digest(&back.generator), parameter_digest(&s.generator));
        assert_eq!(parameter_digest(&back.discriminator), parameter_digest(&s.discriminator));
        assert_eq!(back.opt_g, s.opt_g);
        assert_eq!(back.opt_d, s.opt_d);
        assert_eq!((back.step, back.epoch, &back.config), (s.step, s.epoch, &s.config));
        assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_bad_versions_are_rejected() {
        let bytes = checkpoint_bytes(&trained()).unwrap();
        for cut in [0, 3, 12, 40, bytes.len() - 1] {
            assert!(matches!(checkpoint_from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(checkpoint_from_bytes(&wrong), Err(Error::VersionMismatch { found: 7, expected: 1 })));
    }

    #[test]
    fn save_and_load_through_a_file() {
        let s = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fipg");
        let id = save_checkpoint(&s, &path).unwrap();
        let (back, id2) = load_checkpoint(&path).unwrap();
        assert_eq!(id, id2);
        assert_eq!(id.len(), 64);
        let input = crate::tensor::Tensor::<f32>::full(&[1, 6, 32, 32], 0.25);
        assert_eq!(back.generator.forward(&input).unwrap().0, s.generator.forward(&input).unwrap().0);
    }
}
