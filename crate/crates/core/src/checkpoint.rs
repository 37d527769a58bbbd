//! `denet-ckpt-v1` archives.
//!
//! Layout: `b"DNCK"`, `u64` little-endian header length, a JSON header, then the
//! concatenated tensor payload as little-endian `f32`. The header holds the format
//! version, model and training configuration, iteration counter, generator state and
//! a table of `{name, shape, offset}` entries (offset in elements). Tensors are the
//! model parameters under their canonical names followed by the optimizer moments
//! under `adam.first.*` and `adam.second.*`.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeNet, ModelConfig};
use crate::nn::Parameterized;
use crate::optim::AdamState;
use crate::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNCK";
pub const CHECKPOINT_VERSION: &str = "denet-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry a u128 portably.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Validation(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DeNet,
    pub optimizer: AdamState,
    pub train: TrainConfig,
    pub iteration: u64,
    pub rng: RngState,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: String,
    model: ModelConfig,
    train: TrainConfig,
    iteration: u64,
    adam_step: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

fn named_tensors(ckpt: &Checkpoint) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
    let mut out = Vec::new();
    for (prefix, m) in [
        ("", &ckpt.model),
        ("adam.first", &ckpt.optimizer.first),
        ("adam.second", &ckpt.optimizer.second),
    ] {
        let mut params = Vec::new();
        m.params(prefix, &mut params);
        out.extend(params.into_iter().map(|p| (p.name, p.data)));
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = named_tensors(self);
        let mut entries = Vec::with_capacity(tensors.len());
        let mut payload = Vec::new();
        let mut offset = 0;
        for (name, data) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: data.shape().to_vec(),
                offset,
            });
            offset += data.len();
            for v in data.iter() {
                payload.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION.to_string(),
            model: self.model.config.clone(),
            train: self.train.clone(),
            iteration: self.iteration,
            adam_step: self.optimizer.step,
            rng: self.rng.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a denet checkpoint (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| bad(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {:?}", header.version)));
        }
        let payload = &bytes[header_end..];
        if !payload.len().is_multiple_of(4) {
            return Err(bad("payload is not a whole number of f32 values".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();

        // shapes come from the config; contents are overwritten below
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut model = DeNet::new(header.model.clone(), &mut scratch)?;
        let mut optimizer = AdamState::new(&model);
        optimizer.step = header.adam_step;

        let mut table = header.tensors.into_iter();
        let mut consumed = 0;
        for (prefix, target) in [
            ("", &mut model),
            ("adam.first", &mut optimizer.first),
            ("adam.second", &mut optimizer.second),
        ] {
            let mut params = Vec::new();
            target.params_mut(prefix, &mut params);
            for p in params {
                let entry = table
                    .next()
                    .ok_or_else(|| bad(format!("missing tensor {}", p.name)))?;
                if entry.name != p.name || entry.shape != p.data.shape() {
                    return Err(bad(format!(
                        "tensor {} {:?} does not match expected {} {:?}",
                        entry.name,
                        entry.shape,
                        p.name,
                        p.data.shape()
                    )));
                }
                let n = p.data.len();
                let slice = values
                    .get(entry.offset..entry.offset + n)
                    .ok_or_else(|| bad(format!("tensor {} exceeds payload", entry.name)))?;
                let src = ArrayD::from_shape_vec(IxDyn(&entry.shape), slice.to_vec()).expect("length checked");
                let mut dst = p.data;
                dst.assign(&src);
                consumed += n;
            }
        }
        if table.next().is_some() || consumed != values.len() {
            return Err(bad("unexpected extra tensors in checkpoint".into()));
        }
        Ok(Self {
            model,
            optimizer,
            train: header.train,
            iteration: header.iteration,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
