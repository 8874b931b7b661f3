//! Model file: one UTF-8 JSON object.
//!
//! ```json
//! {
//!   "format": "hcd-model",
//!   "version": 1,
//!   "scale": 2,
//!   "upscaler": {
//!     "architecture": "conv5:3>32 relu conv3:32>32 relu conv3:32>12 shuffle2 +bicubic",
//!     "layers": [ { "weights": [...], "bias": [...] }, ... ]
//!   },
//!   "downscaler": { "kind": "bicubic" }
//! }
//! ```
//!
//! A learned downscaler is `{ "kind": "learned", "architecture": "...", "layers": [...] }`.
//! Weights are `[out, in, k, k]` row-major; floats use the shortest
//! representation that parses back to the same `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bicubic::BicubicOp;
use super::chain::{Downscaler, ModelChain};
use super::network::{ConvStack, LearnedDownscaler, Upscaler};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "hcd-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StackRecord {
    architecture: String,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DownRecord {
    Bicubic,
    Learned(StackRecord),
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    scale: usize,
    upscaler: StackRecord,
    downscaler: DownRecord,
}

fn record(arch: String, stack: &ConvStack) -> StackRecord {
    StackRecord {
        architecture: arch,
        layers: stack
            .layers
            .iter()
            .map(|l| LayerRecord { weights: l.weights.clone(), bias: l.bias.clone() })
            .collect(),
    }
}

fn fill(stack: &mut ConvStack, layers: Vec<LayerRecord>) -> Result<()> {
    if stack.layers.len() != layers.len() {
        return Err(Error::Malformed(format!(
            "architecture has {} layers, file has {}",
            stack.layers.len(),
            layers.len()
        )));
    }
    for (l, r) in stack.layers.iter_mut().zip(layers) {
        if l.weights.len() != r.weights.len() || l.bias.len() != r.bias.len() {
            return Err(Error::Malformed("parameter array length does not match architecture".into()));
        }
        if r.weights.iter().chain(&r.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model file"));
        }
        l.weights = r.weights;
        l.bias = r.bias;
    }
    Ok(())
}

pub fn model_to_json(chain: &ModelChain) -> Result<String> {
    let rec = ModelRecord {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        scale: chain.scale(),
        upscaler: record(chain.up.architecture(), &chain.up.stack),
        downscaler: match &chain.down {
            Downscaler::Bicubic(_) => DownRecord::Bicubic,
            Downscaler::Learned(d) => DownRecord::Learned(record(d.architecture(), &d.stack)),
        },
    };
    Ok(serde_json::to_string(&rec)?)
}

pub fn model_from_json(text: &str) -> Result<ModelChain> {
    let rec: ModelRecord = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("model file: {e}")))?;
    if rec.format != MODEL_FORMAT {
        return Err(Error::Malformed(format!("not a model file (format {:?})", rec.format)));
    }
    if rec.version != MODEL_VERSION {
        return Err(Error::Malformed(format!("unsupported model version {}", rec.version)));
    }
    let mut up = Upscaler::from_architecture(&rec.upscaler.architecture)?;
    fill(&mut up.stack, rec.upscaler.layers)?;
    let down = match rec.downscaler {
        DownRecord::Bicubic => Downscaler::Bicubic(BicubicOp::new(rec.scale)?),
        DownRecord::Learned(r) => {
            let mut d = LearnedDownscaler::from_architecture(&r.architecture)?;
            fill(&mut d.stack, r.layers)?;
            Downscaler::Learned(d)
        }
    };
    if up.scale() != rec.scale {
        return Err(Error::Malformed("scale field disagrees with architecture".into()));
    }
    ModelChain::new(down, up)
}

pub fn save_model(chain: &ModelChain, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(chain)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelChain> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    model_from_json(&text)
}
