//! `DLPRM1` model files.
//!
//! ```text
//! "DLPRM1\0"                 7 bytes
//! header length              u32, little endian
//! header                     UTF-8 JSON
//! parameters                 f64, little endian, layer order
//! ```
//!
//! Within a layer, weights precede biases; batchnorm stores gamma, beta,
//! running mean, running variance.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::model::{Model, ModelSpec, TrainedModel};
use crate::dataio::ZScore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"DLPRM1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    spec: ModelSpec,
    layers: Vec<LayerSpec>,
    input_length: usize,
    num_classes: usize,
    seed: u64,
    normalization: ZScore,
    param_count: usize,
}

pub fn to_bytes(tm: &TrainedModel) -> Result<Vec<u8>> {
    let model = &tm.model;
    let header = Header {
        format: "DLPRM1".into(),
        spec: model.spec.clone(),
        layers: model.layers.iter().map(|l| l.spec()).collect(),
        input_length: model.spec.input_length,
        num_classes: model.spec.num_classes,
        seed: model.seed,
        normalization: tm.normalization.clone(),
        param_count: model.param_count(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + 8 * header.param_count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for layer in &model.layers {
        for buf in layer.state() {
            for v in buf {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 7];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a DLPRM1 file".into()));
    }
    let mut len = [0u8; 4];
    cur.read_exact(&mut len)
        .map_err(|_| Error::Format("truncated header length".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    cur.read_exact(&mut json)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("header: {e}")))?;

    let mut model = Model::new(header.spec.clone(), header.seed)?;
    let layer_specs: Vec<LayerSpec> = model.layers.iter().map(|l| l.spec()).collect();
    if layer_specs != header.layers
        || header.input_length != header.spec.input_length
        || header.num_classes != header.spec.num_classes
        || header.param_count != model.param_count()
    {
        return Err(Error::Format(
            "header is inconsistent with its model spec".into(),
        ));
    }
    if header.normalization.mean.len() != header.input_length
        || header.normalization.std.len() != header.input_length
    {
        return Err(Error::Format(
            "normalization width does not match input".into(),
        ));
    }

    let mut word = [0u8; 8];
    for layer in &mut model.layers {
        for buf in layer.state_mut() {
            for v in buf.iter_mut() {
                cur.read_exact(&mut word)
                    .map_err(|_| Error::Format("truncated parameters".into()))?;
                *v = f64::from_le_bytes(word);
            }
        }
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(TrainedModel {
        model,
        normalization: header.normalization,
    })
}

pub fn save_model(path: &Path, tm: &TrainedModel) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(tm)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Layer;

    fn sample() -> TrainedModel {
        let mut model = Model::new(ModelSpec::toy(3), 42).unwrap();
        // make running stats and biases non-trivial
        for layer in &mut model.layers {
            for (i, buf) in layer.state_mut().into_iter().enumerate() {
                for (j, v) in buf.iter_mut().enumerate() {
                    *v += (i * 7 + j) as f64 * 1e-3 + 0.1f64.powi(j as i32 % 17);
                }
            }
        }
        TrainedModel {
            model,
            normalization: ZScore {
                mean: (0..8).map(|i| 0.1 * i as f64 + 1e-17).collect(),
                std: (0..8).map(|i| 1.0 / 3.0 + i as f64).collect(),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tm = sample();
        let bytes = to_bytes(&tm).unwrap();
        assert_eq!(&bytes[..7], MAGIC);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        for (a, b) in tm.model.layers.iter().zip(&back.model.layers) {
            for (x, y) in a.state().iter().zip(b.state()) {
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
        assert_eq!(back.normalization, tm.normalization);
    }

    #[test]
    fn parameter_order() {
        let tm = sample();
        let bytes = to_bytes(&tm).unwrap();
        let hlen = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let params = &bytes[11 + hlen..];
        let first = f64::from_le_bytes(params[..8].try_into().unwrap());
        let Layer::Conv(c) = &tm.model.layers[0] else {
            panic!()
        };
        assert_eq!(first, c.weights[0]);
        // conv1: 4*1*3 weights then 4 biases, then batchnorm gamma
        let at = |i: usize| f64::from_le_bytes(params[8 * i..8 * i + 8].try_into().unwrap());
        assert_eq!(at(12), c.bias[0]);
        let Layer::BatchNorm(bn) = &tm.model.layers[1] else {
            panic!()
        };
        assert_eq!(at(16), bn.gamma[0]);
        assert_eq!(at(20), bn.beta[0]);
        assert_eq!(at(24), bn.running_mean[0]);
        assert_eq!(at(28), bn.running_var[0]);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(b"DLPRM1").is_err());
    }
}
