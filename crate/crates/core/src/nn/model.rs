//! The fixed conv/FC architecture:
//!
//! ```text
//! Conv(128,k7) BN ReLU  Conv(128,k5) BN ReLU  MaxPool(2)
//! Conv(64,k3) BN ReLU   GlobalAvgPool
//! FC(512) BN ReLU       FC(128) BN ReLU       FC(classes)  Softmax
//! ```
//!
//! With a 24-wide input (12 channels x {MPP, MZP}) the stage lengths are
//! 18, 14, 7, 5 and the pooled feature vector has 64 entries.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec};
use super::loss::{argmax, softmax_rows};
use super::tensor::Tensor;
use crate::dataio::ZScore;
use crate::error::{Error, Result};

pub const DLPR_CONV_MAPS: [usize; 3] = [128, 128, 64];
pub const DLPR_CONV_KERNELS: [usize; 3] = [7, 5, 3];
pub const DLPR_DENSE: [usize; 2] = [512, 128];
pub const POOL_SIZE: usize = 2;

/// Kernel triples tried, in order, when the input is too short for the full kernels.
const COMPACT_KERNELS: [[usize; 3]; 3] = [[5, 3, 3], [3, 3, 1], [1, 1, 1]];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_length: usize,
    pub num_classes: usize,
    pub conv_maps: [usize; 3],
    pub conv_kernels: [usize; 3],
    pub pool: usize,
    pub dense: [usize; 2],
}

/// Output shape of one named stage, as (maps or features, length).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub stage: &'static str,
    pub maps: usize,
    pub length: usize,
}

impl ModelSpec {
    /// The full-size network with its published kernel sizes.
    pub fn dlpr(input_length: usize, num_classes: usize) -> Self {
        ModelSpec {
            input_length,
            num_classes,
            conv_maps: DLPR_CONV_MAPS,
            conv_kernels: DLPR_CONV_KERNELS,
            pool: POOL_SIZE,
            dense: DLPR_DENSE,
        }
    }

    /// Full-size widths with the published kernels if they fit the input,
    /// otherwise the first compact kernel triple that yields a valid chain.
    pub fn fitted(input_length: usize, num_classes: usize) -> Result<Self> {
        let mut spec = Self::dlpr(input_length, num_classes);
        if spec.shape_chain().is_ok() {
            return Ok(spec);
        }
        for kernels in COMPACT_KERNELS {
            spec.conv_kernels = kernels;
            if spec.shape_chain().is_ok() {
                return Ok(spec);
            }
        }
        Err(Self::dlpr(input_length, num_classes)
            .shape_chain()
            .expect_err("full spec was rejected above"))
    }

    /// Small network for gradient checks and fast tests: 8-wide input,
    /// 4 maps per convolution.
    pub fn toy(num_classes: usize) -> Self {
        ModelSpec {
            input_length: 8,
            num_classes,
            conv_maps: [4, 4, 4],
            conv_kernels: [3, 3, 1],
            pool: POOL_SIZE,
            dense: [16, 8],
        }
    }

    /// Stage-by-stage output shapes; errors if any stage is invalid.
    pub fn shape_chain(&self) -> Result<Vec<StageShape>> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.conv_maps.contains(&0) || self.dense.contains(&0) || self.pool == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let conv = |len: usize, k: usize, stage: &str| -> Result<usize> {
            if k == 0 || len < k {
                Err(Error::Shape(format!(
                    "{stage}: kernel {k} does not fit input length {len}"
                )))
            } else {
                Ok(len - k + 1)
            }
        };
        let [m1, m2, m3] = self.conv_maps;
        let [k1, k2, k3] = self.conv_kernels;
        let l1 = conv(self.input_length, k1, "conv1")?;
        let l2 = conv(l1, k2, "conv2")?;
        if l2 % self.pool != 0 {
            return Err(Error::Pool(format!(
                "conv2 output length {l2} is not divisible by pool size {}",
                self.pool
            )));
        }
        let lp = l2 / self.pool;
        let l3 = conv(lp, k3, "conv3")?;
        let s = |stage, maps, length| StageShape {
            stage,
            maps,
            length,
        };
        Ok(vec![
            s("conv1", m1, l1),
            s("conv2", m2, l2),
            s("maxpool", m2, lp),
            s("conv3", m3, l3),
            s("global_avg_pool", m3, 1),
            s("fc1", self.dense[0], 1),
            s("fc2", self.dense[1], 1),
            s("softmax", self.num_classes, 1),
        ])
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let [m1, m2, m3] = self.conv_maps;
        let [k1, k2, k3] = self.conv_kernels;
        let [f1, f2] = self.dense;
        let conv = |in_channels, out_maps, kernel| LayerSpec::Conv {
            in_channels,
            out_maps,
            kernel,
        };
        let bn = |features| LayerSpec::BatchNorm { features };
        vec![
            conv(1, m1, k1),
            bn(m1),
            LayerSpec::Relu,
            conv(m1, m2, k2),
            bn(m2),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: self.pool },
            conv(m2, m3, k3),
            bn(m3),
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense {
                inputs: m3,
                outputs: f1,
            },
            bn(f1),
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: f1,
                outputs: f2,
            },
            bn(f2),
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: f2,
                outputs: self.num_classes,
            },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.shape_chain()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let layers = spec
            .layer_specs()
            .iter()
            .map(|ls| Layer::from_spec(ls, &mut rng))
            .collect();
        Ok(Model { spec, seed, layers })
    }

    fn as_conv_input(&self, x: &Tensor) -> Result<Tensor> {
        match *x.shape() {
            [b, l] if l == self.spec.input_length => x.clone().reshape(&[b, 1, l]),
            [_, 1, l] if l == self.spec.input_length => Ok(x.clone()),
            ref s => Err(Error::Shape(format!(
                "model expects [batch, {}] input, got {s:?}",
                self.spec.input_length
            ))),
        }
    }

    /// Logits in inference mode (batchnorm uses running statistics).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.as_conv_input(x)?;
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Logits in training mode, caching what `backward` needs.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.as_conv_input(x)?;
        for layer in &mut self.layers {
            h = layer.forward_train(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates a logit gradient; returns the gradient for the `[batch, 1, L]` input.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        softmax_rows(&self.infer(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.infer(x)?;
        Ok(logits
            .data()
            .chunks(self.spec.num_classes)
            .map(argmax)
            .collect())
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        self.layers
            .iter_mut()
            .flat_map(Layer::params_and_grads)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(Layer::state)
            .map(<[f64]>::len)
            .sum()
    }

    /// Output shape after every layer for a batch of `batch` zero inputs.
    pub fn trace_shapes(&self, batch: usize) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let mut h = Tensor::zeros(&[batch, 1, self.spec.input_length]);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = layer.infer(&h)?;
            out.push((layer.name(), h.shape().to_vec()));
        }
        Ok(out)
    }
}

/// A trained network bundled with the input normalization it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub normalization: ZScore,
}

impl TrainedModel {
    pub fn num_classes(&self) -> usize {
        self.model.spec.num_classes
    }

    pub fn input_length(&self) -> usize {
        self.model.spec.input_length
    }

    fn normalized(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.input_length()) {
            return Err(Error::Shape(format!(
                "model expects {} inputs per row, got {}",
                self.input_length(),
                r.len()
            )));
        }
        let z = self.normalization.apply_all(rows);
        let refs: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        Tensor::from_rows(&refs)
    }

    /// Class predictions for raw (unnormalized) preprocessed rows.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        self.model.predict(&self.normalized(rows)?)
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        self.model.predict_proba(&self.normalized(rows)?)
    }
}
