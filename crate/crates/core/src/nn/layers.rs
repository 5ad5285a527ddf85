//! Layer kernels. Activations carry a leading batch dimension: convolutional
//! stages are `[batch, maps, length]`, dense stages `[batch, features]`.
//!
//! Every layer has a read-only `infer` path and a caching `forward_train` path
//! whose cache `backward` consumes. Parameter gradients are overwritten (not
//! accumulated) by each `backward` call.

use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

fn expect_rank3(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, l] => Ok((b, c, l)),
        ref s => Err(Error::Shape(format!(
            "{what} expects [batch, maps, length], got {s:?}"
        ))),
    }
}

fn missing_cache(what: &str) -> Error {
    Error::State(format!(
        "{what}: backward called without a cached training forward"
    ))
}

fn check_grad_shape(grad: &Tensor, expected: &[usize], what: &str) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::Shape(format!(
            "{what}: upstream gradient {:?} does not match output {expected:?}",
            grad.shape()
        )));
    }
    Ok(())
}

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
fn he_uniform<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Valid-mode, stride-1 1D convolution.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_maps: usize,
    pub kernel: usize,
    /// `[out_maps, in_channels, kernel]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache: Option<Tensor>,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_maps: usize, kernel: usize) -> Self {
        let n = out_maps * in_channels * kernel;
        Conv1d {
            in_channels,
            out_maps,
            kernel,
            weights: vec![0.0; n],
            bias: vec![0.0; out_maps],
            grad_weights: vec![0.0; n],
            grad_bias: vec![0.0; out_maps],
            cache: None,
        }
    }

    pub fn init<R: Rng>(in_channels: usize, out_maps: usize, kernel: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_channels, out_maps, kernel);
        layer.weights = he_uniform(rng, layer.weights.len(), in_channels * kernel);
        layer
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        if self.kernel == 0 || input_len < self.kernel {
            return Err(Error::Shape(format!(
                "convolution with kernel {} needs input length >= kernel, got {input_len}",
                self.kernel
            )));
        }
        Ok(input_len - self.kernel + 1)
    }

    /// Patch matrix of one sample: row `o` holds `x[i][o + t]` at `i * k + t`.
    fn patches(&self, xb: &[f64], l: usize, lo: usize) -> Vec<f64> {
        let (c, k) = (self.in_channels, self.kernel);
        let mut p = vec![0.0; lo * c * k];
        for (o, row) in p.chunks_mut(c * k).enumerate() {
            for i in 0..c {
                row[i * k..(i + 1) * k].copy_from_slice(&xb[i * l + o..i * l + o + k]);
            }
        }
        p
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = expect_rank3(x, "conv1d")?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv1d expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let lo = self.output_len(l)?;
        let (ck, m_out) = (c * self.kernel, self.out_maps);
        let mut out = vec![0.0; b * m_out * lo];
        out.par_chunks_mut(m_out * lo)
            .zip(x.data().par_chunks(c * l))
            .for_each(|(ob, xb)| {
                let p = self.patches(xb, l, lo);
                for (m, row) in ob.chunks_mut(lo).enumerate() {
                    let w = &self.weights[m * ck..(m + 1) * ck];
                    for (o, v) in row.iter_mut().enumerate() {
                        *v = self.bias[m] + dot(w, &p[o * ck..(o + 1) * ck]);
                    }
                }
            });
        Tensor::new(&[b, m_out, lo], out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("conv1d"))?;
        let (b, c, l) = expect_rank3(x, "conv1d")?;
        let (k, m_out) = (self.kernel, self.out_maps);
        let ck = c * k;
        let lo = l - k + 1;
        check_grad_shape(grad, &[b, m_out, lo], "conv1d")?;
        let g = grad.data();
        let patches: Vec<Vec<f64>> = x
            .data()
            .par_chunks(c * l)
            .map(|xb| self.patches(xb, l, lo))
            .collect();

        // Weight and bias gradients: one map per task, batch summed in order.
        self.grad_weights
            .par_chunks_mut(ck)
            .zip(self.grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(m, (gw, gb))| {
                gw.fill(0.0);
                *gb = 0.0;
                for (s, p) in patches.iter().enumerate() {
                    let gm = &g[(s * m_out + m) * lo..(s * m_out + m + 1) * lo];
                    *gb += gm.iter().sum::<f64>();
                    for (o, &gv) in gm.iter().enumerate() {
                        axpy(gv, &p[o * ck..(o + 1) * ck], gw);
                    }
                }
            });

        let w = &self.weights;
        let mut dx = vec![0.0; b * c * l];
        dx.par_chunks_mut(c * l)
            .zip(g.par_chunks(m_out * lo))
            .for_each(|(dxb, gb)| {
                let mut dp = vec![0.0; lo * ck];
                for (m, gm) in gb.chunks(lo).enumerate() {
                    let wm = &w[m * ck..(m + 1) * ck];
                    for (o, &gv) in gm.iter().enumerate() {
                        axpy(gv, wm, &mut dp[o * ck..(o + 1) * ck]);
                    }
                }
                for (o, row) in dp.chunks(ck).enumerate() {
                    for i in 0..c {
                        for (d, &v) in dxb[i * l + o..i * l + o + k]
                            .iter_mut()
                            .zip(&row[i * k..(i + 1) * k])
                        {
                            *d += v;
                        }
                    }
                }
            });
        Tensor::new(&[b, c, l], dx)
    }
}

/// Four running sums so the compiler can vectorize; the order is fixed.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Single-sample convolution of a `[in_channels, length]` input.
pub fn conv1d_forward(input: &Tensor, layer: &Conv1d) -> Result<Tensor> {
    let (c, l) = match *input.shape() {
        [c, l] => (c, l),
        ref s => {
            return Err(Error::Shape(format!(
                "expected [channels, length], got {s:?}"
            )))
        }
    };
    let y = layer.infer(&input.clone().reshape(&[1, c, l])?)?;
    let lo = y.shape()[2];
    y.reshape(&[layer.out_maps, lo])
}

/// Batch normalization. Rank-2 inputs normalize each feature over the batch;
/// rank-3 inputs normalize each map over batch and length.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub features: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// (batch, features, length) view of a rank-2 or rank-3 activation.
fn bn_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, f] => Ok((b, f, 1)),
        [b, f, l] => Ok((b, f, l)),
        ref s => Err(Error::Shape(format!(
            "batchnorm expects rank 2 or 3, got {s:?}"
        ))),
    }
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            features,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            grad_gamma: vec![0.0; features],
            grad_beta: vec![0.0; features],
            cache: None,
        }
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let dims = bn_dims(x)?;
        if dims.1 != self.features {
            return Err(Error::Shape(format!(
                "batchnorm over {} features got {}",
                self.features, dims.1
            )));
        }
        Ok(dims)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, f, l) = self.check(x)?;
        let mut out = x.data().to_vec();
        for s in 0..b {
            for j in 0..f {
                let scale = self.gamma[j] / (self.running_var[j] + BN_EPS).sqrt();
                let shift = self.beta[j] - self.running_mean[j] * scale;
                for v in &mut out[(s * f + j) * l..(s * f + j + 1) * l] {
                    *v = *v * scale + shift;
                }
            }
        }
        Tensor::new(x.shape(), out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, f, l) = self.check(x)?;
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let n = (b * l) as f64;
        let xd = x.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; f];
        for j in 0..f {
            let idx = |s: usize| (s * f + j) * l..(s * f + j + 1) * l;
            let mean = (0..b).map(|s| xd[idx(s)].iter().sum::<f64>()).sum::<f64>() / n;
            let var = (0..b)
                .map(|s| {
                    xd[idx(s)]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n;
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[j] = is;
            for s in 0..b {
                for p in idx(s) {
                    let h = (xd[p] - mean) * is;
                    xhat[p] = h;
                    out[p] = self.gamma[j] * h + self.beta[j];
                }
            }
            let unbiased = var * n / (n - 1.0);
            self.running_mean[j] = BN_MOMENTUM * self.running_mean[j] + (1.0 - BN_MOMENTUM) * mean;
            self.running_var[j] =
                BN_MOMENTUM * self.running_var[j] + (1.0 - BN_MOMENTUM) * unbiased;
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
        });
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_cache("batchnorm"))?;
        check_grad_shape(grad, &cache.shape, "batchnorm")?;
        let (b, f, l) = bn_dims(grad)?;
        let n = (b * l) as f64;
        let g = grad.data();
        let mut dx = vec![0.0; g.len()];
        for j in 0..f {
            let idx = |s: usize| (s * f + j) * l..(s * f + j + 1) * l;
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for s in 0..b {
                for p in idx(s) {
                    sum_g += g[p];
                    sum_gx += g[p] * cache.xhat[p];
                }
            }
            self.grad_beta[j] = sum_g;
            self.grad_gamma[j] = sum_gx;
            let c = self.gamma[j] * cache.inv_std[j] / n;
            for s in 0..b {
                for p in idx(s) {
                    dx[p] = c * (n * g[p] - sum_g - cache.xhat[p] * sum_gx);
                }
            }
        }
        Tensor::new(grad.shape(), dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

impl Relu {
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::new(x.shape(), x.data().iter().map(|&v| relu(v)).collect())
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        self.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        if mask.len() != grad.len() {
            return Err(Error::Shape("relu: gradient size mismatch".into()));
        }
        let dx = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &on)| if on { g } else { 0.0 })
            .collect();
        Tensor::new(grad.shape(), dx)
    }
}

/// Non-overlapping max pooling along the length axis. Odd lengths are rejected.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(size: usize) -> Self {
        MaxPool { size, cache: None }
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        if self.size == 0 || !input_len.is_multiple_of(self.size) || input_len == 0 {
            return Err(Error::Pool(format!(
                "length {input_len} is not a positive multiple of pool size {}",
                self.size
            )));
        }
        Ok(input_len / self.size)
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (b, c, l) = expect_rank3(x, "maxpool")?;
        let lo = self.output_len(l)?;
        let xd = x.data();
        let mut out = Vec::with_capacity(b * c * lo);
        let mut arg = Vec::with_capacity(b * c * lo);
        for row in 0..b * c {
            for j in 0..lo {
                let start = row * l + j * self.size;
                let mut best = start;
                for p in start + 1..start + self.size {
                    // strict: ties keep the first position
                    if xd[p] > xd[best] {
                        best = p;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
        Ok((Tensor::new(&[b, c, lo], out)?, arg))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x).map(|(y, _)| y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, arg) = self.run(x)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_cache("maxpool"))?;
        if grad.len() != arg.len() {
            return Err(Error::Shape("maxpool: gradient size mismatch".into()));
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&p, &g) in arg.iter().zip(grad.data()) {
            d[p] += g;
        }
        Ok(dx)
    }
}

/// Mean over the length axis: `[batch, maps, length] -> [batch, maps]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = expect_rank3(x, "global average pool")?;
        let out = x
            .data()
            .chunks(l)
            .map(|r| r.iter().sum::<f64>() / l as f64)
            .collect();
        Tensor::new(&[b, c], out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.cache = Some(x.shape().to_vec());
        self.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_cache("global average pool"))?;
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        check_grad_shape(grad, &[b, c], "global average pool")?;
        let scale = 1.0 / l as f64;
        let dx = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * scale, l))
            .collect();
        Tensor::new(shape, dx)
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `[outputs, inputs]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            grad_weights: vec![0.0; inputs * outputs],
            grad_bias: vec![0.0; outputs],
            cache: None,
        }
    }

    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        layer.weights = he_uniform(rng, inputs * outputs, inputs);
        layer
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let b = match *x.shape() {
            [b, f] if f == self.inputs => b,
            ref s => {
                return Err(Error::Shape(format!(
                    "dense expects [batch, {}], got {s:?}",
                    self.inputs
                )))
            }
        };
        let mut out = Vec::with_capacity(b * self.outputs);
        for s in 0..b {
            let xs = x.row(s);
            for o in 0..self.outputs {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out.push(self.bias[o] + dot(w, xs));
            }
        }
        Tensor::new(&[b, self.outputs], out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let b = x.shape()[0];
        check_grad_shape(grad, &[b, self.outputs], "dense")?;
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
        let mut dx = vec![0.0; b * self.inputs];
        for s in 0..b {
            let xs = x.row(s);
            let gs = grad.row(s);
            let dxs = &mut dx[s * self.inputs..(s + 1) * self.inputs];
            for (o, &g) in gs.iter().enumerate() {
                self.grad_bias[o] += g;
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let gw = &mut self.grad_weights[o * self.inputs..(o + 1) * self.inputs];
                for ((gwi, &xi), (d, &wi)) in gw.iter_mut().zip(xs).zip(dxs.iter_mut().zip(w)) {
                    *gwi += g * xi;
                    *d += g * wi;
                }
            }
        }
        Tensor::new(&[b, self.inputs], dx)
    }
}

/// Serializable description of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_maps: usize,
        kernel: usize,
    },
    BatchNorm {
        features: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv1d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool),
    GlobalAvgPool(GlobalAvgPool),
    Dense(Dense),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $e:expr) => {
        match $self {
            Layer::Conv($l) => $e,
            Layer::BatchNorm($l) => $e,
            Layer::Relu($l) => $e,
            Layer::MaxPool($l) => $e,
            Layer::GlobalAvgPool($l) => $e,
            Layer::Dense($l) => $e,
        }
    };
}

impl Layer {
    /// Fresh layer; weights drawn from `rng` where the layer has any.
    pub fn from_spec<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Self {
        match *spec {
            LayerSpec::Conv {
                in_channels,
                out_maps,
                kernel,
            } => Layer::Conv(Conv1d::init(in_channels, out_maps, kernel, rng)),
            LayerSpec::BatchNorm { features } => Layer::BatchNorm(BatchNorm::new(features)),
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::MaxPool { size } => Layer::MaxPool(MaxPool::new(size)),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(GlobalAvgPool::default()),
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::init(inputs, outputs, rng)),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv {
                in_channels: c.in_channels,
                out_maps: c.out_maps,
                kernel: c.kernel,
            },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm {
                features: b.features,
            },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::MaxPool(p) => LayerSpec::MaxPool { size: p.size },
            Layer::GlobalAvgPool(_) => LayerSpec::GlobalAvgPool,
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.infer(x))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.forward_train(x))
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.backward(grad))
    }

    /// Trainable parameters paired with their gradients, in serialization order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        match self {
            Layer::Conv(c) => vec![
                (&mut c.weights[..], &c.grad_weights[..]),
                (&mut c.bias[..], &c.grad_bias[..]),
            ],
            Layer::Dense(d) => vec![
                (&mut d.weights[..], &d.grad_weights[..]),
                (&mut d.bias[..], &d.grad_bias[..]),
            ],
            Layer::BatchNorm(b) => vec![
                (&mut b.gamma[..], &b.grad_gamma[..]),
                (&mut b.beta[..], &b.grad_beta[..]),
            ],
            _ => Vec::new(),
        }
    }

    /// Everything that is persisted: weights before biases; batchnorm
    /// gamma, beta, running mean, running variance.
    pub fn state(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv(c) => vec![&c.weights, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::BatchNorm(b) => vec![
                &mut b.gamma,
                &mut b.beta,
                &mut b.running_mean,
                &mut b.running_var,
            ],
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let mut conv = Conv1d::zeros(1, 1, 3);
        conv.weights = vec![1.0, 0.0, -1.0];
        let y = conv1d_forward(&t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), &conv).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, -2.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut conv = Conv1d::zeros(1, 1, 1);
        conv.weights = vec![1.0];
        let x = t(&[1, 1, 4], &[0.5, -1.0, 2.0, 3.0]);
        assert_eq!(conv.forward_train(&x).unwrap().data(), x.data());
        let g = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(conv.backward(&g).unwrap().data(), g.data());
    }

    #[test]
    fn conv_first_layer_shape() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let conv = Conv1d::init(1, 128, 7, &mut rng);
        let y = conv1d_forward(&Tensor::zeros(&[1, 24]), &conv).unwrap();
        assert_eq!(y.shape(), &[128, 18]);
        assert!(conv1d_forward(&Tensor::zeros(&[2, 24]), &conv).is_err());
        assert!(conv1d_forward(&Tensor::zeros(&[1, 6]), &conv).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let mut conv = Conv1d::init(2, 3, 3, &mut rng);
        let x = Tensor::new(&[2, 2, 6], (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
        conv.forward_train(&x).unwrap();
        let dx = conv.backward(&Tensor::zeros(&[2, 3, 4])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(conv.grad_weights.iter().all(|&v| v == 0.0));
        assert!(conv.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward() {
        let mut conv = Conv1d::zeros(1, 1, 1);
        assert!(matches!(
            conv.backward(&Tensor::zeros(&[1, 1, 1])),
            Err(Error::State(_))
        ));
        let mut d = Dense::zeros(2, 2);
        assert!(matches!(
            d.backward(&Tensor::zeros(&[1, 2])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn maxpool_examples() {
        let mut p = MaxPool::new(2);
        let y = p
            .forward_train(&t(&[1, 1, 4], &[1.0, 3.0, 2.0, 0.0]))
            .unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        let dx = p.backward(&t(&[1, 1, 2], &[10.0, 20.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 20.0, 0.0]);
        assert_eq!(
            p.infer(&Tensor::zeros(&[1, 128, 14])).unwrap().shape(),
            &[1, 128, 7]
        );
        assert!(matches!(
            p.infer(&Tensor::zeros(&[1, 1, 5])),
            Err(Error::Pool(_))
        ));
    }

    #[test]
    fn gap_examples() {
        let mut g = GlobalAvgPool::default();
        let y = g
            .forward_train(&t(&[1, 2, 3], &[2.0, 2.0, 2.0, 1.0, 2.0, 6.0]))
            .unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
        let dx = g.backward(&t(&[1, 2], &[3.0, 6.0])).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(
            g.infer(&Tensor::zeros(&[1, 64, 5])).unwrap().shape(),
            &[1, 64]
        );
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(-2.0), 0.0);
        assert_eq!(relu(3.5), 3.5);
        let mut r = Relu::default();
        let y = r.forward_train(&t(&[1, 3], &[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(
            r.backward(&t(&[1, 3], &[5.0, 5.0, 5.0])).unwrap().data(),
            &[0.0, 0.0, 5.0]
        );
    }

    #[test]
    fn batchnorm_training_statistics() {
        let mut bn = BatchNorm::new(2);
        let x = t(&[4, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let y = bn.forward_train(&x).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|s| y.data()[s * 2 + j]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // running stats moved 10% toward the batch statistics
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        assert!(matches!(
            bn.forward_train(&t(&[1, 2], &[1.0, 2.0])),
            Err(Error::BatchTooSmall(1))
        ));
        // inference with a single sample is fine
        assert!(bn.infer(&t(&[1, 2], &[1.0, 2.0])).is_ok());
    }
}
