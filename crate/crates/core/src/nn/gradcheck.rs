//! Central finite-difference checks of the analytic backward passes.
//!
//! Each layer is checked against the scalar `sum(r * layer(x))` for a fixed
//! random projection `r`, which makes every output entry contribute. The full
//! model is checked against the mean cross-entropy loss. All forwards run in
//! training mode, so batchnorm is differentiated through its batch statistics.

use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use super::layers::{BatchNorm, Conv1d, Dense, GlobalAvgPool, Layer, MaxPool, Relu};
use super::loss::cross_entropy_loss;
use super::model::{Model, ModelSpec};
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Entries examined per tensor; larger tensors are sampled at a fixed stride.
const MAX_CHECKS: usize = 256;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn sample_indices(n: usize) -> impl Iterator<Item = usize> {
    let stride = n.div_ceil(MAX_CHECKS).max(1);
    (0..n).step_by(stride)
}

fn central<F: FnMut(f64) -> Result<f64>>(x0: f64, mut f: F) -> Result<f64> {
    Ok((f(x0 + STEP)? - f(x0 - STEP)?) / (2.0 * STEP))
}

fn random_tensor(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape is non-empty")
}

fn projected(layer: &Layer, x: &Tensor, r: &Tensor) -> Result<f64> {
    let y = layer.clone().forward_train(x)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks input and parameter gradients of one layer at input `x`.
pub fn check_layer(name: &str, layer: &Layer, x: &Tensor, seed: u64) -> Result<GradReport> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut analytic = layer.clone();
    let y = analytic.forward_train(x)?;
    let r = random_tensor(&mut rng, y.shape());
    let dx = analytic.backward(&r)?;
    let param_grads: Vec<Vec<f64>> = analytic
        .params_and_grads()
        .into_iter()
        .map(|(_, g)| g.to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in sample_indices(x.len()) {
        let numeric = central(x.data()[i], |v| {
            let mut xp = x.clone();
            xp.data_mut()[i] = v;
            projected(layer, &xp, &r)
        })?;
        worst = worst.max(rel_error(dx.data()[i], numeric));
        checked += 1;
    }
    for (p, grads) in param_grads.iter().enumerate() {
        for i in sample_indices(grads.len()) {
            let numeric = central(layer.clone().params_and_grads()[p].0[i], |v| {
                let mut lp = layer.clone();
                lp.params_and_grads()[p].0[i] = v;
                projected(&lp, x, &r)
            })?;
            worst = worst.max(rel_error(grads[i], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    })
}

fn model_loss(model: &Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = model.clone().forward_train(x)?;
    Ok(cross_entropy_loss(&logits, labels)?.0)
}

/// Checks every parameter (sampled) and the input gradient of a full model
/// under mean cross-entropy.
pub fn check_model(model: &Model, x: &Tensor, labels: &[usize]) -> Result<GradReport> {
    let mut analytic = model.clone();
    let logits = analytic.forward_train(x)?;
    let (_, dlogits) = cross_entropy_loss(&logits, labels)?;
    let dx = analytic.backward(&dlogits)?;
    let param_grads: Vec<Vec<f64>> = analytic
        .params_and_grads()
        .into_iter()
        .map(|(_, g)| g.to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in sample_indices(x.len()) {
        let numeric = central(x.data()[i], |v| {
            let mut xp = x.clone();
            xp.data_mut()[i] = v;
            model_loss(model, &xp, labels)
        })?;
        worst = worst.max(rel_error(dx.data()[i], numeric));
        checked += 1;
    }
    for (p, grads) in param_grads.iter().enumerate() {
        for i in sample_indices(grads.len()) {
            let numeric = central(model.clone().params_and_grads()[p].0[i], |v| {
                let mut mp = model.clone();
                mp.params_and_grads()[p].0[i] = v;
                model_loss(&mp, x, labels)
            })?;
            worst = worst.max(rel_error(grads[i], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: "full_model".into(),
        max_rel_error: worst,
        checked,
    })
}

/// Checks the softmax + cross-entropy gradient with respect to the logits.
pub fn check_softmax_cross_entropy(seed: u64) -> Result<GradReport> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let logits = random_tensor(&mut rng, &[4, 5]);
    let labels = [0, 3, 4, 1];
    let (_, grad) = cross_entropy_loss(&logits, &labels)?;
    let mut worst = 0.0f64;
    for i in 0..logits.len() {
        let numeric = central(logits.data()[i], |v| {
            let mut lp = logits.clone();
            lp.data_mut()[i] = v;
            Ok(cross_entropy_loss(&lp, &labels)?.0)
        })?;
        worst = worst.max(rel_error(grad.data()[i], numeric));
    }
    Ok(GradReport {
        name: "softmax_cross_entropy".into(),
        max_rel_error: worst,
        checked: logits.len(),
    })
}

/// One check per layer kind on small random shapes.
pub fn layer_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut reports = Vec::new();

    let conv = Layer::Conv(Conv1d::init(2, 3, 3, &mut rng));
    let x = random_tensor(&mut rng, &[3, 2, 9]);
    reports.push(check_layer("conv1d", &conv, &x, seed + 1)?);

    let mut bn = BatchNorm::new(3);
    bn.gamma = vec![0.7, 1.3, -0.4];
    bn.beta = vec![0.1, -0.2, 0.3];
    let x = random_tensor(&mut rng, &[4, 3, 5]);
    reports.push(check_layer(
        "batchnorm_conv",
        &Layer::BatchNorm(bn),
        &x,
        seed + 2,
    )?);

    let mut bn = BatchNorm::new(4);
    bn.gamma = vec![1.1, 0.5, 2.0, -0.8];
    let x = random_tensor(&mut rng, &[5, 4]);
    reports.push(check_layer(
        "batchnorm_dense",
        &Layer::BatchNorm(bn),
        &x,
        seed + 3,
    )?);

    // keep inputs away from the kink at 0
    let mut x = random_tensor(&mut rng, &[3, 10]);
    x.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.signum() * (v.abs() + 0.05));
    reports.push(check_layer(
        "relu",
        &Layer::Relu(Relu::default()),
        &x,
        seed + 4,
    )?);

    let x = random_tensor(&mut rng, &[2, 3, 8]);
    reports.push(check_layer(
        "maxpool",
        &Layer::MaxPool(MaxPool::new(2)),
        &x,
        seed + 5,
    )?);

    let x = random_tensor(&mut rng, &[2, 4, 5]);
    reports.push(check_layer(
        "global_avg_pool",
        &Layer::GlobalAvgPool(GlobalAvgPool::default()),
        &x,
        seed + 6,
    )?);

    let dense = Layer::Dense(Dense::init(5, 4, &mut rng));
    let x = random_tensor(&mut rng, &[3, 5]);
    reports.push(check_layer("dense", &dense, &x, seed + 7)?);

    reports.push(check_softmax_cross_entropy(seed + 8)?);
    Ok(reports)
}

/// Full-model check on the 4-class toy network with a batch of 6.
pub fn model_check(seed: u64) -> Result<GradReport> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let model = Model::new(ModelSpec::toy(4), seed)?;
    let x = random_tensor(&mut rng, &[6, 8]);
    let labels = [0, 1, 2, 3, 1, 2];
    check_model(&model, &x, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for r in layer_suite(11).unwrap() {
            assert!(
                r.passes(LAYER_TOLERANCE),
                "{} max rel error {}",
                r.name,
                r.max_rel_error
            );
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn full_model_passes() {
        let r = model_check(5).unwrap();
        assert!(
            r.passes(MODEL_TOLERANCE),
            "max rel error {}",
            r.max_rel_error
        );
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(rel_error(1.0, 1.1) > LAYER_TOLERANCE);
        assert!(rel_error(2.0, 2.0) == 0.0);
    }
}
