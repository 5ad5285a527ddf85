use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moment buffers are created on the first step and must
/// match the parameter layout on every later step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let ok = config.lr > 0.0
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {config:?}")));
        }
        Ok(Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn update(&mut self, params: Vec<(&mut [f64], &[f64])>) -> Result<()> {
        if self.step == 0 {
            self.first = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if params.len() != self.first.len()
            || params
                .iter()
                .zip(&self.first)
                .any(|((p, g), m)| p.len() != m.len() || g.len() != m.len())
        {
            return Err(Error::Shape(
                "Adam state does not match parameter layout".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_run(x0: f64, lr: f64, steps: usize, grad: impl Fn(f64) -> f64) -> f64 {
        let mut adam = Adam::new(AdamConfig {
            lr,
            ..AdamConfig::default()
        })
        .unwrap();
        let mut x = [x0];
        for _ in 0..steps {
            let g = [grad(x[0])];
            adam.update(vec![(&mut x[..], &g[..])]).unwrap();
        }
        assert_eq!(adam.step, steps as u64);
        x[0]
    }

    #[test]
    fn zero_gradient_keeps_parameter() {
        assert_eq!(scalar_run(1.5, 1e-3, 10, |_| 0.0), 1.5);
    }

    #[test]
    fn constant_gradient_descends() {
        assert!(scalar_run(0.0, 1e-3, 100, |_| 2.0) < 0.0);
        assert!(scalar_run(0.0, 1e-3, 100, |_| -0.5) > 0.0);
    }

    #[test]
    fn quadratic_bowl() {
        let x = scalar_run(5.0, 0.1, 500, |x| 2.0 * x);
        assert!(x.abs() < 1e-2, "x = {x}");
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut a = [0.0; 2];
        adam.update(vec![(&mut a[..], &[1.0, 1.0][..])]).unwrap();
        let mut b = [0.0; 3];
        assert!(adam.update(vec![(&mut b[..], &[1.0; 3][..])]).is_err());
        assert!(Adam::new(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        })
        .is_err());
    }
}
