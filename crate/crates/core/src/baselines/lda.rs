use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal loading of the pooled covariance: `SHRINKAGE * trace / dim`.
pub const SHRINKAGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Priors {
    #[default]
    Equal,
    Empirical,
}

/// Linear discriminant analysis with a shared, shrinkage-regularized covariance.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub classes: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    /// `covariance^-1 * mean_c` per class.
    coef: Vec<DVector<f64>>,
    intercept: Vec<f64>,
}

impl LdaModel {
    pub fn fit(inputs: &[Vec<f64>], labels: &[usize], priors: Priors) -> Result<Self> {
        let n = inputs.len();
        if n != labels.len() {
            return Err(Error::Shape(format!(
                "{n} rows but {} labels",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(Error::NotFitted);
        }
        let d = inputs[0].len();
        if d == 0 || inputs.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(
                "training rows must share a positive width".into(),
            ));
        }
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::DegenerateData("LDA needs at least 2 classes".into()));
        }
        if n < d + 1 {
            return Err(Error::DegenerateData(format!(
                "LDA needs at least {} samples for {d} features, got {n}",
                d + 1
            )));
        }

        let k = classes.len();
        let mut means = vec![DVector::<f64>::zeros(d); k];
        let mut counts = vec![0usize; k];
        let class_of = |l: usize| classes.binary_search(&l).expect("label is in class list");
        for (row, &l) in inputs.iter().zip(labels) {
            let c = class_of(l);
            counts[c] += 1;
            for (m, v) in means[c].iter_mut().zip(row) {
                *m += v;
            }
        }
        for (m, &cnt) in means.iter_mut().zip(&counts) {
            *m /= cnt as f64;
        }

        let mut cov = DMatrix::<f64>::zeros(d, d);
        for (row, &l) in inputs.iter().zip(labels) {
            let diff = DVector::from_column_slice(row) - &means[class_of(l)];
            cov.ger(1.0, &diff, &diff, 1.0);
        }
        let dof = if n > k { n - k } else { n };
        cov /= dof as f64;
        let lambda = SHRINKAGE * cov.trace() / d as f64;
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::DegenerateData(
                "within-class scatter is zero; features carry no variation".into(),
            ));
        }
        for i in 0..d {
            cov[(i, i)] += lambda;
        }
        let chol = cov.cholesky().ok_or_else(|| {
            Error::DegenerateData("pooled covariance is singular after regularization".into())
        })?;

        let prior: Vec<f64> = match priors {
            Priors::Equal => vec![1.0 / k as f64; k],
            Priors::Empirical => counts.iter().map(|&c| c as f64 / n as f64).collect(),
        };
        let coef: Vec<DVector<f64>> = means.iter().map(|m| chol.solve(m)).collect();
        let intercept = means
            .iter()
            .zip(&coef)
            .zip(&prior)
            .map(|((m, c), p)| -0.5 * m.dot(c) + p.ln())
            .collect();
        if coef.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::DegenerateData(
                "non-finite discriminant coefficients".into(),
            ));
        }

        Ok(LdaModel {
            classes,
            means: means.iter().map(|m| m.iter().copied().collect()).collect(),
            priors: prior,
            coef,
            intercept,
        })
    }

    /// Linear discriminant score per class, in `classes` order.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.means.first().map_or(0, Vec::len);
        if x.len() != d {
            return Err(Error::Shape(format!(
                "query has {} features, model has {d}",
                x.len()
            )));
        }
        let x = DVector::from_column_slice(x);
        Ok(self
            .coef
            .iter()
            .zip(&self.intercept)
            .map(|(c, b)| x.dot(c) + b)
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let s = self.scores(x)?;
        Ok(self.classes[crate::nn::argmax(&s)])
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}
