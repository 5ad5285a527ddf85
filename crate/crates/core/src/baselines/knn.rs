use crate::error::{Error, Result};

/// Brute-force k-nearest-neighbour classifier under Euclidean distance.
#[derive(Debug, Clone)]
pub struct KnnModel {
    pub k: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl KnnModel {
    pub fn fit(inputs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::NotFitted);
        }
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "k must be a positive odd number, got {k}"
            )));
        }
        if k > inputs.len() {
            return Err(Error::Config(format!(
                "k = {k} exceeds training set size {}",
                inputs.len()
            )));
        }
        let d = inputs[0].len();
        if inputs.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("training rows have different widths".into()));
        }
        Ok(KnnModel {
            k,
            inputs: inputs.to_vec(),
            labels: labels.to_vec(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if self.inputs.is_empty() {
            return Err(Error::NotFitted);
        }
        if x.len() != self.inputs[0].len() {
            return Err(Error::Shape(format!(
                "query has {} features, model has {}",
                x.len(),
                self.inputs[0].len()
            )));
        }
        let mut dist: Vec<(f64, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        // stable on equal distances: earlier training rows first
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbours: Vec<usize> = dist[..self.k]
            .iter()
            .map(|&(_, i)| self.labels[i])
            .collect();
        Ok(crate::dataio::majority(&neighbours).expect("k >= 1"))
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}
