use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let k = match *logits.shape() {
        [_, k] => k,
        ref s => {
            return Err(Error::Shape(format!(
                "softmax expects [batch, classes], got {s:?}"
            )))
        }
    };
    let data = logits.data().chunks(k).flat_map(softmax).collect();
    Tensor::new(logits.shape(), data)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of softmax(logits) against integer labels, and its
/// gradient with respect to the logits.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let probs = softmax_rows(logits)?;
    let (b, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{b} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Config(format!(
            "label {l} out of range for {k} classes"
        )));
    }
    let mut grad = probs.clone().into_data();
    let mut loss = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        loss -= probs.row(s)[y].max(f64::MIN_POSITIVE).ln();
        grad[s * k + y] -= 1.0;
    }
    let inv_b = 1.0 / b as f64;
    grad.iter_mut().for_each(|g| *g *= inv_b);
    Ok((loss * inv_b, Tensor::new(&[b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_softmax() {
        for p in softmax(&[0.0, 0.0, 0.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn cross_entropy_zero_iff_confident() {
        let logits = Tensor::new(&[1, 3], vec![0.0, 800.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[1]).unwrap();
        assert_eq!(loss, 0.0);
        let (loss, _) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss > 0.0);
        assert!(cross_entropy_loss(&logits, &[3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-50.0f64..50.0, 1..30)) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn cross_entropy_non_negative(z in prop::collection::vec(-20.0f64..20.0, 2..10), pick in 0usize..10) {
            let k = z.len();
            let logits = Tensor::new(&[1, k], z).unwrap();
            let (loss, grad) = cross_entropy_loss(&logits, &[pick % k]).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.data().iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
