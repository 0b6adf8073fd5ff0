use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Row-wise softmax, shifted by the row max.
pub fn softmax(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert_eq!(row.len(), cols);
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - one_hot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    if labels.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty batch"));
    }
    if logits.rows() != labels.len() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} rows", labels.len()),
            logits.rows(),
        ));
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    logits.check_finite("softmax_cross_entropy input")?;
    let n = labels.len() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() / n;
        }
        row[y] -= 1.0 / n;
    }
    let loss = (loss / n).max(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::{gaussian_init, seeded_rng};
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 5, 10] {
            let logits = Tensor2::from_fn(3, k, |_, _| 0.25);
            let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, k - 1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-9);
        }
        let (l5, _) = softmax_cross_entropy(&Tensor2::zeros(1, 5), &[2]).unwrap();
        assert!((l5 - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn saturated_correct_logit_has_zero_loss() {
        let mut logits = Tensor2::zeros(1, 4);
        logits.set(0, 2, 1000.0);
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = gaussian_init(4, 3, 2.0, &mut seeded_rng(3));
        let (_, grad) = softmax_cross_entropy(&logits, &[0, 2, 1, 1]).unwrap();
        for r in 0..4 {
            assert!(grad.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor2::zeros(1, 3), &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(softmax_cross_entropy(&Tensor2::zeros(0, 3), &[]).is_err());
        assert!(softmax_cross_entropy(&Tensor2::zeros(2, 3), &[0]).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariant(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let logits = gaussian_init(3, 4, 3.0, &mut seeded_rng(seed));
            let labels = [0, 3, 1];
            let (a, _) = softmax_cross_entropy(&logits, &labels).unwrap();
            let (b, _) = softmax_cross_entropy(&logits.map(|v| v + shift), &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0);
        }
    }
}
