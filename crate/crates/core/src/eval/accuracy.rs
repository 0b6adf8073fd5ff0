use crate::bank::DomainBank;
use crate::data::{DomainData, MultiDomainDataset, SplitSel};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Tensor2};

/// Index of the largest entry. Ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predictions(logits: &Tensor2) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}

pub fn count_correct(logits: &Tensor2, labels: &[usize]) -> Result<usize> {
    if logits.rows() != labels.len() {
        return Err(Error::shape("count_correct", logits.rows(), labels.len()));
    }
    Ok(predictions(logits).iter().zip(labels).filter(|(p, y)| p == y).count())
}

/// Top-1 accuracy of `classifier(feature(x))` on the selected rows.
pub fn evaluate_accuracy(feature: &Mlp, classifier: &Mlp, data: &DomainData, split: impl Into<SplitSel>) -> Result<f64> {
    let sel = split.into();
    let (x, y) = data.view(sel);
    if y.is_empty() {
        return Err(Error::invalid(format!("domain '{}' has no rows in split {sel:?}", data.name)));
    }
    let logits = classifier.predict(&feature.predict(&x)?)?;
    Ok(count_correct(&logits, &y)? as f64 / y.len() as f64)
}

/// Accuracy of the deployed agnostic model on the target domain. Training
/// never reads the target, so every target row counts regardless of its tag.
pub fn target_accuracy(bank: &DomainBank, dataset: &MultiDomainDataset) -> Result<f64> {
    let target = &dataset.target;
    if !dataset.homogeneous {
        return Err(Error::Config(
            "target accuracy needs a shared label space; use the linear probe for heterogeneous targets".into(),
        ));
    }
    evaluate_accuracy(&bank.deployed_feature()?, bank.agnostic.classifier(), target, SplitSel::All)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::{Activation, DenseLayer};

    fn identity_model(dim: usize) -> Mlp {
        let layer = DenseLayer::new(Tensor2::identity(dim), vec![0.0; dim], Activation::Identity).unwrap();
        Mlp::new(vec![layer]).unwrap()
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -2.0]), 0);
    }

    #[test]
    fn constant_classifier_scores_one_over_k() {
        let k = 4;
        let n = 40;
        let features = Tensor2::from_fn(n, 2, |r, c| (r + c) as f64);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let data = DomainData::new("d", features, labels, k, vec![Split::Test; n]).unwrap();
        // Zero weights and zero bias: every logit ties, so class 0 always wins.
        let head = Mlp::new(vec![DenseLayer::new(Tensor2::zeros(2, k), vec![0.0; k], Activation::Identity).unwrap()]).unwrap();
        let acc = evaluate_accuracy(&identity_model(2), &head, &data, Split::Test).unwrap();
        assert_eq!(acc, 1.0 / k as f64);
    }

    #[test]
    fn empty_split_is_an_error() {
        let data = DomainData::new("d", Tensor2::zeros(3, 2), vec![0, 1, 0], 2, vec![Split::Train; 3]).unwrap();
        let m = identity_model(2);
        assert!(evaluate_accuracy(&m, &m, &data, Split::Test).is_err());
        assert_eq!(evaluate_accuracy(&m, &m, &data, SplitSel::All).unwrap(), 2.0 / 3.0);
    }
}
