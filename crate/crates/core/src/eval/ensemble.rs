use crate::bank::{ArchSpec, DomainBank};
use crate::data::{DomainData, MultiDomainDataset, SplitSel};
use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::train::{run_training, TrainConfig, Variant};

use super::accuracy::count_correct;

/// Accuracy of the averaged softmax outputs of several deployed models.
pub fn ensemble_accuracy(banks: &[DomainBank], data: &DomainData, split: impl Into<SplitSel>) -> Result<f64> {
    let Some(first) = banks.first() else {
        return Err(Error::invalid("ensemble needs at least one member"));
    };
    let split = split.into();
    let (x, y) = data.view(split);
    if y.is_empty() {
        return Err(Error::invalid(format!("domain '{}' has no rows in split {split:?}", data.name)));
    }
    let mut avg = softmax(&first.agnostic_logits(&x, 0)?);
    for bank in &banks[1..] {
        avg.axpy(1.0, &softmax(&bank.agnostic_logits(&x, 0)?))?;
    }
    avg.scale(1.0 / banks.len() as f64);
    Ok(count_correct(&avg, &y)? as f64 / y.len() as f64)
}

/// Trains `n_models` independent AGG models (seeds `seed, seed+1, ...`) and
/// reports the target accuracy of their averaged softmax. Passing the number
/// of sources plus one matches the parameter count of an episodic bank.
pub fn ensemble_baseline(
    dataset: &MultiDomainDataset,
    arch: &ArchSpec,
    config: &TrainConfig,
    n_models: usize,
) -> Result<f64> {
    if !dataset.homogeneous {
        return Err(Error::Config("the ensemble baseline needs a shared label space".into()));
    }
    if n_models == 0 {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    let banks = (0..n_models as u64)
        .map(|k| {
            let mut cfg = config.clone();
            cfg.variant = Variant::AGG;
            cfg.seed = config.seed.wrapping_add(k);
            run_training(dataset, arch, &cfg).map(|(bank, _)| bank)
        })
        .collect::<Result<Vec<_>>>()?;
    ensemble_accuracy(&banks, &dataset.target, SplitSel::All)
}
