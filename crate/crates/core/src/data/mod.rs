//! Multi-domain datasets: types, synthetic shift generators, feature-CSV
//! I/O and per-domain batching.

mod batcher;
mod feature_csv;
mod synth;

pub use batcher::DomainBatcher;
pub use feature_csv::{load_feature_csv, read_domains_csv, write_domain_csv, write_domains_csv, CsvOptions};
pub use synth::{gen_synthetic_heterogeneous, gen_synthetic_homogeneous, HeteroSpec, HomogSpec};

use std::fmt;
use std::str::FromStr;

use crate::bank::LabelSpaces;
use crate::error::{Error, Result};
use crate::nn::{Rng, Tensor2};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// Which rows of a domain an evaluation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Only(Split),
    All,
}

impl From<Split> for SplitSel {
    fn from(s: Split) -> Self {
        SplitSel::Only(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub name: String,
    pub features: Tensor2,
    pub labels: Vec<usize>,
    pub label_space: usize,
    pub splits: Vec<Split>,
}

impl DomainData {
    pub fn new(
        name: impl Into<String>,
        features: Tensor2,
        labels: Vec<usize>,
        label_space: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let name = name.into();
        if features.rows() != labels.len() || splits.len() != labels.len() {
            return Err(Error::shape(
                "DomainData::new",
                format!("{} rows", features.rows()),
                format!("{} labels, {} split tags", labels.len(), splits.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= label_space) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: label_space,
            });
        }
        Ok(DomainData {
            name,
            features,
            labels,
            label_space,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, sel: SplitSel) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| match sel {
                SplitSel::All => true,
                SplitSel::Only(s) => self.splits[i] == s,
            })
            .collect()
    }

    /// Features and labels of the selected rows.
    pub fn view(&self, sel: impl Into<SplitSel>) -> (Tensor2, Vec<usize>) {
        let idx = self.indices(sel.into());
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (self.features.select_rows(&idx), labels)
    }

    /// Re-tags every row with a random `train_frac` / rest train/test split.
    pub fn resplit(&mut self, train_frac: f64, rng: &mut Rng) {
        self.splits = random_splits(self.len(), &[(Split::Train, train_frac), (Split::Test, 1.0)], rng);
    }
}

/// Assigns split tags by shuffling row indices and cutting at cumulative
/// fractions; the last entry takes the remainder.
pub(crate) fn random_splits(n: usize, fracs: &[(Split, f64)], rng: &mut Rng) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut tags = vec![fracs.last().map_or(Split::Train, |f| f.0); n];
    let mut start = 0usize;
    let mut acc = 0.0;
    for (k, &(split, frac)) in fracs.iter().enumerate() {
        let end = if k + 1 == fracs.len() {
            n
        } else {
            acc += frac;
            ((acc * n as f64).round() as usize).min(n)
        };
        for &i in &order[start..end.max(start)] {
            tags[i] = split;
        }
        start = end.max(start);
    }
    tags
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    pub sources: Vec<DomainData>,
    pub target: DomainData,
    pub homogeneous: bool,
    /// Non-fatal observations made while building the dataset.
    pub warnings: Vec<String>,
}

impl MultiDomainDataset {
    pub fn new(sources: Vec<DomainData>, target: DomainData, homogeneous: bool) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("a dataset needs at least one source domain"));
        }
        let dim = target.dim();
        for d in &sources {
            if d.dim() != dim {
                return Err(Error::shape("MultiDomainDataset", dim, d.dim()));
            }
            if d.name == target.name {
                return Err(Error::invalid(format!(
                    "target domain '{}' is also a source",
                    d.name
                )));
            }
            if d.is_empty() {
                return Err(Error::invalid(format!("domain '{}' is empty", d.name)));
            }
        }
        if homogeneous
            && sources
                .iter()
                .any(|d| d.label_space != target.label_space)
        {
            return Err(Error::invalid(
                "homogeneous dataset requires one label space across all domains",
            ));
        }
        Ok(MultiDomainDataset {
            sources,
            target,
            homogeneous,
            warnings: Vec::new(),
        })
    }

    /// Builds a leave-one-domain-out dataset with `all[target]` held out.
    pub fn leave_one_out(all: &[DomainData], target: usize, homogeneous: bool) -> Result<Self> {
        if target >= all.len() {
            return Err(Error::invalid(format!(
                "held-out index {target} out of range for {} domains",
                all.len()
            )));
        }
        let sources = all
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target)
            .map(|(_, d)| d.clone())
            .collect();
        MultiDomainDataset::new(sources, all[target].clone(), homogeneous)
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn label_spaces(&self) -> LabelSpaces {
        LabelSpaces {
            per_domain: self.sources.iter().map(|d| d.label_space).collect(),
            shared: self.homogeneous,
        }
    }

    /// All domains, sources first.
    pub fn all_domains(&self) -> Vec<&DomainData> {
        self.sources.iter().chain(std::iter::once(&self.target)).collect()
    }
}
