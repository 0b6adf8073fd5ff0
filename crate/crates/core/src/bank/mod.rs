//! Every parameter set the episodic trainer touches: the agnostic pair, one
//! pair per source domain, and one frozen random classifier per domain.

mod checkpoint;

pub use checkpoint::{checkpoint_load, checkpoint_load_expecting, checkpoint_save, decode, encode, MAGIC, VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Mlp, Rng, Tensor2};

/// Layer widths and the module boundaries of the network.
///
/// The full network is `input_dim → hidden[0] → … → hidden[k-1] → classes`,
/// ReLU everywhere except the final linear layer. The first `split_point`
/// layers form the feature extractor and the rest the classifier. The first
/// `stem_layers` layers may instead be one stem shared by every branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Defaults to `hidden.len()`, i.e. the classifier is the final linear layer.
    #[serde(default)]
    pub split_point: Option<usize>,
    #[serde(default)]
    pub stem_layers: usize,
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        ArchSpec {
            input_dim,
            hidden,
            split_point: None,
            stem_layers: 0,
        }
    }

    pub fn with_split(mut self, split_point: usize) -> Self {
        self.split_point = Some(split_point);
        self
    }

    pub fn with_stem(mut self, stem_layers: usize) -> Self {
        self.stem_layers = stem_layers;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn split(&self) -> usize {
        self.split_point.unwrap_or(self.hidden.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let split = self.split();
        if split == 0 || split >= self.num_layers() {
            return Err(Error::invalid(format!(
                "split_point {split} out of range 1..={}",
                self.num_layers() - 1
            )));
        }
        if self.stem_layers >= split {
            return Err(Error::invalid(format!(
                "stem_layers {} must leave at least one trainable feature layer below split {split}",
                self.stem_layers
            )));
        }
        Ok(())
    }

    /// Widths `input, h0, …, h_{k-1}` (without the class count).
    fn trunk_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .collect()
    }

    /// Output width of the feature extractor.
    pub fn feature_dim(&self) -> usize {
        self.trunk_dims()[self.split()]
    }

    /// Output width of the shared stem, or the input width without one.
    pub fn stem_out_dim(&self) -> usize {
        self.trunk_dims()[self.stem_layers]
    }

    fn build_range(&self, from: usize, to: usize, classes: usize, rng: &mut Rng) -> Result<Mlp> {
        let mut dims = self.trunk_dims();
        dims.push(classes);
        let last = self.num_layers() - 1;
        let acts: Vec<Activation> = (from..to)
            .map(|k| if k == last { Activation::Identity } else { Activation::Relu })
            .collect();
        Mlp::init(&dims[from..=to], &acts, rng)
    }
}

/// Per-domain label-space sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpaces {
    pub per_domain: Vec<usize>,
    /// One label space shared by every domain (homogeneous setting).
    pub shared: bool,
}

impl LabelSpaces {
    pub fn homogeneous(n_domains: usize, classes: usize) -> Self {
        LabelSpaces {
            per_domain: vec![classes; n_domains],
            shared: true,
        }
    }

    pub fn heterogeneous(per_domain: Vec<usize>) -> Self {
        LabelSpaces {
            per_domain,
            shared: false,
        }
    }

    pub fn len(&self) -> usize {
        self.per_domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_domain.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_domain.is_empty() {
            return Err(Error::invalid("at least one source domain is required"));
        }
        if self.per_domain.iter().any(|&k| k < 2) {
            return Err(Error::invalid("every label space needs at least two classes"));
        }
        if self.shared && self.per_domain.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid(format!(
                "shared label space requires equal class counts, got {:?}",
                self.per_domain
            )));
        }
        Ok(())
    }
}

/// A feature extractor with its classifier head(s).
///
/// Domain-specific pairs always have exactly one head. The agnostic pair has
/// one head in the homogeneous setting and one head per domain otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPair {
    pub feature: Mlp,
    pub heads: Vec<Mlp>,
    pub trainable: bool,
}

impl BranchPair {
    pub fn head(&self, domain: usize) -> &Mlp {
        if self.heads.len() == 1 {
            &self.heads[0]
        } else {
            &self.heads[domain]
        }
    }

    pub fn head_index(&self, domain: usize) -> usize {
        if self.heads.len() == 1 {
            0
        } else {
            domain
        }
    }

    pub fn classifier(&self) -> &Mlp {
        &self.heads[0]
    }

    pub fn params_bit_eq(&self, other: &BranchPair) -> bool {
        self.feature.params_bit_eq(&other.feature)
            && self.heads.len() == other.heads.len()
            && self
                .heads
                .iter()
                .zip(&other.heads)
                .all(|(a, b)| a.params_bit_eq(b))
    }
}

/// A linear classifier drawn once at construction and never updated. Only
/// shared references to its parameters are handed out.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomClassifier {
    classifier: Mlp,
}

impl RandomClassifier {
    pub fn new(feature_dim: usize, classes: usize, rng: &mut Rng) -> Self {
        let layer = DenseLayer::init(feature_dim, classes, Activation::Identity, rng);
        RandomClassifier {
            classifier: Mlp::new(vec![layer]).expect("a single layer always chains"),
        }
    }

    pub(crate) fn from_mlp(classifier: Mlp) -> Self {
        RandomClassifier { classifier }
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    pub fn cardinality(&self) -> usize {
        self.classifier.out_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainBank {
    pub arch: ArchSpec,
    pub label_spaces: LabelSpaces,
    /// Bottom layers shared by every branch; a single copy.
    pub stem: Option<Mlp>,
    pub agnostic: BranchPair,
    pub specific: Vec<BranchPair>,
    pub random: Vec<RandomClassifier>,
}

impl DomainBank {
    /// Builds the agnostic pair, `n` domain-specific pairs and `n` random
    /// classifiers, all independently initialised from `rng`.
    pub fn build(arch: &ArchSpec, label_spaces: &LabelSpaces, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        label_spaces.validate()?;
        let (stem_end, split, top) = (arch.stem_layers, arch.split(), arch.num_layers());
        let stem = if stem_end > 0 {
            // width of the output layer is irrelevant for a stem that ends below it
            Some(arch.build_range(0, stem_end, 0, rng)?)
        } else {
            None
        };
        let head_count = if label_spaces.shared { 1 } else { label_spaces.len() };
        let agnostic = BranchPair {
            feature: arch.build_range(stem_end, split, 0, rng)?,
            heads: (0..head_count)
                .map(|d| arch.build_range(split, top, label_spaces.per_domain[d], rng))
                .collect::<Result<_>>()?,
            trainable: true,
        };
        let specific = label_spaces
            .per_domain
            .iter()
            .map(|&k| {
                Ok(BranchPair {
                    feature: arch.build_range(stem_end, split, 0, rng)?,
                    heads: vec![arch.build_range(split, top, k, rng)?],
                    trainable: true,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let random = label_spaces
            .per_domain
            .iter()
            .map(|&k| RandomClassifier::new(arch.feature_dim(), k, rng))
            .collect();
        Ok(DomainBank {
            arch: arch.clone(),
            label_spaces: label_spaces.clone(),
            stem,
            agnostic,
            specific,
            random,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.specific.len()
    }

    pub fn homogeneous(&self) -> bool {
        self.label_spaces.shared
    }

    /// Applies the shared stem, if any.
    pub fn stem_forward(&self, x: &Tensor2) -> Result<Tensor2> {
        match &self.stem {
            Some(stem) => stem.predict(x),
            None => Ok(x.clone()),
        }
    }

    /// Agnostic features `θ(x)` for raw inputs.
    pub fn agnostic_features(&self, x: &Tensor2) -> Result<Tensor2> {
        self.agnostic.feature.predict(&self.stem_forward(x)?)
    }

    /// Deployed model logits `ψ(θ(x))` (head for `domain` when heterogeneous).
    pub fn agnostic_logits(&self, x: &Tensor2, domain: usize) -> Result<Tensor2> {
        self.agnostic.head(domain).predict(&self.agnostic_features(x)?)
    }

    /// Fixed domain-specific branches: subsequent domain-specific updates are no-ops.
    pub fn freeze_specific(&mut self) {
        self.specific.iter_mut().for_each(|b| b.trainable = false);
    }

    pub fn unfreeze_specific(&mut self) {
        self.specific.iter_mut().for_each(|b| b.trainable = true);
    }

    /// The agnostic feature extractor with the stem prepended, as a single
    /// network on raw inputs.
    pub fn deployed_feature(&self) -> Result<Mlp> {
        match &self.stem {
            Some(stem) => {
                let mut layers = stem.layers.clone();
                layers.extend(self.agnostic.feature.layers.iter().cloned());
                Mlp::new(layers)
            }
            None => Ok(self.agnostic.feature.clone()),
        }
    }

    /// Domain-specific feature extractor `j` with the stem prepended.
    pub fn specific_feature(&self, j: usize) -> Result<Mlp> {
        match &self.stem {
            Some(stem) => {
                let mut layers = stem.layers.clone();
                layers.extend(self.specific[j].feature.layers.iter().cloned());
                Mlp::new(layers)
            }
            None => Ok(self.specific[j].feature.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    fn vlcs_arch() -> ArchSpec {
        ArchSpec::new(16, vec![1024, 128]).with_split(2)
    }

    #[test]
    fn vlcs_style_bank() {
        let bank = DomainBank::build(
            &vlcs_arch(),
            &LabelSpaces::homogeneous(4, 7),
            &mut seeded_rng(0),
        )
        .unwrap();
        let features = 1 + bank.specific.len();
        let heads = bank.agnostic.heads.len() + bank.specific.iter().map(|b| b.heads.len()).sum::<usize>();
        assert_eq!((features, heads, bank.random.len()), (5, 5, 4));
        assert_eq!(bank.agnostic.feature.out_dim(), 128);
        assert_eq!(bank.agnostic.classifier().in_dim(), 128);
        assert_eq!(bank.agnostic.classifier().out_dim(), 7);
        assert_eq!(bank.agnostic.feature.layers.len(), 2);
        assert!(bank.specific.iter().all(|b| b.classifier().out_dim() == 7));
        let last = bank.agnostic.classifier().layers.last().unwrap();
        assert_eq!(last.activation, Activation::Identity);
    }

    #[test]
    fn single_domain_bank() {
        let bank = DomainBank::build(
            &ArchSpec::new(4, vec![8]),
            &LabelSpaces::homogeneous(1, 3),
            &mut seeded_rng(0),
        )
        .unwrap();
        assert_eq!(bank.n_domains(), 1);
        assert_eq!(bank.random.len(), 1);
    }

    #[test]
    fn heterogeneous_cardinalities() {
        let bank = DomainBank::build(
            &ArchSpec::new(6, vec![12, 8]),
            &LabelSpaces::heterogeneous(vec![10, 5, 3]),
            &mut seeded_rng(1),
        )
        .unwrap();
        let cards: Vec<usize> = bank.random.iter().map(RandomClassifier::cardinality).collect();
        assert_eq!(cards, vec![10, 5, 3]);
        let heads: Vec<usize> = bank.agnostic.heads.iter().map(Mlp::out_dim).collect();
        assert_eq!(heads, vec![10, 5, 3]);
        assert_eq!(bank.agnostic.head(1).out_dim(), 5);
        assert_eq!(bank.random[2].classifier().in_dim(), 8);
    }

    #[test]
    fn split_point_validation() {
        let spaces = LabelSpaces::homogeneous(2, 3);
        for bad in [0, 3] {
            let arch = ArchSpec::new(4, vec![8, 8]).with_split(bad);
            assert!(DomainBank::build(&arch, &spaces, &mut seeded_rng(0)).is_err());
        }
        let stem_too_deep = ArchSpec::new(4, vec![8, 8]).with_split(1).with_stem(1);
        assert!(DomainBank::build(&stem_too_deep, &spaces, &mut seeded_rng(0)).is_err());
        let mismatched = LabelSpaces {
            per_domain: vec![3, 4],
            shared: true,
        };
        assert!(DomainBank::build(&ArchSpec::new(4, vec![8]), &mismatched, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn intermediate_split() {
        let arch = ArchSpec::new(5, vec![9, 7, 6]).with_split(1);
        let bank = DomainBank::build(&arch, &LabelSpaces::homogeneous(2, 4), &mut seeded_rng(3)).unwrap();
        assert_eq!(bank.agnostic.feature.out_dim(), 9);
        assert_eq!(bank.agnostic.classifier().layers.len(), 3);
        assert_eq!(bank.random[0].classifier().in_dim(), 9);
        assert_eq!(bank.random[0].classifier().layers.len(), 1);
    }

    #[test]
    fn seeding() {
        let arch = ArchSpec::new(4, vec![6]);
        let spaces = LabelSpaces::homogeneous(3, 3);
        let a = DomainBank::build(&arch, &spaces, &mut seeded_rng(5)).unwrap();
        let b = DomainBank::build(&arch, &spaces, &mut seeded_rng(5)).unwrap();
        let c = DomainBank::build(&arch, &spaces, &mut seeded_rng(6)).unwrap();
        assert_eq!(a, b);
        assert!(a.agnostic.params_bit_eq(&b.agnostic));
        for (x, y) in a.specific.iter().zip(&c.specific) {
            assert!(!x.params_bit_eq(y));
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(!a.specific[i].params_bit_eq(&a.specific[j]));
            }
        }
    }

    #[test]
    fn stem_is_one_copy() {
        let arch = ArchSpec::new(4, vec![6, 5]).with_stem(1);
        let mut bank = DomainBank::build(&arch, &LabelSpaces::homogeneous(2, 3), &mut seeded_rng(2)).unwrap();
        assert_eq!(bank.agnostic.feature.in_dim(), 6);
        let x = Tensor2::from_fn(3, 4, |i, j| (i + j) as f64 * 0.3 + 0.1);
        let before: Vec<Tensor2> = (0..2).map(|j| bank.specific_feature(j).unwrap().predict(&x).unwrap()).collect();
        let before_agn = bank.deployed_feature().unwrap().predict(&x).unwrap();
        bank.stem.as_mut().unwrap().layers[0].bias.data_mut()[0] += 1.0;
        for (j, b) in before.iter().enumerate() {
            assert_ne!(&bank.specific_feature(j).unwrap().predict(&x).unwrap(), b);
        }
        assert_ne!(bank.deployed_feature().unwrap().predict(&x).unwrap(), before_agn);
    }
}
