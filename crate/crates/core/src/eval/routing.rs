use std::io::Write;

use crate::bank::DomainBank;
use crate::data::{MultiDomainDataset, Split};
use crate::error::{Error, Result};

use super::accuracy::count_correct;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingMode {
    /// `x_i → θ → ψ_j`: agnostic features into domain-specific classifiers.
    SharedFeature,
    /// `x_i → θ_j → ψ`: domain-specific features into the agnostic classifier.
    SharedClassifier,
}

impl RoutingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::SharedFeature => "shared_feature",
            RoutingMode::SharedClassifier => "shared_classifier",
        }
    }
}

/// `entries[i][j]` is the accuracy of domain `i`'s test rows routed through
/// module `j`. The diagonal holds the matched-domain reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix {
    pub mode: RoutingMode,
    pub domains: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl RoutingMatrix {
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.entries.len();
        if n < 2 {
            return f64::NAN;
        }
        let mut sum = 0.0;
        for (i, row) in self.entries.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    sum += v;
                }
            }
        }
        sum / (n * (n - 1)) as f64
    }

    /// Square CSV: a `domain` column followed by one column per module.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "domain")?;
        for d in &self.domains {
            write!(w, ",{d}")?;
        }
        writeln!(w)?;
        for (name, row) in self.domains.iter().zip(&self.entries) {
            write!(w, "{name}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Cross-domain routing accuracies on the sources' test rows, in both modes.
pub fn routing_analysis(bank: &DomainBank, dataset: &MultiDomainDataset) -> Result<(RoutingMatrix, RoutingMatrix)> {
    if !dataset.homogeneous || !bank.homogeneous() {
        return Err(Error::Config(
            "routing analysis needs a shared label space across source domains".into(),
        ));
    }
    let n = bank.n_domains();
    if dataset.n_sources() != n {
        return Err(Error::shape("routing_analysis", n, dataset.n_sources()));
    }
    let mut feat = vec![vec![0.0; n]; n];
    let mut clf = vec![vec![0.0; n]; n];
    for (i, d) in dataset.sources.iter().enumerate() {
        let (x, y) = d.view(Split::Test);
        if y.is_empty() {
            return Err(Error::invalid(format!("source '{}' has no test rows", d.name)));
        }
        let h = bank.stem_forward(&x)?;
        let theta = bank.agnostic.feature.predict(&h)?;
        for j in 0..n {
            let spec = &bank.specific[j];
            let logits = spec.classifier().predict(&theta)?;
            feat[i][j] = count_correct(&logits, &y)? as f64 / y.len() as f64;
            let logits = bank.agnostic.classifier().predict(&spec.feature.predict(&h)?)?;
            clf[i][j] = count_correct(&logits, &y)? as f64 / y.len() as f64;
        }
    }
    let domains: Vec<String> = dataset.sources.iter().map(|d| d.name.clone()).collect();
    Ok((
        RoutingMatrix {
            mode: RoutingMode::SharedFeature,
            domains: domains.clone(),
            entries: feat,
        },
        RoutingMatrix {
            mode: RoutingMode::SharedClassifier,
            domains,
            entries: clf,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::ArchSpec;
    use crate::data::{gen_synthetic_homogeneous, HomogSpec};
    use crate::eval::evaluate_accuracy;
    use crate::nn::seeded_rng;

    fn setup() -> (DomainBank, MultiDomainDataset) {
        let ds = gen_synthetic_homogeneous(&HomogSpec::new(3, 4, 6, 120, 0.5), &mut seeded_rng(3)).unwrap();
        let bank = DomainBank::build(&ArchSpec::new(6, vec![12, 8]), &ds.label_spaces(), &mut seeded_rng(1)).unwrap();
        (bank, ds)
    }

    #[test]
    fn shapes_and_range() {
        let (bank, ds) = setup();
        let (f, c) = routing_analysis(&bank, &ds).unwrap();
        for m in [&f, &c] {
            assert_eq!(m.entries.len(), 3);
            assert!(m.entries.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("domain,d0,d1,d2\n"));
    }

    #[test]
    fn diagonal_matches_direct_evaluation() {
        let (bank, ds) = setup();
        let (f, _) = routing_analysis(&bank, &ds).unwrap();
        let theta = bank.deployed_feature().unwrap();
        for i in 0..3 {
            let direct = evaluate_accuracy(&theta, bank.specific[i].classifier(), &ds.sources[i], Split::Test).unwrap();
            assert_eq!(f.entries[i][i], direct);
        }
    }

    #[test]
    fn identical_branches_give_identical_columns() {
        let (mut bank, ds) = setup();
        let copy = bank.specific[0].clone();
        for b in bank.specific.iter_mut() {
            *b = copy.clone();
        }
        let (f, c) = routing_analysis(&bank, &ds).unwrap();
        for m in [f, c] {
            for row in &m.entries {
                assert!(row.iter().all(|v| v.to_bits() == row[0].to_bits()));
            }
        }
    }

    #[test]
    fn heterogeneous_is_rejected() {
        let (bank, mut ds) = setup();
        ds.homogeneous = false;
        assert!(matches!(routing_analysis(&bank, &ds), Err(Error::Config(_))));
    }
}
