use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::Rng;

/// For every source domain `i`, the partner `j ≠ i` whose module it is
/// routed through this iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeAssignment {
    partners: Vec<usize>,
}

impl EpisodeAssignment {
    pub fn new(partners: Vec<usize>) -> Result<Self> {
        for (i, &j) in partners.iter().enumerate() {
            if j == i || j >= partners.len() {
                return Err(Error::invalid(format!(
                    "domain {i} cannot be paired with {j} among {} domains",
                    partners.len()
                )));
            }
        }
        Ok(EpisodeAssignment { partners })
    }

    pub fn partner(&self, i: usize) -> usize {
        self.partners[i]
    }

    pub fn partners(&self) -> &[usize] {
        &self.partners
    }

    pub fn len(&self) -> usize {
        self.partners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partners.is_empty()
    }
}

/// Draws, independently for each `i`, a partner uniformly from `[0, n) \ {i}`.
pub fn sample_assignment(n: usize, rng: &mut Rng) -> Result<EpisodeAssignment> {
    if n < 2 {
        return Err(Error::Config(format!(
            "cross-domain episodes need at least two source domains, got {n}"
        )));
    }
    let partners = (0..n)
        .map(|i| {
            let r = rng.random_range(0..n - 1);
            if r >= i {
                r + 1
            } else {
                r
            }
        })
        .collect();
    Ok(EpisodeAssignment { partners })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn two_domains_swap() {
        let mut rng = seeded_rng(0);
        for _ in 0..50 {
            assert_eq!(sample_assignment(2, &mut rng).unwrap().partners(), &[1, 0]);
        }
    }

    #[test]
    fn too_few_domains() {
        assert!(sample_assignment(1, &mut seeded_rng(0)).is_err());
        assert!(EpisodeAssignment::new(vec![0, 1]).is_err());
        assert!(EpisodeAssignment::new(vec![1, 2]).is_err());
        assert!(EpisodeAssignment::new(vec![1, 0]).is_ok());
    }

    proptest! {
        #[test]
        fn never_self(n in 2usize..9, seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            for _ in 0..20 {
                let a = sample_assignment(n, &mut rng).unwrap();
                for i in 0..n {
                    prop_assert!(a.partner(i) != i && a.partner(i) < n);
                }
            }
        }
    }
}
