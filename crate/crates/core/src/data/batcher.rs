use rand::seq::SliceRandom;

use super::{DomainData, Split};
use crate::error::{Error, Result};
use crate::nn::{Rng, Tensor2};

struct Cursor {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

/// Per-domain shuffled minibatches of the training split, drop-last.
pub struct DomainBatcher {
    cursors: Vec<Cursor>,
    batch_size: usize,
    rng: Rng,
}

impl DomainBatcher {
    /// Shuffles every domain's training rows once, in domain order.
    pub fn new(domains: &[DomainData], batch_size: usize, mut rng: Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        let mut cursors = Vec::with_capacity(domains.len());
        for d in domains {
            let mut order = d.indices(Split::Train.into());
            if order.len() < batch_size {
                return Err(Error::invalid(format!(
                    "domain '{}' has {} training examples, fewer than one batch of {batch_size}",
                    d.name,
                    order.len()
                )));
            }
            order.shuffle(&mut rng);
            cursors.push(Cursor {
                order,
                pos: 0,
                epoch: 0,
            });
        }
        Ok(DomainBatcher {
            cursors,
            batch_size,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self, domain: usize) -> usize {
        self.cursors[domain].epoch
    }

    /// Row indices of the next batch for `domain`; reshuffles when fewer
    /// than `batch_size` unseen rows remain.
    pub fn next_indices(&mut self, domain: usize) -> Result<Vec<usize>> {
        let b = self.batch_size;
        let cursor = self
            .cursors
            .get_mut(domain)
            .ok_or_else(|| Error::invalid(format!("no domain {domain}")))?;
        if cursor.pos + b > cursor.order.len() {
            cursor.order.shuffle(&mut self.rng);
            cursor.pos = 0;
            cursor.epoch += 1;
        }
        let idx = cursor.order[cursor.pos..cursor.pos + b].to_vec();
        cursor.pos += b;
        Ok(idx)
    }

    pub fn next_batch(&mut self, domain: usize, data: &DomainData) -> Result<(Tensor2, Vec<usize>)> {
        let idx = self.next_indices(domain)?;
        let labels = idx.iter().map(|&i| data.labels[i]).collect();
        Ok((data.features.select_rows(&idx), labels))
    }
}
