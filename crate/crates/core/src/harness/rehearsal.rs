use rand::seq::SliceRandom;

use crate::seed;

/// Seeded uniform sample of `per_domain` items (all of them when the domain
/// is smaller), in original order.
pub fn rehearsal_sample<T: Clone>(train: &[T], per_domain: usize, seed: u64) -> Vec<T> {
    if per_domain >= train.len() {
        return train.to_vec();
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut rng = seed::rng(seed, "rehearsal", 0);
    let (picked, _) = idx.partial_shuffle(&mut rng, per_domain);
    let mut picked = picked.to_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| train[i].clone()).collect()
}

/// Samples of finished domains, replayed in later full-shot stages.
#[derive(Clone, Debug, Default)]
pub struct RehearsalBuffer<T> {
    per_domain: usize,
    items: Vec<T>,
}

impl<T: Clone> RehearsalBuffer<T> {
    pub fn new(per_domain: usize) -> Self {
        Self {
            per_domain,
            items: Vec::new(),
        }
    }

    pub fn add_domain(&mut self, train: &[T], seed: u64) {
        if self.per_domain > 0 {
            self.items.extend(rehearsal_sample(train, self.per_domain, seed));
        }
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
