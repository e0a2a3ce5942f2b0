use rand::seq::SliceRandom;

use super::{DatasetError, Result};
use crate::rng::stream;

/// Shuffled mini-batches for one epoch; the last batch may be short.
#[derive(Clone, Debug)]
pub struct Batches<T> {
    items: Vec<T>,
    batch_size: usize,
    pos: usize,
}

impl<T: Clone> Iterator for Batches<T> {
    type Item = Vec<T>;

    fn next(&mut self) -> Option<Vec<T>> {
        if self.pos >= self.items.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.items.len());
        let b = self.items[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }
}

/// Order is a pure function of `(seed, epoch)`.
pub fn batch_iter<T: Clone>(items: &[T], batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<T>> {
    if items.is_empty() {
        return Err(DatasetError::Parameter("cannot batch an empty id list".into()));
    }
    if batch_size == 0 {
        return Err(DatasetError::Parameter("batch size must be at least 1".into()));
    }
    let mut items = items.to_vec();
    items.shuffle(&mut stream(seed, "batch", epoch));
    Ok(Batches { items, batch_size, pos: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_by_eight() {
        let ids: Vec<u32> = (0..20).collect();
        let sizes: Vec<usize> = batch_iter(&ids, 8, 1, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, [8, 8, 4]);
    }

    #[test]
    fn seeded_and_exhaustive() {
        let ids: Vec<u32> = (0..37).collect();
        let a: Vec<_> = batch_iter(&ids, 8, 5, 3).unwrap().collect();
        let b: Vec<_> = batch_iter(&ids, 8, 5, 3).unwrap().collect();
        let c: Vec<_> = batch_iter(&ids, 8, 5, 4).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut all: Vec<u32> = a.concat();
        all.sort();
        assert_eq!(all, ids);
    }

    #[test]
    fn empty_rejected() {
        assert!(batch_iter::<u32>(&[], 8, 0, 0).is_err());
        assert!(batch_iter(&[1], 0, 0, 0).is_err());
    }
}
