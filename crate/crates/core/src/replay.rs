//! Uniform experience replay.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{invalid, Result};

/// Fixed-capacity ring buffer; once full, the oldest entry is overwritten.
#[derive(Clone, Debug)]
pub struct ReplayMemory<T> {
    buffer: Vec<T>,
    capacity: usize,
    inserted: u64,
}

impl<T: Clone> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay capacity must be positive"));
        }
        Ok(ReplayMemory {
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        })
    }

    pub fn push(&mut self, item: T) {
        let slot = (self.inserted % self.capacity as u64) as usize;
        if slot < self.buffer.len() {
            self.buffer[slot] = item;
        } else {
            self.buffer.push(item);
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes, including overwritten samples.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn items(&self) -> &[T] {
        &self.buffer
    }

    /// `size` distinct stored entries, uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<T>> {
        if size > self.buffer.len() {
            return Err(invalid(format!("cannot draw {size} of {} stored entries", self.buffer.len())));
        }
        Ok(sample_indices(rng, self.buffer.len(), size)
            .into_iter()
            .map(|i| self.buffer[i].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut mem = ReplayMemory::new(3).unwrap();
        for k in 0..5 {
            mem.push(k);
        }
        assert_eq!(mem.len(), 3);
        assert_eq!(mem.inserted(), 5);
        assert_eq!(mem.items(), &[3, 4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut drawn = mem.sample(3, &mut rng).unwrap();
        drawn.sort_unstable();
        assert_eq!(drawn, vec![2, 3, 4]);
        assert!(mem.sample(4, &mut rng).is_err());
        assert!(ReplayMemory::<u8>::new(0).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut mem = ReplayMemory::new(10).unwrap();
        for k in 0..10 {
            mem.push(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 10];
        let draws = 20_000;
        for _ in 0..draws {
            for k in mem.sample(3, &mut rng).unwrap() {
                counts[k] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / (3 * draws) as f64;
            assert!((f - 0.1).abs() < 0.01, "{f}");
        }
    }
}
