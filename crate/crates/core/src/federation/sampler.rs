//! Minibatch index sampling without replacement within an epoch.

use crate::numerics::RngStream;

#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: RngStream,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    /// A `batch_size` of `None` or at least `samples` yields the full index
    /// range every time and never touches the stream.
    pub fn new(samples: usize, batch_size: Option<usize>, rng: RngStream) -> Self {
        let batch_size = batch_size.unwrap_or(samples).min(samples).max(1);
        Self {
            rng,
            order: (0..samples).collect(),
            cursor: samples,
            batch_size,
        }
    }

    pub fn is_full_batch(&self) -> bool {
        self.batch_size == self.order.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Next batch; the order is reshuffled whenever fewer than `batch_size`
    /// unseen indices remain in the current epoch.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.is_full_batch() {
            return self.order.clone();
        }
        if self.cursor + self.batch_size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}
