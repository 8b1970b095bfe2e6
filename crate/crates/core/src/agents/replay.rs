use std::sync::Arc;

use crate::mobility::ChannelTrace;
use crate::rng::SimRng;

use super::uniform_index;

/// Fixed-capacity FIFO ring with uniform sampling over the filled part.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { items: Vec::new(), capacity, next: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, rng: &mut SimRng, n: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| uniform_index(rng, self.items.len())).collect()
    }

    pub fn sample(&self, rng: &mut SimRng, n: usize) -> Vec<&T> {
        self.sample_indices(rng, n).into_iter().map(|i| &self.items[i]).collect()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }
}

/// Channel traces of completed real episodes.
#[derive(Debug, Clone, Default)]
pub struct TraceBuffer {
    traces: Vec<Arc<ChannelTrace>>,
}

impl TraceBuffer {
    pub fn new() -> Self {
        TraceBuffer::default()
    }

    /// Stores the trace of an episode that finished its session.
    pub fn push_completed(&mut self, trace: Arc<ChannelTrace>, completed: bool) -> bool {
        if completed {
            self.traces.push(trace);
        }
        completed
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn sample(&self, rng: &mut SimRng) -> Option<Arc<ChannelTrace>> {
        if self.traces.is_empty() {
            None
        } else {
            Some(self.traces[uniform_index(rng, self.traces.len())].clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        let mut all: Vec<i32> = (0..3).map(|i| *b.get(i)).collect();
        all.sort();
        assert_eq!(all, vec![2, 3, 4]);
    }

    #[test]
    fn samples_only_filled_region() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..7 {
            b.push(i);
        }
        let mut rng = substream(0, Stream::ReplaySampling);
        assert!(b.sample_indices(&mut rng, 1000).iter().all(|&i| i < 7));
    }
}
