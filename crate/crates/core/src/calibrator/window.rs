use std::collections::VecDeque;

/// Bounded FIFO of recent history-context alignment scores.
///
/// The baseline is the arithmetic mean of the retained scores, recomputed
/// front-to-back on every push so it never accumulates rounding drift.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWindow {
    capacity: usize,
    scores: VecDeque<f64>,
    cached_mean: f64,
}

impl BaselineWindow {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        Self {
            capacity,
            scores: VecDeque::with_capacity(capacity),
            cached_mean: 0.0,
        }
    }

    pub fn push(&mut self, score: f64) {
        if self.scores.len() == self.capacity {
            self.scores.pop_front();
        }
        self.scores.push_back(score);
        let sum: f64 = self.scores.iter().sum();
        self.cached_mean = sum / self.scores.len() as f64;
    }

    /// Mean of the retained scores; 0 while empty.
    pub fn baseline(&self) -> f64 {
        self.cached_mean
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }
}
