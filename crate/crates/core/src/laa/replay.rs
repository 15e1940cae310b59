//! Experience replay for the estimator.
//!
//! Each stored experience is the scaled input features the model consumed at
//! one slot plus the ground truth at that slot. Windows for truncated
//! backpropagation are rebuilt at sampling time from the experiences that
//! precede the sampled one within the same episode.

use std::collections::VecDeque;

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Experience {
    /// Scaled feature vector exactly as fed to the network.
    pub features: Box<[f64]>,
    /// Ground-truth value of the estimated subvector at this slot.
    pub target: Box<[f64]>,
    pub episode: u32,
    pub slot: u64,
}

#[derive(Debug)]
pub struct ReplayMemory {
    buf: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayMemory { buf: VecDeque::with_capacity(capacity.min(1 << 20)), capacity }
    }

    pub fn push(&mut self, exp: Experience) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(exp);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Experience {
        &self.buf[idx]
    }

    /// `k` distinct indices, or `None` until the buffer holds at least `k`
    /// experiences.
    pub fn sample_indices(&self, k: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        if self.buf.len() < k {
            return None;
        }
        Some(rand::seq::index::sample(rng, self.buf.len(), k).into_vec())
    }

    /// First index of the window ending at `idx`: at most `window` steps,
    /// never crossing an episode boundary, and never crossing the buffer's
    /// eviction edge (consecutive slots only).
    pub fn window_start(&self, idx: usize, window: usize) -> usize {
        assert!(window > 0);
        let ep = self.buf[idx].episode;
        let mut start = idx;
        while start > 0
            && idx - start + 1 < window
            && self.buf[start - 1].episode == ep
            && self.buf[start - 1].slot + 1 == self.buf[start].slot
        {
            start -= 1;
        }
        start
    }
}
