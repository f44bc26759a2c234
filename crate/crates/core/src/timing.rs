//! Per-iteration wall-time bookkeeping for the last-layer work and the
//! sampling overhead, kept separately so both cost views stay reportable.

use serde::{Deserialize, Serialize};

/// Nanosecond timings per training/bench iteration (one mini-batch step).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    /// Energy + gradient time per iteration.
    pub last_layer_ns: Vec<u64>,
    /// Proposal construction, drawing, and selection time per iteration.
    pub sampling_ns: Vec<u64>,
}

fn median(values: &[u64]) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    v[v.len() / 2]
}

impl TimingRecord {
    pub fn push(&mut self, last_layer_ns: u64, sampling_ns: u64) {
        self.last_layer_ns.push(last_layer_ns);
        self.sampling_ns.push(sampling_ns);
    }

    pub fn iterations(&self) -> usize {
        self.last_layer_ns.len()
    }

    pub fn median_last_layer_ns(&self) -> u64 {
        median(&self.last_layer_ns)
    }

    pub fn median_sampling_ns(&self) -> u64 {
        median(&self.sampling_ns)
    }

    pub fn total_last_layer_ns(&self) -> u64 {
        self.last_layer_ns.iter().sum()
    }

    pub fn total_sampling_ns(&self) -> u64 {
        self.sampling_ns.iter().sum()
    }

    pub fn mean_last_layer_ms(&self) -> f64 {
        if self.last_layer_ns.is_empty() {
            return 0.0;
        }
        self.total_last_layer_ns() as f64 / self.last_layer_ns.len() as f64 / 1e6
    }

    pub fn mean_sampling_ms(&self) -> f64 {
        if self.sampling_ns.is_empty() {
            return 0.0;
        }
        self.total_sampling_ns() as f64 / self.sampling_ns.len() as f64 / 1e6
    }
}
