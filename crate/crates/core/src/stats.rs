//! Streaming moment accumulators, fixed-bin histograms and a deterministic
//! chunked parallel reduction shared by the dataset, align and metrics modules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Samples per reduction chunk. The reduction tree depends only on this constant,
/// so results are identical for any thread count.
pub const REDUCE_CHUNK: usize = 1 << 16;

/// Folds `0..len` in fixed-size chunks in parallel, then merges the partial
/// states left to right in chunk order.
pub fn chunked_reduce<T, F, M>(len: usize, init: T, fold: F, merge: M) -> T
where
    T: Clone + Send + Sync,
    F: Fn(T, std::ops::Range<usize>) -> T + Sync,
    M: Fn(T, T) -> T,
{
    let chunks = len.div_ceil(REDUCE_CHUNK);
    let parts: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * REDUCE_CHUNK;
            fold(init.clone(), start..(start + REDUCE_CHUNK).min(len))
        })
        .collect();
    parts.into_iter().fold(init, merge)
}

/// Count, mean, sum of squared deviations and extrema (Welford update, Chan merge).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Moments {
    fn default() -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// Population variance (divides by N).
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Fixed-width bins over `[edges[0], edges[bins]]`; the top edge is inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Empty histogram over `[low, high]`. A zero-width range is widened to
    /// `[low - 0.5, low + 0.5]` so constant data lands in a single bin.
    pub fn new(low: f64, high: f64, bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        let (low, high) = if high > low { (low, high) } else { (low - 0.5, low + 0.5) };
        let width = (high - low) / bins as f64;
        let mut bin_edges: Vec<f64> = (0..=bins).map(|i| low + width * i as f64).collect();
        bin_edges[bins] = high;
        Self {
            bin_edges,
            counts: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn low(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn high(&self) -> f64 {
        self.bin_edges[self.bins()]
    }

    /// Bin index for `v`, or `None` when outside the range.
    #[inline]
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let (low, high) = (self.low(), self.high());
        if !(v >= low && v <= high) {
            return None;
        }
        let bins = self.bins();
        let idx = ((v - low) / (high - low) * bins as f64) as usize;
        Some(idx.min(bins - 1))
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        if let Some(i) = self.bin_of(v) {
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds counts of a histogram with identical edges.
    pub fn merge(mut self, other: Histogram) -> Histogram {
        debug_assert_eq!(self.bin_edges, other.bin_edges);
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }
}
