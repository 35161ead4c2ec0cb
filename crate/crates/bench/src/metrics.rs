//! Latency recording and per-run results.

use flashkv::clock::Nanos;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default)]
pub struct LatencyRecorder {
    samples: Vec<Nanos>,
}

impl LatencyRecorder {
    pub fn record(&mut self, latency: Nanos) {
        self.samples.push(latency);
    }

    pub fn extend(&mut self, other: &LatencyRecorder) {
        self.samples.extend_from_slice(&other.samples);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Nearest-rank percentile in microseconds; 0 with no samples.
    pub fn percentile_us(&self, p: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let mut s = self.samples.clone();
        let rank = ((p / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len());
        let (_, v, _) = s.select_nth_unstable(rank - 1);
        *v as f64 / 1_000.0
    }

    pub fn mean_us(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&x| x as f64).sum::<f64>() / self.samples.len() as f64 / 1_000.0
    }
}

/// One benchmark data point. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub store: String,
    pub mode: String,
    pub workload: String,
    pub put_pct: f64,
    pub offered_load: f64,
    pub keys: u64,
    pub buckets: u64,
    pub cache_pct: f64,
    /// Operations (kv) or committed transactions (txn) per second.
    pub throughput: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub abort_rate: f64,
    pub commit_rate: f64,
    pub cache_hit_rate: f64,
    pub write_amp: f64,
    pub index_bytes: u64,
    pub seed: u64,
}

pub const COLUMNS: [&str; 18] = [
    "store",
    "mode",
    "workload",
    "put_pct",
    "offered_load",
    "keys",
    "buckets",
    "cache_pct",
    "throughput",
    "p50_us",
    "p95_us",
    "p99_us",
    "abort_rate",
    "commit_rate",
    "cache_hit_rate",
    "write_amp",
    "index_bytes",
    "seed",
];

/// Counters that explain a run but are not part of the CSV schema.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunDetail {
    pub ops: u64,
    pub gets: u64,
    pub puts: u64,
    pub committed: u64,
    pub conflict_aborts: u64,
    pub stale_aborts: u64,
    pub capacity_aborts: u64,
    /// Transactions finished (committed or aborted) per second.
    pub attempt_rate: f64,
    pub mean_latency_us: f64,
    pub mean_get_us: f64,
    pub mean_put_us: f64,
    pub gc_steps: u64,
    pub blocks_reclaimed: u64,
    pub device_reads: u64,
    pub store_full: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub detail: RunDetail,
}
