//! The interface shared by every versioned store, and the version retention
//! and snapshot-visibility rules they all apply.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ftl::{FlashLocation, Key, LogControl, Timestamp};

/// Snapshot timestamp meaning "the newest version".
pub const LATEST: Timestamp = Timestamp::MAX;

/// A value together with the version timestamp it was written at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Versioned {
    pub ts: Timestamp,
    pub value: Vec<u8>,
}

/// Acknowledgement of an append: where it went and which log page holds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PutReceipt {
    pub loc: FlashLocation,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryUsage {
    /// Bytes charged at the fixed per-entry costs of the index design.
    pub index_bytes: u64,
    /// Estimated host bookkeeping outside the accounted figure (keys, maps).
    pub overhead_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StoreStats {
    pub puts: u64,
    pub gets: u64,
    /// Records decoded on behalf of gets.
    pub record_reads: u64,
    /// Device page reads issued on behalf of gets.
    pub page_reads: u64,
    pub gc_cycles: u64,
    pub blocks_reclaimed: u64,
    pub records_relocated: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Physical page programs per page of user data written.
    pub write_amp: f64,
}

impl StoreStats {
    pub fn cache_hit_rate(&self) -> f64 {
        let probes = self.cache_hits + self.cache_misses;
        if probes == 0 {
            0.0
        } else {
            self.cache_hits as f64 / probes as f64
        }
    }
}

/// The oldest timestamp any future read may ask for. Shared between a store
/// and whoever computes it; only ever moves forward.
#[derive(Debug, Clone, Default)]
pub struct Watermark(Arc<AtomicU64>);

impl Watermark {
    pub fn new(ts: Timestamp) -> Self {
        Watermark(Arc::new(AtomicU64::new(ts)))
    }

    pub fn get(&self) -> Timestamp {
        self.0.load(Ordering::Acquire)
    }

    /// Raises the watermark to `ts`; lower values are ignored.
    pub fn advance(&self, ts: Timestamp) {
        self.0.fetch_max(ts, Ordering::AcqRel);
    }
}

pub trait VersionedStore: Send + Sync {
    fn name(&self) -> &'static str;

    /// Writes a new version. Timestamps of a key must strictly increase.
    fn put(&self, key: &Key, value: &[u8], ts: Timestamp) -> Result<PutReceipt>;

    /// Writes a tombstone version.
    fn delete(&self, key: &Key, ts: Timestamp) -> Result<PutReceipt>;

    /// The youngest version with timestamp `<= snapshot`.
    fn get(&self, key: &Key, snapshot: Timestamp) -> Result<Versioned>;

    /// Whether free space has fallen to the collection trigger.
    fn needs_gc(&self) -> bool;

    /// Runs one collection cycle over the log tail; returns blocks reclaimed.
    fn gc_step(&self) -> Result<usize>;

    /// Runs a bounded slice of collection work so a background collector
    /// can interleave with foreground requests; returns blocks reclaimed.
    /// Stores with short cycles run a whole one.
    fn gc_slice(&self) -> Result<usize> {
        self.gc_step()
    }

    fn memory_usage(&self) -> MemoryUsage;

    fn stats(&self) -> StoreStats;

    /// The write log that acknowledges puts.
    fn write_log(&self) -> &dyn LogControl;

    fn watermark(&self) -> &Watermark;

    /// Reorders keys for an initial bulk load. The default keeps the order.
    fn load_order(&self, _keys: &mut [Key]) {}

    fn flush(&self) -> Result<()> {
        self.write_log().flush()
    }
}

/// Which of a key's versions survive collection under watermark `w`: every
/// version at or above `w`, plus the youngest one below it. `ts` must be in
/// ascending order.
pub fn retained_mask(ts: &[Timestamp], w: Timestamp) -> Vec<bool> {
    let youngest_below = ts.iter().rposition(|&t| t < w);
    ts.iter()
        .enumerate()
        .map(|(i, &t)| t >= w || Some(i) == youngest_below)
        .collect()
}

/// Whether version `t` of a key survives, given all its versions.
pub fn is_retained(t: Timestamp, all: impl IntoIterator<Item = Timestamp>, w: Timestamp) -> bool {
    if t >= w {
        return true;
    }
    all.into_iter().all(|o| o <= t || o >= w)
}

/// Snapshot visibility over a key's versions, newest first.
///
/// The answer is the first version at or below `snapshot`, unless the walk
/// first passes the youngest version below the watermark: everything older
/// than that is logically discarded whether or not collection has run yet,
/// so the read reports [`Error::VersionRetired`]. This makes results
/// independent of collection timing.
pub fn visible<T: Copy>(
    newest_first: impl IntoIterator<Item = (Timestamp, T)>,
    snapshot: Timestamp,
    w: Timestamp,
) -> Result<(Timestamp, T)> {
    for (ts, item) in newest_first {
        if ts <= snapshot {
            return Ok((ts, item));
        }
        if ts < w {
            return Err(Error::VersionRetired);
        }
    }
    Err(Error::NotFoundAtSnapshot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retention_keeps_youngest_below_watermark() {
        assert_eq!(retained_mask(&[50, 80, 120], 100), vec![false, true, true]);
        assert_eq!(retained_mask(&[50, 80, 120], 10), vec![true, true, true]);
        assert_eq!(retained_mask(&[50, 80, 120], 200), vec![false, false, true]);
        assert_eq!(retained_mask(&[], 200), Vec::<bool>::new());
        assert!(!is_retained(50, [50, 80, 120], 100));
        assert!(is_retained(80, [50, 80, 120], 100));
        assert!(is_retained(120, [50, 80, 120], 100));
    }

    #[test]
    fn snapshot_rule() {
        let v = [(120u64, 'c'), (80, 'b'), (50, 'a')];
        assert_eq!(visible(v, 100, 100), Ok((80, 'b')));
        assert_eq!(visible(v, LATEST, 100), Ok((120, 'c')));
        assert_eq!(visible(v, 60, 100), Err(Error::VersionRetired));
        assert_eq!(visible(v, 60, 0), Ok((50, 'a')));
        assert_eq!(visible(v, 40, 0), Err(Error::NotFoundAtSnapshot));
        assert_eq!(visible([(30u64, ())], 20, 100), Err(Error::VersionRetired));
    }

    #[test]
    fn watermark_never_regresses() {
        let w = Watermark::new(5);
        let shared = w.clone();
        shared.advance(10);
        shared.advance(7);
        assert_eq!(w.get(), 10);
    }
}
