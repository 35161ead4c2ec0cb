//! A multi-version store whose whole version index lives in memory: every
//! version of every key has an entry pointing straight at its record.
//!
//! The store is generic over the page device so the stacked baseline can
//! run the same host layer on top of a conventional block device.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::flashsim::{DeviceConfig, FlashDevice};
use crate::ftl::location::CHUNKS_PER_PAGE;
use crate::ftl::{
    decode_record, AppendClass, FlashLocation, Key, KvRecord, Log, LogConfig, LogControl,
    PageDevice, Timestamp,
};
use crate::store::{
    is_retained, visible, MemoryUsage, PutReceipt, StoreStats, Versioned, VersionedStore,
    Watermark,
};

/// Accounted bytes per version entry: 4 address, 8 timestamp, 8 link.
pub const ENTRY_BYTES: u64 = 20;
/// Estimated host cost of a key in the key map, outside the accounted figure.
const KEY_OVERHEAD_BYTES: u64 = 16 + 24 + 16;

#[derive(Debug, Clone)]
pub struct SemelConfig {
    pub log: LogConfig,
    /// Keep only the newest version of each key in the index.
    pub single_version: bool,
    pub shards: usize,
}

impl Default for SemelConfig {
    fn default() -> Self {
        SemelConfig { log: LogConfig::default(), single_version: false, shards: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    loc: FlashLocation,
    ts: Timestamp,
    tombstone: bool,
}

#[derive(Default)]
struct Counters {
    puts: AtomicU64,
    gets: AtomicU64,
    record_reads: AtomicU64,
    gc_cycles: AtomicU64,
    relocated: AtomicU64,
}

/// Version lists are kept oldest first.
type Shard = RwLock<HashMap<Key, Vec<Entry>>>;

pub struct SemelStore<D: PageDevice> {
    name: &'static str,
    log: Log<D>,
    shards: Vec<Shard>,
    single_version: bool,
    watermark: Watermark,
    entries: AtomicU64,
    keys: AtomicU64,
    gc_lock: Mutex<()>,
    counters: Counters,
}

pub type Semel = SemelStore<FlashDevice>;

impl Semel {
    pub fn open(dev: DeviceConfig, cfg: SemelConfig) -> Result<Self> {
        SemelStore::new(Arc::new(FlashDevice::new(dev)?), cfg, "semel")
    }
}

impl<D: PageDevice> SemelStore<D> {
    pub fn new(dev: Arc<D>, cfg: SemelConfig, name: &'static str) -> Result<Self> {
        if cfg.shards == 0 {
            return Err(Error::Config("shards must be at least 1".into()));
        }
        Ok(SemelStore {
            name,
            log: Log::new(dev, cfg.log)?,
            shards: (0..cfg.shards).map(|_| RwLock::new(HashMap::new())).collect(),
            single_version: cfg.single_version,
            watermark: Watermark::default(),
            entries: AtomicU64::new(0),
            keys: AtomicU64::new(0),
            gc_lock: Mutex::new(()),
            counters: Counters::default(),
        })
    }

    pub fn log(&self) -> &Log<D> {
        &self.log
    }

    pub fn is_single_version(&self) -> bool {
        self.single_version
    }

    pub fn entry_count(&self) -> u64 {
        self.entries.load(Ordering::Relaxed)
    }

    /// Accounted size of a table provisioned with one entry for every
    /// record slot on the device, the sizing needed to address all of it.
    pub fn provisioned_index_bytes(&self) -> u64 {
        let dev = self.log.device();
        let slots = dev.block_count() as u64 * dev.pages_per_block() as u64 * CHUNKS_PER_PAGE as u64;
        ENTRY_BYTES * slots
    }

    /// Indexed version timestamps of a key, newest first.
    pub fn versions(&self, key: &Key) -> Vec<Timestamp> {
        let shard = self.shard(key).read();
        shard.get(key).map(|l| l.iter().rev().map(|e| e.ts).collect()).unwrap_or_default()
    }

    /// Reads back every indexed version and checks that the record at its
    /// location is that version. Returns entries checked.
    pub fn audit(&self) -> Result<u64> {
        let _guard = self.log.pin();
        let mut checked = 0;
        for shard in &self.shards {
            let shard = shard.read();
            for (key, list) in shard.iter() {
                for e in list {
                    let page = self.log.read_page_pinned(e.loc.page())?;
                    let rec = decode_record(&page, e.loc.chunk() as usize, self.log.layout())?;
                    if rec.key != *key || rec.version != e.ts || rec.tombstone != e.tombstone {
                        return Err(Error::Corruption(format!("index entry at {} names another record", e.loc)));
                    }
                    checked += 1;
                }
            }
        }
        Ok(checked)
    }

    fn shard(&self, key: &Key) -> &Shard {
        let lo = u64::from_le_bytes(key.0[..8].try_into().unwrap());
        let hi = u64::from_le_bytes(key.0[8..].try_into().unwrap());
        let h = (lo ^ hi.rotate_left(29)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        &self.shards[((h >> 32) % self.shards.len() as u64) as usize]
    }

    fn write(&self, key: &Key, value: &[u8], ts: Timestamp, tombstone: bool) -> Result<PutReceipt> {
        let mut rec = KvRecord::new(*key, value.to_vec(), ts);
        rec.tombstone = tombstone;
        loop {
            {
                let mut shard = self.shard(key).write();
                if let Some(latest) = shard.get(key).and_then(|l| l.last()) {
                    if ts <= latest.ts {
                        return Err(Error::Ordering { ts, latest: latest.ts });
                    }
                }
                match self.log.append(&rec, AppendClass::User) {
                    Ok(a) => {
                        let entry = Entry { loc: a.loc, ts, tombstone };
                        let list = shard.entry(*key).or_insert_with(|| {
                            self.keys.fetch_add(1, Ordering::Relaxed);
                            Vec::new()
                        });
                        if self.single_version && !list.is_empty() {
                            list[0] = entry;
                        } else {
                            list.push(entry);
                            self.entries.fetch_add(1, Ordering::Relaxed);
                        }
                        self.counters.puts.fetch_add(1, Ordering::Relaxed);
                        return Ok(PutReceipt { loc: a.loc, seq: a.seq });
                    }
                    Err(Error::StoreFull) => {}
                    Err(e) => return Err(e),
                }
            }
            // Out of user space: collect in the foreground and retry.
            if self.collect_oldest()? == 0 {
                return Err(Error::StoreFull);
            }
        }
    }

    fn lookup(&self, key: &Key, snapshot: Timestamp) -> Result<Entry> {
        let shard = self.shard(key).read();
        let list = shard.get(key).ok_or(Error::NotFound)?;
        if self.single_version {
            let e = *list.last().expect("indexed key has a version");
            return if e.ts <= snapshot { Ok(e) } else { Err(Error::VersionRetired) };
        }
        let w = self.watermark.get();
        visible(list.iter().rev().map(|e| (e.ts, *e)), snapshot, w).map(|(_, e)| e)
    }

    /// Collects the oldest sealed block; returns blocks reclaimed.
    pub fn collect_oldest(&self) -> Result<usize> {
        let _gc = self.gc_lock.lock();
        let Some(&victim) = self.log.victim_candidates().first() else {
            return Ok(0);
        };
        self.collect_block(victim)?;
        self.counters.gc_cycles.fetch_add(1, Ordering::Relaxed);
        Ok(1)
    }

    fn collect_block(&self, victim: u32) -> Result<()> {
        let records = self.log.read_block_records(victim)?;
        let w = self.watermark.get();
        for (loc, rec) in records {
            let mut shard = self.shard(&rec.key).write();
            let Some(list) = shard.get_mut(&rec.key) else { continue };
            let Some(i) = list.iter().position(|e| e.loc == loc && e.ts == rec.version) else {
                continue;
            };
            let keep = self.single_version || is_retained(list[i].ts, list.iter().map(|e| e.ts), w);
            if keep {
                list[i].loc = self.log.append(&rec, AppendClass::Relocation)?.loc;
                self.counters.relocated.fetch_add(1, Ordering::Relaxed);
            } else {
                list.remove(i);
                self.entries.fetch_sub(1, Ordering::Relaxed);
            }
        }
        self.log.reclaim_block(victim)
    }
}

impl<D: PageDevice + 'static> VersionedStore for SemelStore<D> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn put(&self, key: &Key, value: &[u8], ts: Timestamp) -> Result<PutReceipt> {
        self.write(key, value, ts, false)
    }

    fn delete(&self, key: &Key, ts: Timestamp) -> Result<PutReceipt> {
        self.write(key, &[], ts, true)
    }

    fn get(&self, key: &Key, snapshot: Timestamp) -> Result<Versioned> {
        self.counters.gets.fetch_add(1, Ordering::Relaxed);
        // Pin before consulting the index so the block cannot be erased
        // between the lookup and the read.
        let _guard = self.log.pin();
        let e = self.lookup(key, snapshot)?;
        if e.tombstone {
            return Err(Error::NotFound);
        }
        let page = self.log.read_page_pinned(e.loc.page())?;
        self.counters.record_reads.fetch_add(1, Ordering::Relaxed);
        let rec = decode_record(&page, e.loc.chunk() as usize, self.log.layout())?;
        if rec.key != *key || rec.version != e.ts {
            return Err(Error::Corruption(format!("index entry at {} names another record", e.loc)));
        }
        Ok(Versioned { ts: rec.version, value: rec.value })
    }

    fn needs_gc(&self) -> bool {
        self.log.needs_gc()
    }

    fn gc_step(&self) -> Result<usize> {
        self.collect_oldest()
    }

    fn memory_usage(&self) -> MemoryUsage {
        MemoryUsage {
            index_bytes: ENTRY_BYTES * self.entries.load(Ordering::Relaxed),
            overhead_bytes: KEY_OVERHEAD_BYTES * self.keys.load(Ordering::Relaxed),
        }
    }

    fn stats(&self) -> StoreStats {
        let log = self.log.stats();
        let c = &self.counters;
        let record_reads = c.record_reads.load(Ordering::Relaxed);
        StoreStats {
            puts: c.puts.load(Ordering::Relaxed),
            gets: c.gets.load(Ordering::Relaxed),
            record_reads,
            page_reads: record_reads,
            gc_cycles: c.gc_cycles.load(Ordering::Relaxed),
            blocks_reclaimed: log.blocks_reclaimed,
            records_relocated: c.relocated.load(Ordering::Relaxed),
            cache_hits: 0,
            cache_misses: 0,
            write_amp: log.write_amplification(),
        }
    }

    fn write_log(&self) -> &dyn LogControl {
        &self.log
    }

    fn watermark(&self) -> &Watermark {
        &self.watermark
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(single_version: bool) -> Semel {
        let dev = DeviceConfig { block_count: 32, ..Default::default() };
        let log = LogConfig { stripe_width: Some(1), ..Default::default() };
        Semel::open(dev, SemelConfig { single_version, log, ..Default::default() }).unwrap()
    }

    fn k(i: u64) -> Key {
        Key::from_u64(i)
    }

    #[test]
    fn put_then_get_latest() {
        let s = store(false);
        s.put(&k(1), b"v", 10).unwrap();
        assert_eq!(s.get(&k(1), crate::store::LATEST).unwrap().value, b"v");
    }

    #[test]
    fn versions_listed_newest_first() {
        let s = store(false);
        s.put(&k(1), b"v1", 10).unwrap();
        s.put(&k(1), b"v2", 20).unwrap();
        assert_eq!(s.versions(&k(1)), vec![20, 10]);
    }

    #[test]
    fn repeated_timestamp_is_an_ordering_error() {
        let s = store(false);
        s.put(&k(1), b"v1", 10).unwrap();
        assert_eq!(s.put(&k(1), b"v2", 10), Err(Error::Ordering { ts: 10, latest: 10 }));
    }

    #[test]
    fn snapshot_reads() {
        let s = store(false);
        for ts in [10, 20, 30] {
            s.put(&k(1), format!("v{ts}").as_bytes(), ts).unwrap();
        }
        assert_eq!(s.get(&k(1), 25).unwrap(), Versioned { ts: 20, value: b"v20".to_vec() });
        assert_eq!(s.get(&k(1), crate::store::LATEST).unwrap().ts, 30);
        assert_eq!(s.get(&k(1), 5), Err(Error::NotFoundAtSnapshot));
        assert_eq!(s.get(&k(2), 5), Err(Error::NotFound));
    }

    #[test]
    fn retired_snapshot_below_watermark() {
        let s = store(false);
        for ts in [50, 80, 120] {
            s.put(&k(1), b"x", ts).unwrap();
        }
        s.watermark().advance(100);
        assert_eq!(s.get(&k(1), 60), Err(Error::VersionRetired));
        assert_eq!(s.get(&k(1), 90).unwrap().ts, 80);
    }

    #[test]
    fn single_version_index_holds_one_entry() {
        let s = store(true);
        s.put(&k(1), b"a", 10).unwrap();
        s.put(&k(1), b"b", 20).unwrap();
        assert_eq!(s.versions(&k(1)), vec![20]);
        assert_eq!(s.get(&k(1), 15), Err(Error::VersionRetired));
        assert_eq!(s.get(&k(1), 25).unwrap().value, b"b");
        assert_eq!(s.memory_usage().index_bytes, 20);
    }

    #[test]
    fn tombstone_hides_key() {
        let s = store(false);
        s.put(&k(1), b"a", 10).unwrap();
        s.delete(&k(1), 20).unwrap();
        assert_eq!(s.get(&k(1), 30), Err(Error::NotFound));
        assert_eq!(s.get(&k(1), 15).unwrap().value, b"a");
    }

    #[test]
    fn memory_accounting() {
        let s = store(false);
        assert_eq!(s.memory_usage().index_bytes, 0);
        for i in 0..100 {
            s.put(&k(i), b"a", 1).unwrap();
            s.put(&k(i), b"b", 2).unwrap();
        }
        assert_eq!(s.memory_usage().index_bytes, 200 * ENTRY_BYTES);
        assert_eq!(s.provisioned_index_bytes(), 20 * 32 * 32 * 8);
        assert!(s.memory_usage().overhead_bytes > 0);
    }

    #[test]
    fn gc_applies_retention() {
        let s = store(false);
        for ts in [50, 80, 120] {
            s.put(&k(1), b"x", ts).unwrap();
        }
        // Fill the rest of the first block with another key so it seals.
        for ts in 1..=300 {
            s.put(&k(2), b"y", ts).unwrap();
        }
        s.watermark().advance(100);
        assert_eq!(s.gc_step().unwrap(), 1);
        assert_eq!(s.versions(&k(1)), vec![120, 80]);
        assert_eq!(s.get(&k(1), 100).unwrap().ts, 80);
        // Versions 1..=98 of the second key were in the victim and below 99.
        assert_eq!(s.versions(&k(2)).len(), 300 - 98);
    }

    #[test]
    fn gc_keeps_everything_at_or_above_watermark() {
        let s = store(false);
        for ts in 1..=600 {
            s.put(&k(ts % 7), b"x", ts).unwrap();
        }
        let before: Vec<_> = (0..7).map(|i| s.versions(&k(i))).collect();
        s.gc_step().unwrap();
        s.gc_step().unwrap();
        let after: Vec<_> = (0..7).map(|i| s.versions(&k(i))).collect();
        assert_eq!(before, after);
        for ts in 1..=600 {
            assert_eq!(s.get(&k(ts % 7), ts).unwrap().ts, ts);
        }
    }

    #[test]
    fn sustained_overwrites_never_fill_the_store() {
        let s = store(false);
        s.watermark().advance(Timestamp::MAX);
        for ts in 1..=40_000u64 {
            s.put(&k(ts % 50), b"x", ts).unwrap();
        }
        assert!(s.stats().blocks_reclaimed > 0);
        assert!(s.log().free_blocks() >= s.log().reserve_blocks());
    }
}
