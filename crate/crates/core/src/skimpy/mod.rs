//! A multi-version store that keeps only a bucket directory and a small
//! translation cache in memory.
//!
//! Every record carries two links: `hash_next` to the previous record
//! written to its bucket, and `prior` to the previous version of its key.
//! A bucket's directory slot points at the newest record of its chain, so
//! the chain holds all of the bucket's records in reverse write order.
//! Lookups that miss the cache walk the chain until they meet the key.
//! Garbage collection rewrites whole buckets: it reads the chain, drops the
//! versions the watermark no longer protects, re-appends the rest oldest
//! first with complete prior links and swaps the directory slot.

pub mod cache;

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::clock::{self, Nanos, TimeMode};
use crate::error::{Error, Result};
use crate::flashsim::{DeviceConfig, FlashDevice, PageBuf};
use crate::ftl::location::NULL_LOC;
use crate::ftl::{
    decode_location, decode_record, AppendClass, FlashLocation, Key, KvRecord, Link, Log,
    LogConfig, LogControl, PageDevice, Timestamp,
};
use crate::store::{
    retained_mask, MemoryUsage, PutReceipt, StoreStats, Versioned, VersionedStore, Watermark,
};

pub use cache::{CacheEntry, TranslationCache, CACHE_ENTRY_BYTES};

/// Accounted bytes per directory slot.
pub const BUCKET_BYTES: u64 = 4;
/// Chain depths at or beyond this land in the last histogram slot.
pub const DEPTH_HISTOGRAM_LEN: usize = 64;

#[derive(Debug, Clone)]
pub struct SkimpyConfig {
    pub log: LogConfig,
    pub bucket_count: usize,
    pub cache_capacity: usize,
    pub hash_seed: u64,
    /// Bucket write-exclusion locks are striped over this many mutexes.
    pub lock_stripes: usize,
    /// Oldest blocks reclaimed together by one collection cycle. A bucket
    /// with records in several of them is swept once. Capped at a quarter
    /// of the log reserve so relocations always find room.
    pub victims_per_cycle: usize,
}

impl Default for SkimpyConfig {
    fn default() -> Self {
        SkimpyConfig::for_keys(200_000, 5.0, 0.10)
    }
}

impl SkimpyConfig {
    /// Sizes the directory and cache for a key population.
    pub fn for_keys(keys: usize, keys_per_bucket: f64, cache_fraction: f64) -> Self {
        SkimpyConfig {
            log: LogConfig::default(),
            bucket_count: ((keys as f64 / keys_per_bucket).round() as usize).max(1),
            cache_capacity: (keys as f64 * cache_fraction).round() as usize,
            hash_seed: 0x5eed_0f_b0c4e7,
            lock_stripes: 1024,
            victims_per_cycle: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    /// Buckets whose chain was read.
    pub buckets_scanned: u64,
    /// Buckets rewritten.
    pub buckets_rewritten: u64,
    pub records_rewritten: u64,
    pub records_dropped: u64,
    pub prior_links_resolved: u64,
    /// Victim records shown dead by the cache and version list alone.
    pub records_settled_by_probe: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkimpyStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// `chain_depth[d]` counts cache-miss lookups that found their key at
    /// depth `d` (1 = chain head).
    pub chain_depth: Vec<u64>,
    pub sweeps: SweepStats,
}

/// Result of walking every bucket chain.
#[derive(Debug, Clone, Default)]
pub struct ChainAudit {
    /// Every reachable (key, version), unordered.
    pub reachable: Vec<(Key, Timestamp, bool)>,
    pub longest_chain: usize,
    pub unknown_prior_links: usize,
    pub reachable_blocks: HashSet<u32>,
    pub cache_entries_checked: usize,
}

#[derive(Default)]
struct Counters {
    puts: AtomicU64,
    gets: AtomicU64,
    record_reads: AtomicU64,
    page_reads: AtomicU64,
    gc_cycles: AtomicU64,
    buckets_scanned: AtomicU64,
    buckets_rewritten: AtomicU64,
    records_rewritten: AtomicU64,
    records_dropped: AtomicU64,
    prior_links_resolved: AtomicU64,
    settled_by_probe: AtomicU64,
}

/// Parallel collector streams on virtual time: each operation starts on
/// the stream that frees up first. On wall-clock time operations simply run
/// in turn.
struct Streams {
    at: Vec<Nanos>,
    current: usize,
    active: bool,
}

impl Streams {
    fn new<D: PageDevice>(dev: &D) -> Self {
        let active = dev.time_mode() == TimeMode::Virtual;
        let now = clock::now();
        Streams { at: vec![now; dev.parallelism().max(1) as usize], current: 0, active }
    }

    fn len(&self) -> usize {
        self.at.len()
    }

    fn begin(&mut self) {
        if self.active {
            let (i, &t) = self.at.iter().enumerate().min_by_key(|&(_, t)| *t).expect("a stream");
            self.current = i;
            clock::set_now(t);
        }
    }

    fn end(&mut self) {
        if self.active {
            self.at[self.current] = clock::now();
        }
    }

    /// Waits for every stream to finish.
    fn join(&self) {
        if self.active {
            clock::set_now(self.at.iter().copied().max().expect("a stream"));
        }
    }
}

/// Dead records a chain must hold, and outnumber the live ones,
/// before a sweep that found nothing in the victim rebuilds it anyway.
const COMPACT_MIN_GARBAGE: usize = 8;

/// Version-list records a collector probe reads before giving up and
/// leaving the question to a chain sweep.
const PROBE_HOPS: usize = 4;

/// A collection cycle under way: victim blocks still to scan, then buckets
/// still to sweep.
struct Cycle {
    victims: Vec<u32>,
    victim_set: HashSet<u32>,
    scanned: usize,
    pending: HashSet<usize>,
    buckets: VecDeque<usize>,
}

impl Cycle {
    fn new(victims: Vec<u32>) -> Self {
        let victim_set = victims.iter().copied().collect();
        Cycle { victims, victim_set, scanned: 0, pending: HashSet::new(), buckets: VecDeque::new() }
    }
}

/// Reads records for one operation, reusing the last page image when
/// consecutive records share a page.
struct Walker<'a, D: PageDevice> {
    log: &'a Log<D>,
    page: Option<(u32, PageBuf)>,
    records: u64,
    pages: u64,
}

impl<'a, D: PageDevice> Walker<'a, D> {
    fn new(log: &'a Log<D>) -> Self {
        Walker { log, page: None, records: 0, pages: 0 }
    }

    fn read(&mut self, loc: FlashLocation) -> Result<KvRecord> {
        let page = match &self.page {
            Some((p, buf)) if *p == loc.page() => buf.clone(),
            _ => {
                let buf = self.log.read_page_pinned(loc.page())?;
                self.pages += 1;
                self.page = Some((loc.page(), buf.clone()));
                buf
            }
        };
        self.records += 1;
        decode_record(&page, loc.chunk() as usize, self.log.layout())
    }
}

pub struct Skimpy<D: PageDevice = FlashDevice> {
    log: Log<D>,
    heads: Vec<AtomicU32>,
    stripes: Vec<Mutex<()>>,
    cache: Mutex<TranslationCache>,
    seed: u64,
    watermark: Watermark,
    gc_lock: Mutex<Option<Cycle>>,
    victims_per_cycle: usize,
    depth: Vec<AtomicU64>,
    counters: Counters,
}

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Seeded 64-bit hash of a key.
pub fn key_hash(key: &Key, seed: u64) -> u64 {
    let lo = u64::from_le_bytes(key.0[..8].try_into().unwrap());
    let hi = u64::from_le_bytes(key.0[8..].try_into().unwrap());
    fmix64(fmix64(lo ^ seed) ^ hi.rotate_left(31))
}

impl Skimpy<FlashDevice> {
    pub fn open(dev: DeviceConfig, cfg: SkimpyConfig) -> Result<Self> {
        Skimpy::new(Arc::new(FlashDevice::new(dev)?), cfg)
    }
}

/// Accounted index bytes for a configuration: directory plus cache slots.
pub fn accounted_index_bytes(bucket_count: usize, cache_capacity: usize) -> u64 {
    BUCKET_BYTES * bucket_count as u64 + CACHE_ENTRY_BYTES * cache_capacity as u64
}

impl<D: PageDevice> Skimpy<D> {
    pub fn new(dev: Arc<D>, cfg: SkimpyConfig) -> Result<Self> {
        if cfg.bucket_count == 0 {
            return Err(Error::Config("bucket_count must be at least 1".into()));
        }
        if cfg.bucket_count > u32::MAX as usize {
            return Err(Error::Config("bucket_count exceeds 32-bit range".into()));
        }
        let stripes = cfg.lock_stripes.clamp(1, cfg.bucket_count);
        let log = Log::new(dev, cfg.log)?;
        // Relocations out of one cycle's victims must fit in the reserve.
        let victims_per_cycle = cfg.victims_per_cycle.clamp(1, (log.reserve_blocks() / 4).max(1));
        Ok(Skimpy {
            log,
            heads: (0..cfg.bucket_count).map(|_| AtomicU32::new(NULL_LOC)).collect(),
            stripes: (0..stripes).map(|_| Mutex::new(())).collect(),
            cache: Mutex::new(TranslationCache::new(cfg.cache_capacity)),
            seed: cfg.hash_seed,
            watermark: Watermark::default(),
            gc_lock: Mutex::new(None),
            victims_per_cycle,
            depth: (0..DEPTH_HISTOGRAM_LEN).map(|_| AtomicU64::new(0)).collect(),
            counters: Counters::default(),
        })
    }

    pub fn log(&self) -> &Log<D> {
        &self.log
    }

    pub fn bucket_count(&self) -> usize {
        self.heads.len()
    }

    pub fn bucket_of(&self, key: &Key) -> usize {
        (key_hash(key, self.seed) % self.heads.len() as u64) as usize
    }

    /// Directory slot of a bucket.
    pub fn head(&self, bucket: usize) -> Link {
        decode_location(self.heads[bucket].load(Ordering::Acquire))
    }

    fn stripe(&self, bucket: usize) -> &Mutex<()> {
        &self.stripes[bucket % self.stripes.len()]
    }

    pub fn cached(&self, key: &Key) -> Option<CacheEntry> {
        self.cache.lock().peek(key)
    }

    pub fn clear_cache(&self) {
        self.cache.lock().clear();
    }

    /// Zeroes hit, miss and chain-depth counters, e.g. after warm-up.
    pub fn reset_lookup_stats(&self) {
        self.cache.lock().reset_counters();
        for d in &self.depth {
            d.store(0, Ordering::Relaxed);
        }
    }

    pub fn skimpy_stats(&self) -> SkimpyStats {
        let cache = self.cache.lock();
        let c = &self.counters;
        SkimpyStats {
            cache_hits: cache.hits(),
            cache_misses: cache.misses(),
            chain_depth: self.depth.iter().map(|d| d.load(Ordering::Relaxed)).collect(),
            sweeps: SweepStats {
                buckets_scanned: c.buckets_scanned.load(Ordering::Relaxed),
                buckets_rewritten: c.buckets_rewritten.load(Ordering::Relaxed),
                records_rewritten: c.records_rewritten.load(Ordering::Relaxed),
                records_dropped: c.records_dropped.load(Ordering::Relaxed),
                prior_links_resolved: c.prior_links_resolved.load(Ordering::Relaxed),
                records_settled_by_probe: c.settled_by_probe.load(Ordering::Relaxed),
            },
        }
    }

    fn write(&self, key: &Key, value: &[u8], ts: Timestamp, tombstone: bool) -> Result<PutReceipt> {
        let bucket = self.bucket_of(key);
        let mut rec = KvRecord::new(*key, value.to_vec(), ts);
        rec.tombstone = tombstone;
        loop {
            {
                let _excl = self.stripe(bucket).lock();
                let cached = self.cache.lock().probe(key);
                rec.prior = match cached {
                    Some(c) if ts <= c.ts => return Err(Error::Ordering { ts, latest: c.ts }),
                    Some(c) => Link::At(c.loc),
                    None => Link::UnknownPrior,
                };
                rec.hash_next = self.head(bucket);
                match self.log.append(&rec, AppendClass::User) {
                    Ok(a) => {
                        self.heads[bucket].store(a.loc.word(), Ordering::Release);
                        self.cache.lock().insert(*key, CacheEntry { loc: a.loc, ts });
                        self.counters.puts.fetch_add(1, Ordering::Relaxed);
                        return Ok(PutReceipt { loc: a.loc, seq: a.seq });
                    }
                    Err(Error::StoreFull) => {}
                    Err(e) => return Err(e),
                }
            }
            if self.gc_cycle()? == 0 {
                return Err(Error::StoreFull);
            }
        }
    }

    /// Walks a bucket chain from its head to the newest record of `key`.
    /// Returns the record, its location and its depth.
    fn walk_to_key(
        &self,
        w: &mut Walker<'_, D>,
        head: Link,
        key: &Key,
    ) -> Result<Option<(FlashLocation, KvRecord, usize)>> {
        let mut cur = head;
        let mut depth = 0;
        while let Some(loc) = cur.location() {
            let rec = w.read(loc)?;
            depth += 1;
            if rec.key == *key {
                return Ok(Some((loc, rec, depth)));
            }
            cur = rec.hash_next;
        }
        Ok(None)
    }

    /// Finds the newest version of a key, populating the cache on a miss.
    /// A cache hit costs no read, so the record comes back only from a
    /// chain walk. The caller must hold a read guard.
    fn latest(
        &self,
        w: &mut Walker<'_, D>,
        key: &Key,
    ) -> Result<(FlashLocation, Option<KvRecord>)> {
        if let Some(c) = self.cache.lock().probe(key) {
            return Ok((c.loc, None));
        }
        let bucket = self.bucket_of(key);
        let head = self.head(bucket);
        let Some((loc, rec, depth)) = self.walk_to_key(w, head, key)? else {
            return Err(Error::NotFound);
        };
        self.depth[depth.min(DEPTH_HISTOGRAM_LEN - 1)].fetch_add(1, Ordering::Relaxed);
        // Only publish if no put or sweep touched the bucket meanwhile.
        let _excl = self.stripe(bucket).lock();
        if self.head(bucket) == head {
            self.cache.lock().insert(*key, CacheEntry { loc, ts: rec.version });
        }
        Ok((loc, Some(rec)))
    }

    /// Location of the newest version of a key.
    pub fn lookup_latest(&self, key: &Key) -> Result<FlashLocation> {
        let _guard = self.log.pin();
        let mut w = Walker::new(&self.log);
        let r = self.latest(&mut w, key).map(|(loc, _)| loc);
        self.charge(&w);
        r
    }

    fn charge(&self, w: &Walker<'_, D>) {
        self.counters.record_reads.fetch_add(w.records, Ordering::Relaxed);
        self.counters.page_reads.fetch_add(w.pages, Ordering::Relaxed);
    }

    fn snapshot_read(&self, w: &mut Walker<'_, D>, key: &Key, snapshot: Timestamp) -> Result<Versioned> {
        let wm = self.watermark.get();
        let mut rec = match self.latest(w, key)? {
            (_, Some(rec)) => rec,
            (loc, None) => {
                let rec = w.read(loc)?;
                if rec.key != *key {
                    return Err(Error::Corruption(format!("cache entry at {loc} is stale")));
                }
                rec
            }
        };
        loop {
            if rec.version <= snapshot {
                if rec.tombstone {
                    return Err(Error::NotFound);
                }
                return Ok(Versioned { ts: rec.version, value: rec.value });
            }
            if rec.version < wm {
                return Err(Error::VersionRetired);
            }
            rec = match rec.prior {
                Link::Null => return Err(Error::NotFoundAtSnapshot),
                Link::At(loc) => {
                    let older = w.read(loc)?;
                    if older.key != *key || older.version >= rec.version {
                        return Err(Error::Corruption(format!("prior link at {loc} is broken")));
                    }
                    older
                }
                Link::UnknownPrior => {
                    let Some((_, older, _)) = self.walk_to_key(w, rec.hash_next, key)? else {
                        return Err(Error::NotFoundAtSnapshot);
                    };
                    older
                }
            };
        }
    }

    /// Rewrites a bucket's retained records if any reachable record lies in
    /// `victims`, or unconditionally when `victims` is `None`. Returns the
    /// number of records rewritten.
    fn sweep(&self, bucket: usize, victims: Option<&HashSet<u32>>) -> Result<usize> {
        let _excl = self.stripe(bucket).lock();
        let _guard = self.log.pin();
        let mut w = Walker::new(&self.log);
        let mut chain = Vec::new();
        let mut cur = self.head(bucket);
        while let Some(loc) = cur.location() {
            let rec = w.read(loc)?;
            cur = rec.hash_next;
            chain.push((loc, rec));
        }
        self.counters.buckets_scanned.fetch_add(1, Ordering::Relaxed);
        if chain.is_empty() {
            return Ok(0);
        }

        // Retention per key over the chain, which is newest first.
        let wm = self.watermark.get();
        let mut per_key: HashMap<Key, Vec<usize>> = HashMap::new();
        for (i, (_, rec)) in chain.iter().enumerate().rev() {
            per_key.entry(rec.key).or_default().push(i);
        }
        let mut keep = vec![false; chain.len()];
        for idx in per_key.values() {
            let ts: Vec<_> = idx.iter().map(|&i| chain[i].1.version).collect();
            for (&i, k) in idx.iter().zip(retained_mask(&ts, wm)) {
                keep[i] = k;
            }
        }
        if let Some(v) = victims {
            let in_victim = chain.iter().any(|(loc, _)| v.contains(&self.log.block_of(*loc)));
            // The chain has been read anyway; rebuild it if it is mostly garbage.
            let retained = keep.iter().filter(|&&k| k).count();
            let garbage = chain.len() - retained;
            if !in_victim && (garbage < COMPACT_MIN_GARBAGE || garbage < retained) {
                return Ok(0);
            }
        }

        // Re-append oldest first so the newest record ends up at the head.
        let mut next = Link::Null;
        let mut newest: HashMap<Key, CacheEntry> = HashMap::new();
        let mut rewritten = 0;
        let mut resolved = 0;
        for (i, (_, rec)) in chain.iter().enumerate().rev() {
            if !keep[i] {
                continue;
            }
            let mut moved = rec.clone();
            moved.hash_next = next;
            moved.prior = newest.get(&rec.key).map_or(Link::Null, |c| Link::At(c.loc));
            if rec.prior == Link::UnknownPrior {
                resolved += 1;
            }
            let a = self.log.append(&moved, AppendClass::Relocation)?;
            next = Link::At(a.loc);
            newest.insert(rec.key, CacheEntry { loc: a.loc, ts: rec.version });
            rewritten += 1;
        }
        self.heads[bucket].store(next.word(), Ordering::Release);
        {
            let mut cache = self.cache.lock();
            for (key, e) in &newest {
                cache.refresh(key, *e);
            }
        }
        let c = &self.counters;
        c.buckets_rewritten.fetch_add(1, Ordering::Relaxed);
        c.records_rewritten.fetch_add(rewritten as u64, Ordering::Relaxed);
        c.records_dropped.fetch_add((chain.len() - rewritten) as u64, Ordering::Relaxed);
        c.prior_links_resolved.fetch_add(resolved, Ordering::Relaxed);
        Ok(rewritten)
    }

    /// Sweeps one bucket unconditionally.
    pub fn gc_sweep_bucket(&self, bucket: usize) -> Result<usize> {
        if bucket >= self.heads.len() {
            return Err(Error::Address(format!("bucket {bucket} out of range")));
        }
        let _gc = self.gc_lock.lock();
        self.sweep(bucket, None)
    }

    /// Sweeps every bucket, e.g. to reach a canonical layout before an audit.
    pub fn sweep_all(&self) -> Result<usize> {
        let _gc = self.gc_lock.lock();
        let mut n = 0;
        for b in 0..self.heads.len() {
            n += self.sweep(b, None)?;
        }
        Ok(n)
    }

    /// True when a victim record is provably off its chain: the key's
    /// version list, entered from the cache, holds the same version at
    /// another location or steps past it. A cache miss, an unresolved prior
    /// link or a long list proves nothing.
    fn probe_dead(&self, w: &mut Walker<'_, D>, loc: FlashLocation, rec: &KvRecord) -> Result<bool> {
        let Some(e) = self.cache.lock().peek(&rec.key) else {
            return Ok(false);
        };
        if e.ts < rec.version {
            return Ok(false);
        }
        let mut cur = Link::At(e.loc);
        for _ in 0..PROBE_HOPS {
            let at = match cur {
                // Sweeps end a version list at the oldest version they keep.
                Link::Null => return Ok(true),
                Link::UnknownPrior => return Ok(false),
                Link::At(at) => at,
            };
            if at == loc {
                return Ok(false);
            }
            let r = w.read(at)?;
            if r.key != rec.key {
                return Ok(false);
            }
            if r.version <= rec.version {
                return Ok(true);
            }
            cur = r.prior;
        }
        Ok(false)
    }

    /// Does one slice of collection work: scans a batch of victim blocks,
    /// sweeps a batch of buckets, or reclaims the victims once nothing in
    /// them is reachable. Starts a cycle if none is under way. Returns
    /// blocks reclaimed.
    fn advance(&self, slot: &mut Option<Cycle>) -> Result<usize> {
        let cycle = match slot {
            Some(c) => c,
            None => {
                let victims: Vec<u32> =
                    self.log.victim_candidates().into_iter().take(self.victims_per_cycle).collect();
                if victims.is_empty() {
                    return Ok(0);
                }
                slot.insert(Cycle::new(victims))
            }
        };
        // Probes and sweeps of distinct keys and buckets are independent. The
        // collector keeps one stream of them in flight per channel.
        let mut streams = Streams::new(self.log.device().as_ref());
        if cycle.scanned < cycle.victims.len() {
            let _guard = self.log.pin();
            let end = (cycle.scanned + streams.len()).min(cycle.victims.len());
            let mut settled = 0;
            for i in cycle.scanned..end {
                streams.begin();
                for (loc, r) in self.log.read_block_records(cycle.victims[i])? {
                    let b = self.bucket_of(&r.key);
                    if cycle.pending.contains(&b) {
                        continue;
                    }
                    let mut w = Walker::new(&self.log);
                    if self.probe_dead(&mut w, loc, &r)? {
                        settled += 1;
                    } else {
                        cycle.pending.insert(b);
                        cycle.buckets.push_back(b);
                    }
                }
                streams.end();
            }
            streams.join();
            cycle.scanned = end;
            self.counters.settled_by_probe.fetch_add(settled, Ordering::Relaxed);
            return Ok(0);
        }
        if !cycle.buckets.is_empty() {
            for _ in 0..streams.len() {
                let Some(b) = cycle.buckets.pop_front() else { break };
                streams.begin();
                self.sweep(b, Some(&cycle.victim_set))?;
                streams.end();
            }
            streams.join();
            return Ok(0);
        }
        for &v in &cycle.victims {
            self.log.reclaim_block(v)?;
        }
        let n = cycle.victims.len();
        *slot = None;
        self.counters.gc_cycles.fetch_add(1, Ordering::Relaxed);
        Ok(n)
    }

    /// One slice of collection work; see [`VersionedStore::gc_slice`].
    pub fn gc_slice(&self) -> Result<usize> {
        self.advance(&mut self.gc_lock.lock())
    }

    /// Reclaims the oldest log blocks by sweeping every bucket that may
    /// still reach a record in them, finishing any cycle under way first.
    /// Returns blocks reclaimed.
    pub fn gc_cycle(&self) -> Result<usize> {
        let mut slot = self.gc_lock.lock();
        loop {
            let n = self.advance(&mut slot)?;
            if slot.is_none() {
                return Ok(n);
            }
        }
    }

    /// Walks every chain, checking that each terminates, that records sit in
    /// the bucket their key hashes to, and that prior links stay within the
    /// key and go back in time. Each cache entry must name the record at its
    /// location.
    pub fn audit(&self) -> Result<ChainAudit> {
        let _guard = self.log.pin();
        let mut out = ChainAudit::default();
        let bound = self.log.device().block_count() as usize
            * self.log.device().pages_per_block() as usize
            * 8;
        for b in 0..self.heads.len() {
            let mut w = Walker::new(&self.log);
            let mut cur = self.head(b);
            let mut len = 0;
            while let Some(loc) = cur.location() {
                len += 1;
                if len > bound {
                    return Err(Error::Corruption(format!("bucket {b} chain does not terminate")));
                }
                let rec = w.read(loc)?;
                if self.bucket_of(&rec.key) != b {
                    return Err(Error::Corruption(format!("record at {loc} is in the wrong bucket")));
                }
                out.reachable_blocks.insert(self.log.block_of(loc));
                out.reachable.push((rec.key, rec.version, rec.tombstone));
                if rec.prior == Link::UnknownPrior {
                    out.unknown_prior_links += 1;
                }
                cur = rec.hash_next;
                if let Link::At(p) = rec.prior {
                    let older = w.read(p)?;
                    if older.key != rec.key || older.version >= rec.version {
                        return Err(Error::Corruption(format!("prior link at {loc} is broken")));
                    }
                }
            }
            out.longest_chain = out.longest_chain.max(len);
        }
        let cached = self.cache.lock().entries();
        let mut w = Walker::new(&self.log);
        for (key, e) in cached {
            let rec = w.read(e.loc)?;
            if rec.key != key || rec.version != e.ts {
                return Err(Error::Corruption(format!("cache entry at {} names another record", e.loc)));
            }
            out.cache_entries_checked += 1;
        }
        Ok(out)
    }
}

impl<D: PageDevice + 'static> VersionedStore for Skimpy<D> {
    fn name(&self) -> &'static str {
        "skimpy"
    }

    fn put(&self, key: &Key, value: &[u8], ts: Timestamp) -> Result<PutReceipt> {
        self.write(key, value, ts, false)
    }

    fn delete(&self, key: &Key, ts: Timestamp) -> Result<PutReceipt> {
        self.write(key, &[], ts, true)
    }

    fn get(&self, key: &Key, snapshot: Timestamp) -> Result<Versioned> {
        self.counters.gets.fetch_add(1, Ordering::Relaxed);
        let _guard = self.log.pin();
        let mut w = Walker::new(&self.log);
        let r = self.snapshot_read(&mut w, key, snapshot);
        self.charge(&w);
        r
    }

    /// Also true while a cycle is under way, so a background collector
    /// finishes it.
    fn needs_gc(&self) -> bool {
        self.log.needs_gc() || self.gc_lock.try_lock().is_some_and(|c| c.is_some())
    }

    fn gc_step(&self) -> Result<usize> {
        self.gc_cycle()
    }

    fn gc_slice(&self) -> Result<usize> {
        Skimpy::gc_slice(self)
    }

    fn memory_usage(&self) -> MemoryUsage {
        let cache = self.cache.lock();
        MemoryUsage {
            index_bytes: BUCKET_BYTES * self.heads.len() as u64 + cache.accounted_bytes(),
            overhead_bytes: cache.key_bytes(),
        }
    }

    fn stats(&self) -> StoreStats {
        let log = self.log.stats();
        let c = &self.counters;
        let cache = self.cache.lock();
        StoreStats {
            puts: c.puts.load(Ordering::Relaxed),
            gets: c.gets.load(Ordering::Relaxed),
            record_reads: c.record_reads.load(Ordering::Relaxed),
            page_reads: c.page_reads.load(Ordering::Relaxed),
            gc_cycles: c.gc_cycles.load(Ordering::Relaxed),
            blocks_reclaimed: log.blocks_reclaimed,
            records_relocated: c.records_rewritten.load(Ordering::Relaxed),
            cache_hits: cache.hits(),
            cache_misses: cache.misses(),
            write_amp: log.write_amplification(),
        }
    }

    fn write_log(&self) -> &dyn LogControl {
        &self.log
    }

    fn watermark(&self) -> &Watermark {
        &self.watermark
    }

    /// Groups keys by bucket so that each bucket's initial records share
    /// pages and blocks.
    fn load_order(&self, keys: &mut [Key]) {
        keys.sort_by_cached_key(|k| self.bucket_of(k));
    }
}

#[cfg(test)]
mod tests;
