//! Reference models and randomized checkers used by the test suites.
//!
//! [`ShadowStore`] is a brute-force multi-version map that applies the
//! watermark retention rule directly to the full version history. The op
//! runners drive real stores and the shadow in lockstep and report any
//! difference. [`check_histories`] enumerates every interleaving of a few
//! small transactions and compares committed results with all serial
//! executions.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use flashkv::clock::{Nanos, TimeMode};
use flashkv::flashsim::{BlockId, DeviceConfig, FlashDevice, PageBuf, PageId};
use flashkv::ftl::{Key, PageDevice, Timestamp};
use flashkv::semel::{Semel, SemelConfig, SemelStore};
use flashkv::skimpy::{Skimpy, SkimpyConfig};
use flashkv::store::{VersionedStore, LATEST};
use flashkv::txn::{Outcome, TxnConfig, TxnError, TxnManager};
use flashkv::vftl::{LogicalDeviceConfig, Vftl, VftlConfig};
use flashkv::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a get returned, reduced to something comparable across stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadResult {
    Value(Timestamp, Vec<u8>),
    Failed(Error),
}

impl From<flashkv::Result<flashkv::store::Versioned>> for ReadResult {
    fn from(r: flashkv::Result<flashkv::store::Versioned>) -> Self {
        match r {
            Ok(v) => ReadResult::Value(v.ts, v.value),
            Err(e) => ReadResult::Failed(e),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct ShadowStore {
    /// Every version ever written, ascending; `None` is a tombstone.
    versions: HashMap<Key, Vec<(Timestamp, Option<Vec<u8>>)>>,
    watermark: Timestamp,
}

impl ShadowStore {
    pub fn put(&mut self, key: Key, value: &[u8], ts: Timestamp) {
        self.versions.entry(key).or_default().push((ts, Some(value.to_vec())));
    }

    pub fn delete(&mut self, key: Key, ts: Timestamp) {
        self.versions.entry(key).or_default().push((ts, None));
    }

    pub fn advance_watermark(&mut self, w: Timestamp) {
        self.watermark = self.watermark.max(w);
    }

    pub fn watermark(&self) -> Timestamp {
        self.watermark
    }

    /// The version a snapshot read must return. A snapshot below the
    /// watermark is refused once the key has a version between the
    /// snapshot and the watermark, since retention no longer guarantees
    /// the snapshot's state.
    pub fn get(&self, key: &Key, snapshot: Timestamp) -> ReadResult {
        let Some(vs) = self.versions.get(key) else {
            return ReadResult::Failed(Error::NotFound);
        };
        let w = self.watermark;
        if snapshot < w && vs.iter().any(|(t, _)| *t > snapshot && *t < w) {
            return ReadResult::Failed(Error::VersionRetired);
        }
        match vs.iter().filter(|(t, _)| *t <= snapshot).max_by_key(|(t, _)| *t) {
            None => ReadResult::Failed(Error::NotFoundAtSnapshot),
            Some((_, None)) => ReadResult::Failed(Error::NotFound),
            Some((t, Some(v))) => ReadResult::Value(*t, v.clone()),
        }
    }

    /// Versions that must survive collection: all at or above the
    /// watermark, plus the youngest below it.
    pub fn retained(&self) -> BTreeSet<(Key, Timestamp, bool)> {
        let w = self.watermark;
        let mut out = BTreeSet::new();
        for (k, vs) in &self.versions {
            let youngest_below = vs.iter().map(|(t, _)| *t).filter(|&t| t < w).max();
            for (t, v) in vs {
                if *t >= w || Some(*t) == youngest_below {
                    out.insert((*k, *t, v.is_none()));
                }
            }
        }
        out
    }

    pub fn latest_ts(&self, key: &Key) -> Option<Timestamp> {
        self.versions.get(key).and_then(|vs| vs.last()).map(|(t, _)| *t)
    }
}

#[derive(Debug, Clone)]
pub struct OpMix {
    pub keys: u64,
    pub ops: usize,
    pub seed: u64,
    pub put: f64,
    pub delete: f64,
    pub snapshot_get: f64,
    pub latest_get: f64,
    pub gc: f64,
    /// Share of ops that advance the watermark; the rest of the mass.
    pub watermark: f64,
    /// The watermark trails the newest timestamp by up to this much.
    pub max_lag: u64,
}

impl OpMix {
    pub fn standard(seed: u64) -> Self {
        OpMix {
            keys: 1000,
            ops: 100_000,
            seed,
            put: 0.45,
            delete: 0.02,
            snapshot_get: 0.25,
            latest_get: 0.20,
            gc: 0.03,
            watermark: 0.05,
            max_lag: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Put(Key, Vec<u8>, Timestamp),
    Delete(Key, Timestamp),
    Get(Key, Timestamp),
    Gc,
    Watermark(Timestamp),
}

/// A seeded op sequence with strictly increasing write timestamps.
pub fn generate_ops(mix: &OpMix) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix.seed);
    let mut ts: Timestamp = 0;
    let mut w: Timestamp = 0;
    let mut out = Vec::with_capacity(mix.ops);
    let total = mix.put + mix.delete + mix.snapshot_get + mix.latest_get + mix.gc + mix.watermark;
    for _ in 0..mix.ops {
        let key = Key::from_u64(rng.random_range(0..mix.keys));
        let mut x = rng.random::<f64>() * total;
        let op = 'pick: {
            for (p, kind) in [
                (mix.put, 0),
                (mix.delete, 1),
                (mix.snapshot_get, 2),
                (mix.latest_get, 3),
                (mix.gc, 4),
            ] {
                if x < p {
                    break 'pick kind;
                }
                x -= p;
            }
            5
        };
        out.push(match op {
            0 => {
                ts += 1;
                let len = rng.random_range(1..=200);
                Op::Put(key, vec![(ts % 253) as u8; len], ts)
            }
            1 => {
                ts += 1;
                Op::Delete(key, ts)
            }
            2 => Op::Get(key, rng.random_range(0..=ts)),
            3 => Op::Get(key, LATEST),
            4 => Op::Gc,
            _ => {
                w = w.max(ts.saturating_sub(rng.random_range(0..=mix.max_lag)));
                Op::Watermark(w)
            }
        });
    }
    out
}

/// Small emulated device for the randomized suites: collection runs often.
pub fn test_device(blocks: u32) -> DeviceConfig {
    DeviceConfig { block_count: blocks, ..Default::default() }
}

/// The three stores over equally sized devices.
pub fn test_stores(blocks: u32, keys: u64) -> flashkv::Result<Vec<Arc<dyn VersionedStore>>> {
    let semel = Semel::open(test_device(blocks), SemelConfig::default())?;
    let mut skimpy_cfg = SkimpyConfig::for_keys(keys as usize, 5.0, 0.10);
    skimpy_cfg.cache_capacity = skimpy_cfg.cache_capacity.max(1);
    let skimpy = Skimpy::open(test_device(blocks), skimpy_cfg)?;
    let vftl = Vftl::open(VftlConfig {
        device: LogicalDeviceConfig::conventional(test_device(blocks + blocks / 8), Default::default()),
        host: SemelConfig::default(),
    })?;
    Ok(vec![Arc::new(semel), Arc::new(skimpy), Arc::new(vftl)])
}

/// Applies one op to a store. Returns the read result for gets.
pub fn apply(store: &dyn VersionedStore, op: &Op) -> Result<Option<ReadResult>, Error> {
    match op {
        Op::Put(k, v, ts) => store.put(k, v, *ts).map(|_| None),
        Op::Delete(k, ts) => store.delete(k, *ts).map(|_| None),
        Op::Get(k, s) => Ok(Some(store.get(k, *s).into())),
        Op::Gc => store.gc_step().map(|_| None),
        Op::Watermark(w) => {
            store.watermark().advance(*w);
            Ok(None)
        }
    }
}

pub fn apply_shadow(shadow: &mut ShadowStore, op: &Op) -> Option<ReadResult> {
    match op {
        Op::Put(k, v, ts) => shadow.put(*k, v, *ts),
        Op::Delete(k, ts) => shadow.delete(*k, *ts),
        Op::Get(k, s) => return Some(shadow.get(k, *s)),
        Op::Gc => {}
        Op::Watermark(w) => shadow.advance_watermark(*w),
    }
    None
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub ops: usize,
    pub reads_checked: usize,
    pub divergences: usize,
    pub store_errors: usize,
    pub first_divergence: Option<String>,
    pub blocks_reclaimed: u64,
}

/// Runs `ops` against a store and the shadow map in lockstep.
pub fn run_against_oracle(store: &dyn VersionedStore, ops: &[Op]) -> (OracleReport, ShadowStore) {
    let mut shadow = ShadowStore::default();
    let mut rep = OracleReport { ops: ops.len(), ..Default::default() };
    for (i, op) in ops.iter().enumerate() {
        let want = apply_shadow(&mut shadow, op);
        match apply(store, op) {
            Err(e) => {
                rep.store_errors += 1;
                rep.first_divergence.get_or_insert_with(|| format!("op {i} {op:?}: store error {e}"));
            }
            Ok(got) => {
                if let (Some(got), Some(want)) = (got, want) {
                    rep.reads_checked += 1;
                    if got != want {
                        rep.divergences += 1;
                        rep.first_divergence.get_or_insert_with(|| {
                            format!("op {i} {op:?}: store {:?}, oracle {:?}", brief(&got), brief(&want))
                        });
                    }
                }
            }
        }
    }
    rep.blocks_reclaimed = store.stats().blocks_reclaimed;
    (rep, shadow)
}

fn brief(r: &ReadResult) -> String {
    match r {
        ReadResult::Value(t, v) => format!("ts {t} ({} bytes)", v.len()),
        ReadResult::Failed(e) => format!("{e:?}"),
    }
}

#[derive(Debug, Clone, Default)]
pub struct DifferentialReport {
    pub reads_compared: usize,
    pub divergences: usize,
    pub store_errors: usize,
    pub first_divergence: Option<String>,
}

/// Runs `ops` on every store and compares the get results pairwise.
pub fn run_differential(stores: &[Arc<dyn VersionedStore>], ops: &[Op]) -> DifferentialReport {
    let mut rep = DifferentialReport::default();
    for (i, op) in ops.iter().enumerate() {
        let results: Vec<_> = stores.iter().map(|s| apply(s.as_ref(), op)).collect();
        let mut reads = Vec::new();
        for (s, r) in stores.iter().zip(results) {
            match r {
                Err(e) => {
                    rep.store_errors += 1;
                    rep.first_divergence
                        .get_or_insert_with(|| format!("op {i} {op:?}: {} error {e}", s.name()));
                }
                Ok(Some(r)) => reads.push((s.name(), r)),
                Ok(None) => {}
            }
        }
        if reads.len() > 1 {
            rep.reads_compared += 1;
            if reads.windows(2).any(|w| w[0].1 != w[1].1) {
                rep.divergences += 1;
                rep.first_divergence.get_or_insert_with(|| {
                    let parts: Vec<_> = reads.iter().map(|(n, r)| format!("{n}={}", brief(r))).collect();
                    format!("op {i} {op:?}: {}", parts.join(", "))
                });
            }
        }
    }
    rep
}

/// Chain checks for the on-flash index after every bucket has been swept.
#[derive(Debug, Clone, Default)]
pub struct ChainReport {
    pub chains_terminate: bool,
    pub duplicate_records: usize,
    pub reachable_equals_retained: bool,
    pub free_blocks_reachable: usize,
    pub unknown_prior_links: usize,
    pub missing: usize,
    pub extra: usize,
}

pub fn check_chains<D>(s: &Skimpy<D>, shadow: &ShadowStore) -> flashkv::Result<ChainReport>
where
    D: flashkv::ftl::PageDevice + 'static,
{
    s.watermark().advance(shadow.watermark());
    s.sweep_all()?;
    let audit = match s.audit() {
        Ok(a) => a,
        Err(Error::Corruption(_)) => return Ok(ChainReport::default()),
        Err(e) => return Err(e),
    };
    let reachable: BTreeSet<_> = audit.reachable.iter().copied().collect();
    let retained = shadow.retained();
    Ok(ChainReport {
        chains_terminate: true,
        duplicate_records: audit.reachable.len() - reachable.len(),
        reachable_equals_retained: reachable == retained,
        free_blocks_reachable: audit.reachable_blocks.iter().filter(|b| s.log().is_free(**b)).count(),
        unknown_prior_links: audit.unknown_prior_links,
        missing: retained.difference(&reachable).count(),
        extra: reachable.difference(&retained).count(),
    })
}

/// Raw flash that counts program-order violations and reads of pages with
/// nothing programmed on them.
pub struct AuditDevice {
    flash: FlashDevice,
    write_violations: AtomicU64,
    erased_reads: AtomicU64,
}

impl AuditDevice {
    pub fn new(cfg: DeviceConfig) -> flashkv::Result<Self> {
        Ok(AuditDevice {
            flash: FlashDevice::new(cfg)?,
            write_violations: AtomicU64::new(0),
            erased_reads: AtomicU64::new(0),
        })
    }

    pub fn write_violations(&self) -> u64 {
        self.write_violations.load(Ordering::Relaxed)
    }

    pub fn erased_reads(&self) -> u64 {
        self.erased_reads.load(Ordering::Relaxed)
    }

    pub fn flash(&self) -> &FlashDevice {
        &self.flash
    }
}

impl PageDevice for AuditDevice {
    fn page_size(&self) -> usize {
        self.flash.config().page_size_bytes
    }

    fn pages_per_block(&self) -> u32 {
        self.flash.config().pages_per_block
    }

    fn block_count(&self) -> u32 {
        self.flash.config().block_count
    }

    fn parallelism(&self) -> u32 {
        self.flash.config().channel_count
    }

    fn read_page(&self, page: u32) -> flashkv::Result<PageBuf> {
        let id = PageId(page);
        let state = self.flash.block_state(self.flash.block_of(id))?;
        if !state.page_written[self.flash.index_in_block(id) as usize] {
            self.erased_reads.fetch_add(1, Ordering::Relaxed);
        }
        self.flash.read_page(id)
    }

    fn write_page(&self, page: u32, data: &[u8]) -> flashkv::Result<()> {
        let r = self.flash.write_page(PageId(page), data);
        if matches!(r, Err(Error::WriteViolation { .. } | Error::Sequence { .. })) {
            self.write_violations.fetch_add(1, Ordering::Relaxed);
        }
        r
    }

    fn erase_block(&self, block: u32) -> flashkv::Result<()> {
        self.flash.erase_block(BlockId(block))
    }

    fn now(&self) -> Nanos {
        self.flash.now()
    }

    fn time_mode(&self) -> TimeMode {
        self.flash.time_mode()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlashReport {
    pub store: &'static str,
    pub write_violations: u64,
    pub erased_reads: u64,
    /// Index audits run after collection steps, and how many failed.
    pub audits: usize,
    pub audit_failures: usize,
    pub store_errors: usize,
    pub divergences: usize,
    pub blocks_reclaimed: u64,
    /// Chain checks at the end of the run; always clean for stores
    /// without on-flash chains.
    pub chains_clean: bool,
    pub first_problem: Option<String>,
}

impl FlashReport {
    pub fn clean(&self) -> bool {
        self.write_violations == 0
            && self.erased_reads == 0
            && self.audit_failures == 0
            && self.store_errors == 0
            && self.divergences == 0
            && self.chains_clean
    }
}

/// Drives `ops` against a store and the shadow map, auditing the index after
/// every `audit_every`-th collection step.
fn audited_run(
    store: &dyn VersionedStore,
    ops: &[Op],
    audit_every: usize,
    audit: &dyn Fn() -> flashkv::Result<()>,
    rep: &mut FlashReport,
) -> ShadowStore {
    let mut shadow = ShadowStore::default();
    let mut gcs = 0;
    for (i, op) in ops.iter().enumerate() {
        let want = apply_shadow(&mut shadow, op);
        match apply(store, op) {
            Err(e) => {
                rep.store_errors += 1;
                rep.first_problem.get_or_insert_with(|| format!("op {i}: {e}"));
            }
            Ok(got) => {
                if got.is_some() && got != want {
                    rep.divergences += 1;
                    rep.first_problem.get_or_insert_with(|| format!("op {i} {op:?} diverged"));
                }
            }
        }
        if matches!(op, Op::Gc) {
            gcs += 1;
            if gcs % audit_every == 0 {
                rep.audits += 1;
                if let Err(e) = audit() {
                    rep.audit_failures += 1;
                    rep.first_problem.get_or_insert_with(|| format!("audit after op {i}: {e}"));
                }
            }
        }
    }
    rep.blocks_reclaimed = store.stats().blocks_reclaimed;
    shadow
}

/// Flash-level invariants for each store: no program-order violations, no
/// reads of unprogrammed pages, every index pointer naming the record at its
/// location after collection, and skimpy chains holding exactly the
/// retained versions.
pub fn check_flash_invariants(blocks: u32, ops: &[Op], keys: u64, audit_every: usize) -> flashkv::Result<Vec<FlashReport>> {
    let mut out = Vec::new();

    let dev = Arc::new(AuditDevice::new(test_device(blocks))?);
    let semel = SemelStore::new(Arc::clone(&dev), SemelConfig::default(), "semel")?;
    let mut rep = FlashReport { store: "semel", chains_clean: true, ..Default::default() };
    audited_run(&semel, ops, audit_every, &|| semel.audit().map(|_| ()), &mut rep);
    rep.write_violations = dev.write_violations() + dev.flash().stats().rejected_ops;
    rep.erased_reads = dev.erased_reads();
    out.push(rep);

    let dev = Arc::new(AuditDevice::new(test_device(blocks))?);
    let mut cfg = SkimpyConfig::for_keys(keys as usize, 5.0, 0.10);
    cfg.cache_capacity = cfg.cache_capacity.max(1);
    let skimpy = Skimpy::new(Arc::clone(&dev), cfg)?;
    let mut rep = FlashReport { store: "skimpy", ..Default::default() };
    let shadow = audited_run(&skimpy, ops, audit_every, &|| skimpy.audit().map(|_| ()), &mut rep);
    let chains = check_chains(&skimpy, &shadow)?;
    rep.chains_clean = chains.chains_terminate
        && chains.reachable_equals_retained
        && chains.duplicate_records == 0
        && chains.free_blocks_reachable == 0
        && chains.unknown_prior_links == 0;
    if !rep.chains_clean {
        rep.first_problem.get_or_insert_with(|| format!("chains: {chains:?}"));
    }
    rep.write_violations = dev.write_violations() + dev.flash().stats().rejected_ops;
    rep.erased_reads = dev.erased_reads();
    out.push(rep);

    // The conventional device hides its flash behind a logical map; the
    // physical device rejects and counts any out-of-order program itself.
    let vftl = Vftl::open(VftlConfig {
        device: LogicalDeviceConfig::conventional(test_device(blocks + blocks / 8), Default::default()),
        host: SemelConfig::default(),
    })?;
    let mut rep = FlashReport { store: "vftl", chains_clean: true, ..Default::default() };
    audited_run(&vftl, ops, audit_every, &|| vftl.host().audit().map(|_| ()), &mut rep);
    rep.write_violations = vftl.device().device_stats().rejected_ops;
    out.push(rep);
    Ok(out)
}

pub const HISTORY_KEYS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HOp {
    Read(u8),
    Write(u8, u8),
}

/// A small transaction: its ops, then a commit step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HTxn {
    pub ops: Vec<HOp>,
}

impl HTxn {
    pub fn steps(&self) -> usize {
        self.ops.len() + 1
    }

    pub fn read_only(&self) -> bool {
        self.ops.iter().all(|o| matches!(o, HOp::Read(_)))
    }
}

/// Values in the store before any transaction runs.
pub const INITIAL: [Option<u8>; HISTORY_KEYS as usize] = [Some(0), Some(0), None];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryOutcome {
    pub committed: Vec<bool>,
    /// Values each transaction read, in op order.
    pub reads: Vec<Vec<Option<u8>>>,
    pub final_state: Vec<Option<u8>>,
}

fn hkey(k: u8) -> Key {
    Key::from_u64(k as u64)
}

/// Runs one interleaving. `schedule` lists transaction indices; each entry
/// is that transaction's next step. A transaction begins at its first step.
pub fn execute_schedule(txns: &[HTxn], schedule: &[usize], single_version: bool) -> HistoryOutcome {
    let dev = DeviceConfig { block_count: 8, ..Default::default() };
    let store = Semel::open(dev, SemelConfig { single_version, shards: 1, ..Default::default() })
        .expect("history store");
    let mut ts = 0;
    for (k, v) in INITIAL.iter().enumerate() {
        if let Some(v) = v {
            ts += 1;
            store.put(&hkey(k as u8), &[*v], ts).expect("initial write");
        }
    }
    let store: Arc<dyn VersionedStore> = Arc::new(store);
    let mgr = TxnManager::new(Arc::clone(&store), TxnConfig { clients: txns.len(), ack_interval: 1 }, ts);
    let mut live: Vec<Option<flashkv::txn::Txn>> = vec![None; txns.len()];
    let mut pos = vec![0usize; txns.len()];
    let mut out = HistoryOutcome {
        committed: vec![false; txns.len()],
        reads: vec![Vec::new(); txns.len()],
        final_state: Vec::new(),
    };
    let mut dead = vec![false; txns.len()];
    for &i in schedule {
        if dead[i] {
            pos[i] += 1;
            continue;
        }
        let t = live[i].get_or_insert_with(|| mgr.begin(i));
        let step = pos[i];
        pos[i] += 1;
        if step < txns[i].ops.len() {
            match txns[i].ops[step] {
                HOp::Read(k) => match mgr.read(t, &hkey(k)) {
                    Ok(v) => out.reads[i].push(v.map(|b| b[0])),
                    Err(TxnError::Aborted(_)) => dead[i] = true,
                    Err(e) => panic!("history read failed: {e}"),
                },
                HOp::Write(k, v) => mgr.write(t, &hkey(k), &[v]).expect("buffered write"),
            }
        } else {
            match mgr.commit(t).expect("commit") {
                Outcome::Committed(_) => out.committed[i] = true,
                Outcome::Aborted(_) => dead[i] = true,
            }
        }
    }
    out.final_state = (0..HISTORY_KEYS)
        .map(|k| match store.get(&hkey(k), LATEST) {
            Ok(v) => Some(v.value[0]),
            Err(Error::NotFound) => None,
            Err(e) => panic!("final read failed: {e}"),
        })
        .collect();
    out
}

/// Reads and final state of running `order` one transaction at a time.
fn serial(txns: &[HTxn], order: &[usize]) -> (Vec<Vec<Option<u8>>>, Vec<Option<u8>>) {
    let mut state = INITIAL.to_vec();
    let mut reads = vec![Vec::new(); txns.len()];
    for &i in order {
        let mut pending: Vec<(u8, u8)> = Vec::new();
        for op in &txns[i].ops {
            match *op {
                HOp::Read(k) => {
                    let own = pending.iter().rev().find(|(pk, _)| *pk == k).map(|(_, v)| *v);
                    reads[i].push(own.or(state[k as usize]));
                }
                HOp::Write(k, v) => pending.push((k, v)),
            }
        }
        for (k, v) in pending {
            state[k as usize] = Some(v);
        }
    }
    (reads, state)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Whether some serial order of the committed transactions yields the same
/// reads for every committed transaction and the same final state.
pub fn is_legal(txns: &[HTxn], outcome: &HistoryOutcome) -> bool {
    let committed: Vec<usize> = (0..txns.len()).filter(|&i| outcome.committed[i]).collect();
    permutations(&committed).into_iter().any(|order| {
        let (reads, state) = serial(txns, &order);
        state == outcome.final_state && committed.iter().all(|&i| reads[i] == outcome.reads[i])
    })
}

/// Every distinct way to interleave transactions with the given step counts.
pub fn interleavings(steps: &[usize]) -> Vec<Vec<usize>> {
    fn go(left: &mut [usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.iter().all(|&n| n == 0) {
            out.push(cur.clone());
            return;
        }
        for i in 0..left.len() {
            if left[i] > 0 {
                left[i] -= 1;
                cur.push(i);
                go(left, cur, out);
                cur.pop();
                left[i] += 1;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut steps.to_vec(), &mut Vec::new(), &mut out);
    out
}

pub fn random_history(rng: &mut ChaCha8Rng) -> Vec<HTxn> {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| {
            let ops = rng.random_range(1..=2);
            let read_only = rng.random_bool(0.4);
            HTxn {
                ops: (0..ops)
                    .map(|_| {
                        let k = rng.random_range(0..HISTORY_KEYS);
                        if read_only || rng.random_bool(0.5) {
                            HOp::Read(k)
                        } else {
                            HOp::Write(k, rng.random_range(1..=9))
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct HistoryReport {
    pub histories: usize,
    pub schedules: usize,
    pub illegal: usize,
    /// Schedules where a transaction aborted under multi-versioning but
    /// committed under single-versioning.
    pub superset_violations: usize,
    pub mv_aborts: usize,
    pub sv_aborts: usize,
    pub first_problem: Option<String>,
}

/// Exhaustively checks every interleaving of `histories` random histories.
pub fn check_histories(seed: u64, histories: usize) -> HistoryReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = HistoryReport { histories, ..Default::default() };
    for _ in 0..histories {
        let txns = random_history(&mut rng);
        let steps: Vec<_> = txns.iter().map(HTxn::steps).collect();
        for sched in interleavings(&steps) {
            rep.schedules += 1;
            let mv = execute_schedule(&txns, &sched, false);
            let sv = execute_schedule(&txns, &sched, true);
            for (mode, o) in [("mv", &mv), ("sv", &sv)] {
                if !is_legal(&txns, o) {
                    rep.illegal += 1;
                    rep.first_problem
                        .get_or_insert_with(|| format!("{mode} {txns:?} schedule {sched:?} gave {o:?}"));
                }
            }
            rep.mv_aborts += mv.committed.iter().filter(|c| !**c).count();
            rep.sv_aborts += sv.committed.iter().filter(|c| !**c).count();
            if (0..txns.len()).any(|i| !mv.committed[i] && sv.committed[i]) {
                rep.superset_violations += 1;
                rep.first_problem
                    .get_or_insert_with(|| format!("superset: {txns:?} schedule {sched:?}"));
            }
        }
    }
    rep
}
