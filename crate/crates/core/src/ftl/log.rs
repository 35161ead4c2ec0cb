//! The packing write log.
//!
//! Records are appended into an open page buffer of eight chunks. The page is
//! programmed once it is full or once its oldest record has waited
//! `pack_timeout`. Client data and relocated data fill separate buffers. Pages are dealt round-robin over a few open head blocks,
//! one per device channel, so recently written data is spread across the
//! channels. Full blocks join the sealed queue, whose front is the log tail
//! and the next garbage collection victim. A fraction of all blocks is held back from user appends
//! so relocation during garbage collection always has somewhere to go.
//!
//! Readers pin an epoch for the duration of a lookup. A reclaimed block is
//! erased only after every reader that entered before the reclaim has left.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use crate::clock::{nanos, Nanos, TimeMode};
use crate::error::{Error, Result};
use crate::flashsim::PageBuf;
use crate::ftl::location::{FlashLocation, CHUNKS_PER_PAGE};
use crate::ftl::record::{decode_page, decode_record, encode_record, KvRecord, RecordLayout};
use crate::ftl::PageDevice;

const FLUSH_HISTORY: usize = 8192;

#[derive(Debug, Clone)]
pub struct LogConfig {
    pub pack_timeout: Duration,
    pub reserve_fraction: f64,
    /// Garbage collection is due once free blocks drop to reserve + headroom.
    pub gc_headroom_blocks: usize,
    /// Open head blocks written in turn. `None` uses the device parallelism.
    pub stripe_width: Option<usize>,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig {
            pack_timeout: Duration::from_millis(1),
            reserve_fraction: 0.10,
            gc_headroom_blocks: 2,
            stripe_width: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendClass {
    /// New data from a client; may not dig into the reserve.
    User,
    /// Data moved by garbage collection; may use the reserve.
    Relocation,
}

impl AppendClass {
    fn buffer(self) -> usize {
        match self {
            AppendClass::User => 0,
            AppendClass::Relocation => 1,
        }
    }
}

/// Where an appended record landed, and the sequence number of its page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Appended {
    pub loc: FlashLocation,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogStats {
    pub user_appends: u64,
    pub relocation_appends: u64,
    pub user_chunks: u64,
    pub relocation_chunks: u64,
    pub page_writes: u64,
    pub padded_chunks: u64,
    pub blocks_reclaimed: u64,
    pub deferred_erases: u64,
}

impl LogStats {
    /// Pages written divided by the pages' worth of user data appended.
    pub fn write_amplification(&self) -> f64 {
        if self.user_chunks == 0 {
            return 0.0;
        }
        self.page_writes as f64 * CHUNKS_PER_PAGE as f64 / self.user_chunks as f64
    }
}

struct OpenPage {
    page: u32,
    seq: u64,
    image: Vec<u8>,
    next_chunk: u32,
    deadline: Nanos,
}

struct LogState {
    open: [Option<OpenPage>; 2],
    /// Open head blocks and the next lane, per append class.
    heads: [Vec<Option<(u32, u32)>>; 2],
    lane: [usize; 2],
    free: VecDeque<u32>,
    sealed: VecDeque<u32>,
    next_seq: u64,
    flush_times: BTreeMap<u64, Nanos>,
    last_seq: Option<u64>,
    stats: LogStats,
}

#[derive(Default)]
struct Epochs {
    global: u64,
    active: BTreeMap<u64, usize>,
    retired: Vec<(u32, u64)>,
}

impl Epochs {
    /// Blocks whose retire epoch precedes every active reader.
    fn drain_safe(&mut self) -> Vec<u32> {
        let floor = self.active.keys().next().copied().unwrap_or(u64::MAX);
        let mut safe = Vec::new();
        self.retired.retain(|&(block, epoch)| {
            if epoch < floor {
                safe.push(block);
                false
            } else {
                true
            }
        });
        safe
    }
}

pub struct Log<D: PageDevice> {
    dev: Arc<D>,
    cfg: LogConfig,
    layout: RecordLayout,
    reserve_blocks: usize,
    state: Mutex<LogState>,
    flushed: Condvar,
    epochs: Mutex<Epochs>,
}

/// Keeps reclaimed blocks from being erased while held.
pub struct ReadGuard<'a, D: PageDevice> {
    log: &'a Log<D>,
    epoch: u64,
}

impl<D: PageDevice> Drop for ReadGuard<'_, D> {
    fn drop(&mut self) {
        let safe = {
            let mut e = self.log.epochs.lock();
            let n = e.active.get_mut(&self.epoch).expect("registered epoch");
            *n -= 1;
            if *n == 0 {
                e.active.remove(&self.epoch);
            }
            e.drain_safe()
        };
        for block in safe {
            self.log.erase_and_free(block).expect("erase of a reclaimed block");
        }
    }
}

impl<D: PageDevice> Log<D> {
    pub fn new(dev: Arc<D>, cfg: LogConfig) -> Result<Self> {
        let blocks = dev.block_count() as usize;
        if !(0.0..1.0).contains(&cfg.reserve_fraction) {
            return Err(Error::Config("reserve_fraction must be in [0, 1)".into()));
        }
        let reserve_blocks = ((blocks as f64 * cfg.reserve_fraction).ceil() as usize).max(1);
        if blocks < reserve_blocks + cfg.gc_headroom_blocks + 2 {
            return Err(Error::Config(format!("{blocks} blocks leave no room above the reserve")));
        }
        let layout = RecordLayout::for_page(dev.page_size());
        // Small devices get fewer heads so open blocks stay a small share.
        let stripe = cfg.stripe_width.unwrap_or(dev.parallelism() as usize).min(blocks / 8).max(1);
        Ok(Log {
            dev,
            cfg,
            layout,
            reserve_blocks,
            state: Mutex::new(LogState {
                open: [None, None],
                heads: [vec![None; stripe], vec![None; stripe]],
                lane: [0; 2],
                free: (0..blocks as u32).collect(),
                sealed: VecDeque::new(),
                next_seq: 1,
                flush_times: BTreeMap::new(),
                last_seq: None,
                stats: LogStats::default(),
            }),
            flushed: Condvar::new(),
            epochs: Mutex::new(Epochs::default()),
        })
    }

    pub fn device(&self) -> &Arc<D> {
        &self.dev
    }

    pub fn layout(&self) -> RecordLayout {
        self.layout
    }

    pub fn config(&self) -> &LogConfig {
        &self.cfg
    }

    pub fn reserve_blocks(&self) -> usize {
        self.reserve_blocks
    }

    pub fn free_blocks(&self) -> usize {
        self.state.lock().free.len()
    }

    pub fn needs_gc(&self) -> bool {
        self.free_blocks() <= self.reserve_blocks + self.cfg.gc_headroom_blocks
    }

    pub fn block_of(&self, loc: FlashLocation) -> u32 {
        loc.page() / self.dev.pages_per_block()
    }

    pub fn stats(&self) -> LogStats {
        self.state.lock().stats
    }

    /// Blocks eligible for reclamation, oldest first.
    pub fn victim_candidates(&self) -> Vec<u32> {
        self.state.lock().sealed.iter().copied().collect()
    }

    /// Blocks currently open for appends.
    pub fn head_blocks(&self) -> Vec<u32> {
        self.state.lock().heads.iter().flatten().flatten().map(|&(b, _)| b).collect()
    }

    pub fn append(&self, rec: &KvRecord, class: AppendClass) -> Result<Appended> {
        let bytes = encode_record(rec, self.layout)?;
        let chunks = (bytes.len() / self.layout.chunk_size) as u32;
        let buf = class.buffer();
        let mut st = self.state.lock();
        if st.open[buf].as_ref().is_some_and(|o| o.next_chunk + chunks > CHUNKS_PER_PAGE) {
            self.flush_locked(&mut st, buf)?;
        }
        if st.open[buf].is_none() {
            let page = self.allocate_page(&mut st, class)?;
            let seq = st.next_seq;
            st.next_seq += 1;
            st.last_seq = Some(seq);
            st.open[buf] = Some(OpenPage {
                page,
                seq,
                image: vec![0u8; self.layout.page_size],
                next_chunk: 0,
                deadline: self.dev.now() + nanos(self.cfg.pack_timeout),
            });
        }
        let open = st.open[buf].as_mut().expect("open page");
        let off = open.next_chunk as usize * self.layout.chunk_size;
        open.image[off..off + bytes.len()].copy_from_slice(&bytes);
        let loc = FlashLocation::new(open.page, open.next_chunk)?;
        let seq = open.seq;
        open.next_chunk += chunks;
        let full = open.next_chunk == CHUNKS_PER_PAGE;
        match class {
            AppendClass::User => {
                st.stats.user_appends += 1;
                st.stats.user_chunks += chunks as u64;
            }
            AppendClass::Relocation => {
                st.stats.relocation_appends += 1;
                st.stats.relocation_chunks += chunks as u64;
            }
        }
        if full {
            self.flush_locked(&mut st, buf)?;
        }
        Ok(Appended { loc, seq })
    }

    fn allocate_page(&self, st: &mut LogState, class: AppendClass) -> Result<u32> {
        let ppb = self.dev.pages_per_block();
        let buf = class.buffer();
        let width = st.heads[buf].len();
        let lane = st.lane[buf];
        st.lane[buf] = (lane + 1) % width;
        if let Some((block, next)) = st.heads[buf][lane] {
            if next < ppb {
                st.heads[buf][lane] = Some((block, next + 1));
                return Ok(block * ppb + next);
            }
        }
        let floor = match class {
            AppendClass::User => self.reserve_blocks,
            AppendClass::Relocation => 0,
        };
        if st.free.len() <= floor {
            return Err(Error::StoreFull);
        }
        // Prefer a block on this lane's channel.
        let pos = st.free.iter().position(|&b| b as usize % width == lane).unwrap_or(0);
        let block = st.free.remove(pos).expect("free block");
        if let Some((old, _)) = st.heads[buf][lane].replace((block, 1)) {
            st.sealed.push_back(old);
        }
        Ok(block * ppb)
    }

    fn flush_locked(&self, st: &mut LogState, buf: usize) -> Result<()> {
        let Some(open) = st.open[buf].take() else {
            return Ok(());
        };
        self.dev.write_page(open.page, &open.image)?;
        let done = self.dev.now();
        st.stats.page_writes += 1;
        st.stats.padded_chunks += (CHUNKS_PER_PAGE - open.next_chunk) as u64;
        st.flush_times.insert(open.seq, done);
        if st.flush_times.len() > FLUSH_HISTORY {
            st.flush_times.pop_first();
        }
        self.flushed.notify_all();
        Ok(())
    }

    /// Programs the open pages, if any.
    pub fn flush(&self) -> Result<()> {
        let mut st = self.state.lock();
        for buf in 0..st.open.len() {
            self.flush_locked(&mut st, buf)?;
        }
        Ok(())
    }

    /// Programs the open pages whose packing deadline has passed.
    pub fn flush_expired(&self) -> Result<bool> {
        let mut st = self.state.lock();
        let now = self.dev.now();
        let mut any = false;
        for buf in 0..st.open.len() {
            if st.open[buf].as_ref().is_some_and(|o| now >= o.deadline) {
                self.flush_locked(&mut st, buf)?;
                any = true;
            }
        }
        Ok(any)
    }

    pub fn pending_deadline(&self) -> Option<Nanos> {
        self.state.lock().open.iter().flatten().map(|o| o.deadline).min()
    }

    fn is_durable(st: &LogState, seq: u64) -> bool {
        seq < st.next_seq && st.open.iter().flatten().all(|o| o.seq != seq)
    }

    /// Completion time of the write that made page `seq` durable, if known.
    pub fn flush_time(&self, seq: u64) -> Option<Nanos> {
        let st = self.state.lock();
        if !Self::is_durable(&st, seq) {
            return None;
        }
        match st.flush_times.get(&seq) {
            Some(&t) => Some(t),
            // Evicted from the history: long since durable.
            None => st.flush_times.first_key_value().map(|(_, &t)| t),
        }
    }

    /// Blocks until page `seq` is durable, programming it at its deadline
    /// if nobody else has.
    pub fn wait_durable(&self, seq: u64) -> Result<()> {
        let mut st = self.state.lock();
        loop {
            if Self::is_durable(&st, seq) {
                return Ok(());
            }
            let Some((buf, deadline)) =
                st.open.iter().enumerate().find_map(|(i, o)| o.as_ref().filter(|o| o.seq == seq).map(|o| (i, o.deadline)))
            else {
                // Page is being written by another thread.
                self.flushed.wait_for(&mut st, Duration::from_micros(50));
                continue;
            };
            let now = self.dev.now();
            if now >= deadline || self.dev.time_mode() == TimeMode::Virtual {
                return self.flush_locked(&mut st, buf);
            }
            self.flushed.wait_for(&mut st, Duration::from_nanos(deadline - now));
        }
    }

    /// Enters a read epoch.
    pub fn pin(&self) -> ReadGuard<'_, D> {
        let mut e = self.epochs.lock();
        let epoch = e.global;
        *e.active.entry(epoch).or_insert(0) += 1;
        ReadGuard { log: self, epoch }
    }

    /// Reads a page image, from the open buffer when it has not been
    /// programmed yet. The caller must hold a [`ReadGuard`].
    pub fn read_page_pinned(&self, page: u32) -> Result<PageBuf> {
        {
            let st = self.state.lock();
            if let Some(open) = st.open.iter().flatten().find(|o| o.page == page) {
                return Ok(open.image.clone().into());
            }
        }
        self.dev.read_page(page)
    }

    pub fn read_record(&self, loc: FlashLocation) -> Result<KvRecord> {
        let _guard = self.pin();
        let page = self.read_page_pinned(loc.page())?;
        decode_record(&page, loc.chunk() as usize, self.layout)
    }

    /// Every record stored in a block, with its location.
    pub fn read_block_records(&self, block: u32) -> Result<Vec<(FlashLocation, KvRecord)>> {
        let _guard = self.pin();
        let ppb = self.dev.pages_per_block();
        let mut out = Vec::new();
        for page in block * ppb..(block + 1) * ppb {
            let image = self.read_page_pinned(page)?;
            for (chunk, rec) in decode_page(&image, self.layout) {
                out.push((FlashLocation::new(page, chunk as u32)?, rec));
            }
        }
        Ok(out)
    }

    /// Returns a block to the free pool once readers that may still reach
    /// it have drained. The caller must already have moved every record it
    /// wants to keep.
    pub fn reclaim_block(&self, block: u32) -> Result<()> {
        {
            let mut st = self.state.lock();
            let pos = st.sealed.iter().position(|&b| b == block).ok_or_else(|| {
                Error::Address(format!("block {block} is not a sealed log block"))
            })?;
            st.sealed.remove(pos);
        }
        let safe = {
            let mut e = self.epochs.lock();
            let epoch = e.global;
            e.global += 1;
            e.retired.push((block, epoch));
            let safe = e.drain_safe();
            if !safe.contains(&block) {
                self.state.lock().stats.deferred_erases += 1;
            }
            safe
        };
        for b in safe {
            self.erase_and_free(b)?;
        }
        Ok(())
    }

    fn erase_and_free(&self, block: u32) -> Result<()> {
        self.dev.erase_block(block)?;
        let mut st = self.state.lock();
        st.free.push_back(block);
        st.stats.blocks_reclaimed += 1;
        Ok(())
    }

    /// Blocks retired but not yet erased.
    pub fn retired_blocks(&self) -> Vec<u32> {
        self.epochs.lock().retired.iter().map(|&(b, _)| b).collect()
    }

    pub fn is_free(&self, block: u32) -> bool {
        self.state.lock().free.contains(&block)
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.state.lock().last_seq
    }
}

/// The subset of log control a benchmark driver needs, object safe.
pub trait LogControl: Send + Sync {
    fn flush(&self) -> Result<()>;
    fn flush_expired(&self) -> Result<bool>;
    fn pending_deadline(&self) -> Option<Nanos>;
    fn flush_time(&self, seq: u64) -> Option<Nanos>;
    fn wait_durable(&self, seq: u64) -> Result<()>;
    fn stats(&self) -> LogStats;
    fn free_blocks(&self) -> usize;
}

impl<D: PageDevice> LogControl for Log<D> {
    fn flush(&self) -> Result<()> {
        Log::flush(self)
    }
    fn flush_expired(&self) -> Result<bool> {
        Log::flush_expired(self)
    }
    fn pending_deadline(&self) -> Option<Nanos> {
        Log::pending_deadline(self)
    }
    fn flush_time(&self, seq: u64) -> Option<Nanos> {
        Log::flush_time(self, seq)
    }
    fn wait_durable(&self, seq: u64) -> Result<()> {
        Log::wait_durable(self, seq)
    }
    fn stats(&self) -> LogStats {
        Log::stats(self)
    }
    fn free_blocks(&self) -> usize {
        Log::free_blocks(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock;
    use crate::flashsim::{DeviceConfig, FlashDevice};
    use crate::ftl::record::Key;

    fn log_with(blocks: u32) -> Log<FlashDevice> {
        let dev = FlashDevice::new(DeviceConfig { block_count: blocks, ..Default::default() })
            .unwrap();
        // One head block keeps block contents predictable.
        Log::new(Arc::new(dev), LogConfig { stripe_width: Some(1), ..Default::default() }).unwrap()
    }

    fn rec(id: u64, ts: u64) -> KvRecord {
        KvRecord::new(Key::from_u64(id), vec![id as u8; 474], ts)
    }

    #[test]
    fn eight_full_chunk_appends_share_a_page() {
        let log = log_with(16);
        let locs: Vec<_> =
            (0..8).map(|i| log.append(&rec(i, 1), AppendClass::User).unwrap().loc).collect();
        assert!(locs.iter().all(|l| l.page() == locs[0].page()));
        assert_eq!(locs.iter().map(|l| l.chunk()).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        // The eighth record filled the page, so it was programmed right away.
        assert_eq!(log.device().stats().writes, 1);
        assert_eq!(log.pending_deadline(), None);
    }

    #[test]
    fn single_record_flushes_after_pack_timeout() {
        clock::set_now(0);
        let log = log_with(16);
        let a = log.append(&rec(1, 1), AppendClass::User).unwrap();
        assert_eq!(log.pending_deadline(), Some(1_000_000));
        clock::set_now(999_999);
        assert!(!log.flush_expired().unwrap());
        clock::set_now(1_000_000);
        assert!(log.flush_expired().unwrap());
        assert_eq!(log.device().stats().writes, 1);
        assert_eq!(log.flush_time(a.seq), Some(1_100_000));
        assert_eq!(log.stats().padded_chunks, 7);
    }

    #[test]
    fn empty_flush_writes_nothing() {
        let log = log_with(16);
        log.flush().unwrap();
        assert_eq!(log.device().stats().writes, 0);
        log.append(&rec(1, 1), AppendClass::User).unwrap();
        log.flush().unwrap();
        log.flush().unwrap();
        assert_eq!(log.device().stats().writes, 1);
    }

    #[test]
    fn read_before_and_after_flush() {
        let log = log_with(16);
        let r = rec(3, 7);
        let a = log.append(&r, AppendClass::User).unwrap();
        let buffered = log.read_record(a.loc).unwrap();
        assert_eq!(log.device().stats().reads, 0);
        log.flush().unwrap();
        let flushed = log.read_record(a.loc).unwrap();
        assert_eq!(buffered, r);
        assert_eq!(flushed, buffered);
    }

    #[test]
    fn records_that_do_not_fit_start_a_new_page() {
        let log = log_with(16);
        let small = log.append(&rec(1, 1), AppendClass::User).unwrap();
        let big = KvRecord::new(Key::from_u64(2), vec![0; 4000], 1);
        let b = log.append(&big, AppendClass::User).unwrap();
        assert_ne!(small.loc.page(), b.loc.page());
        assert_eq!(b.loc.chunk(), 0);
        assert_eq!(log.read_record(b.loc).unwrap(), big);
    }

    #[test]
    fn user_appends_stop_at_the_reserve() {
        // 16 blocks: reserve is 2 blocks; 14 are usable by clients.
        let log = log_with(16);
        let per_block = 32 * 8;
        let mut n = 0;
        let err = loop {
            match log.append(&rec(n, n), AppendClass::User) {
                Ok(_) => n += 1,
                Err(e) => break e,
            }
        };
        assert_eq!(err, Error::StoreFull);
        assert_eq!(n, 14 * per_block);
        assert_eq!(log.free_blocks(), log.reserve_blocks());
        // Relocation may still use the reserve.
        log.append(&rec(0, 0), AppendClass::Relocation).unwrap();
        assert_eq!(log.free_blocks(), log.reserve_blocks() - 1);
    }

    #[test]
    fn oldest_written_block_is_first_victim() {
        let log = log_with(16);
        for i in 0..(3 * 256) {
            log.append(&rec(i, i), AppendClass::User).unwrap();
        }
        log.append(&rec(0, 0), AppendClass::User).unwrap();
        assert_eq!(log.victim_candidates(), vec![0, 1, 2]);
    }

    #[test]
    fn reclaimed_blocks_are_reused() {
        let log = log_with(16);
        let mut n = 0;
        while log.append(&rec(n, n), AppendClass::User).is_ok() {
            n += 1;
        }
        log.reclaim_block(0).unwrap();
        assert_eq!(log.device().block_state(crate::flashsim::BlockId(0)).unwrap().erase_count, 1);
        // Free blocks are handed out in FIFO order, so block 0 is third in line.
        for _ in 0..3 * 256 {
            log.append(&rec(n, n), AppendClass::Relocation).unwrap();
            n += 1;
        }
        assert!(!log.is_free(0));
        let loc = FlashLocation::new(0, 0).unwrap();
        log.flush().unwrap();
        assert_eq!(log.read_record(loc).unwrap().key, Key::from_u64(n - 256));
        assert!(log.reclaim_block(99).is_err());
    }

    #[test]
    fn reclaim_waits_for_pinned_readers() {
        let log = log_with(16);
        for i in 0..(2 * 256) {
            log.append(&rec(i, i), AppendClass::User).unwrap();
        }
        log.append(&rec(0, 0), AppendClass::User).unwrap();
        let guard = log.pin();
        log.reclaim_block(0).unwrap();
        assert_eq!(log.retired_blocks(), vec![0]);
        assert!(!log.is_free(0));
        assert_eq!(log.device().stats().erases, 0);
        // A reader arriving after the reclaim does not hold it back further.
        let late = log.pin();
        drop(guard);
        assert!(log.is_free(0));
        assert_eq!(log.device().stats().erases, 1);
        drop(late);
        assert_eq!(log.stats().deferred_erases, 1);
    }

    #[test]
    fn reclaim_across_threads_is_linearized() {
        let log = Arc::new(log_with(16));
        for i in 0..(2 * 256 + 1) {
            log.append(&rec(i, i), AppendClass::User).unwrap();
        }
        let guard = log.pin();
        let l2 = Arc::clone(&log);
        std::thread::spawn(move || l2.reclaim_block(0).unwrap()).join().unwrap();
        // Still readable while pinned.
        let loc = FlashLocation::new(0, 0).unwrap();
        assert_eq!(log.read_record(loc).unwrap().key, Key::from_u64(0));
        drop(guard);
        assert!(log.read_record(loc).is_err());
    }

    #[test]
    fn consecutive_pages_rotate_over_head_blocks() {
        let dev = FlashDevice::new(DeviceConfig { block_count: 64, ..Default::default() }).unwrap();
        let log = Log::new(Arc::new(dev), LogConfig::default()).unwrap();
        let mut blocks = Vec::new();
        for i in 0..8 * 8 {
            let a = log.append(&rec(i, i), AppendClass::User).unwrap();
            if a.loc.chunk() == 0 {
                blocks.push(log.block_of(a.loc));
            }
        }
        assert_eq!(blocks, (0..8).collect::<Vec<u32>>());
        let mut heads = log.head_blocks();
        heads.sort();
        assert_eq!(heads, (0..8).collect::<Vec<u32>>());
        // Eight full blocks later the lanes seal in turn.
        for i in 0..8 * 32 * 8 {
            log.append(&rec(i, i), AppendClass::User).unwrap();
        }
        assert_eq!(log.victim_candidates(), (0..8).collect::<Vec<u32>>());
    }

    #[test]
    fn packing_density_under_saturation() {
        let log = log_with(64);
        let appends = 1000;
        for i in 0..appends {
            log.append(&rec(i, i), AppendClass::User).unwrap();
        }
        let writes = log.device().stats().writes as i64;
        assert!((writes - appends as i64 / 8).abs() <= 1);
    }

    #[test]
    fn page_sequence_numbers_increase_in_log_order() {
        let log = log_with(16);
        let mut last: Option<(u64, u32)> = None;
        for i in 0..2000 {
            let a = log.append(&rec(i, i), AppendClass::User).unwrap();
            match last {
                Some((seq, _)) if seq == a.seq => {}
                Some((seq, page)) => {
                    assert!(a.seq > seq);
                    assert!(a.loc.page() > page);
                    last = Some((a.seq, a.loc.page()));
                }
                None => last = Some((a.seq, a.loc.page())),
            }
        }
    }

    #[test]
    fn durable_wait_in_virtual_mode_flushes_immediately() {
        let log = log_with(16);
        let a = log.append(&rec(1, 1), AppendClass::User).unwrap();
        log.wait_durable(a.seq).unwrap();
        assert!(log.flush_time(a.seq).is_some());
    }

    #[test]
    fn durable_wait_in_realtime_mode_honours_deadline() {
        let dev = FlashDevice::new(DeviceConfig {
            block_count: 16,
            time_mode: TimeMode::Realtime,
            ..Default::default()
        })
        .unwrap();
        let log = Log::new(Arc::new(dev), LogConfig::default()).unwrap();
        let start = std::time::Instant::now();
        let a = log.append(&rec(1, 1), AppendClass::User).unwrap();
        log.wait_durable(a.seq).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(1));
        assert_eq!(log.device().stats().writes, 1);
    }
}
