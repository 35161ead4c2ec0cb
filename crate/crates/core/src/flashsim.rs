//! In-process NAND flash emulator.
//!
//! The device exposes page reads and writes and block erases. It enforces
//! erase-before-write and the sequential-program rule inside a block, and
//! models timing with one serial queue per channel (`channel = block mod
//! channel_count`) behind a global admission bound of `queue_depth`
//! outstanding operations. In virtual time each channel keeps a calendar of
//! busy intervals and an operation takes the earliest free slot at or after
//! its issue time, so a caller whose clock runs ahead does not hold up
//! callers that are behind it. Content lives in memory; an erased page reads as
//! all `0xFF`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use crate::clock::{self, nanos, Clock, Nanos, TimeMode};
use crate::error::{Error, Result};

/// Immutable page contents. Reads hand out shared buffers instead of copies.
pub type PageBuf = Arc<[u8]>;

/// Largest number of pages a device may expose: page ids must fit in 29 bits
/// and stay clear of the two reserved link words.
pub const MAX_PAGES: u64 = (1 << 29) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

/// What happens to a request that arrives while `queue_depth` operations are
/// already outstanding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Admission {
    /// The caller waits for a slot.
    #[default]
    Block,
    /// The request fails with [`Error::QueueFull`] and is counted in
    /// `rejected_ops`.
    Reject,
}

#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub page_size_bytes: usize,
    pub pages_per_block: u32,
    pub block_count: u32,
    pub read_latency: Duration,
    pub write_latency: Duration,
    pub erase_latency: Duration,
    pub queue_depth: usize,
    pub channel_count: u32,
    pub time_mode: TimeMode,
    pub admission: Admission,
    /// Controller time added to every command before the flash operation.
    /// Zero for open-channel access; conventional SSDs running their own
    /// translation layer in firmware pay it per command.
    pub command_overhead: Duration,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            page_size_bytes: 4096,
            pages_per_block: 32,
            block_count: 2400,
            read_latency: Duration::from_micros(50),
            write_latency: Duration::from_micros(100),
            erase_latency: Duration::from_millis(1),
            queue_depth: 128,
            channel_count: 8,
            time_mode: TimeMode::Virtual,
            admission: Admission::Block,
            command_overhead: Duration::ZERO,
        }
    }
}

impl DeviceConfig {
    pub fn total_pages(&self) -> u64 {
        self.pages_per_block as u64 * self.block_count as u64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("page_size_bytes", self.page_size_bytes as u64),
            ("pages_per_block", self.pages_per_block as u64),
            ("block_count", self.block_count as u64),
            ("queue_depth", self.queue_depth as u64),
            ("channel_count", self.channel_count as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.total_pages() > MAX_PAGES {
            return Err(Error::Config(format!(
                "{} pages exceed the 29-bit address space",
                self.total_pages()
            )));
        }
        Ok(())
    }
}

/// Snapshot of one block's program/erase state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockState {
    /// Index of the next page that may be programmed.
    pub erased_through: u32,
    pub page_written: Vec<bool>,
    pub erase_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeviceStats {
    pub reads: u64,
    pub writes: u64,
    pub erases: u64,
    pub simulated_time: Nanos,
    pub rejected_ops: u64,
}

struct BlockData {
    next_page: u32,
    pages: Vec<Option<PageBuf>>,
    erase_count: u64,
}

/// Busy intervals older than this before a caller's clock are forgotten.
const CALENDAR_HORIZON: Nanos = 100_000_000;

/// Busy intervals of one channel, keyed by start, merged when they touch.
#[derive(Default)]
struct Calendar {
    busy: BTreeMap<Nanos, Nanos>,
}

impl Calendar {
    /// Books `len` at the earliest free time at or after `t`; returns the start.
    fn book(&mut self, t: Nanos, len: Nanos) -> Nanos {
        let mut start = t;
        if let Some((_, &end)) = self.busy.range(..=start).next_back() {
            start = start.max(end);
        }
        while let Some((&s, &e)) = self.busy.range(start..).next() {
            if s >= start + len {
                break;
            }
            start = e;
        }
        let mut lo = start;
        let mut hi = start + len;
        if let Some((&s, &e)) = self.busy.range(..=lo).next_back() {
            if e == lo {
                lo = s;
            }
        }
        if let Some(e) = self.busy.get(&hi).copied() {
            self.busy.remove(&hi);
            hi = e;
        }
        self.busy.insert(lo, hi);
        if self.busy.len() > 4096 {
            let floor = t.saturating_sub(CALENDAR_HORIZON);
            self.busy.retain(|_, e| *e >= floor);
        }
        start
    }
}

struct VirtualSched {
    channels: Vec<Calendar>,
    /// Outstanding operations by issue time, with their completion times.
    by_issue: BTreeMap<(Nanos, u64), Nanos>,
    by_end: BinaryHeap<Reverse<(Nanos, Nanos, u64)>>,
    next_id: u64,
}

impl VirtualSched {
    fn retire_until(&mut self, t: Nanos) {
        while let Some(&Reverse((end, issue, id))) = self.by_end.peek() {
            if end > t {
                break;
            }
            self.by_end.pop();
            self.by_issue.remove(&(issue, id));
        }
    }

    /// Operations issued by `t` and still running at `t`, up to `cap`, with
    /// the earliest completion among them.
    fn outstanding_at(&self, t: Nanos, cap: usize) -> (usize, Nanos) {
        let mut n = 0;
        let mut first_end = Nanos::MAX;
        for (_, &end) in self.by_issue.range(..=(t, u64::MAX)) {
            if end > t {
                n += 1;
                first_end = first_end.min(end);
                if n >= cap {
                    break;
                }
            }
        }
        (n, first_end)
    }
}

struct RealSched {
    channels: Vec<Mutex<()>>,
    outstanding: Mutex<usize>,
    slot_freed: Condvar,
}

enum Timing {
    Virtual(Mutex<VirtualSched>),
    Realtime(RealSched),
}

pub struct FlashDevice {
    cfg: DeviceConfig,
    clock: Clock,
    blocks: Vec<Mutex<BlockData>>,
    timing: Timing,
    erased: PageBuf,
    reads: AtomicU64,
    writes: AtomicU64,
    erases: AtomicU64,
    rejected: AtomicU64,
    horizon: AtomicU64,
}

impl std::fmt::Debug for FlashDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlashDevice").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl FlashDevice {
    pub fn new(cfg: DeviceConfig) -> Result<Self> {
        cfg.validate()?;
        let ppb = cfg.pages_per_block as usize;
        let blocks = (0..cfg.block_count)
            .map(|_| Mutex::new(BlockData { next_page: 0, pages: vec![None; ppb], erase_count: 0 }))
            .collect();
        let timing = match cfg.time_mode {
            TimeMode::Virtual => Timing::Virtual(Mutex::new(VirtualSched {
                channels: (0..cfg.channel_count).map(|_| Calendar::default()).collect(),
                by_issue: BTreeMap::new(),
                by_end: BinaryHeap::new(),
                next_id: 0,
            })),
            TimeMode::Realtime => Timing::Realtime(RealSched {
                channels: (0..cfg.channel_count).map(|_| Mutex::new(())).collect(),
                outstanding: Mutex::new(0),
                slot_freed: Condvar::new(),
            }),
        };
        let erased: PageBuf = vec![0xFF; cfg.page_size_bytes].into();
        Ok(FlashDevice {
            clock: Clock::new(cfg.time_mode),
            cfg,
            blocks,
            timing,
            erased,
            reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
            erases: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            horizon: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn total_pages(&self) -> u32 {
        self.cfg.total_pages() as u32
    }

    pub fn block_of(&self, page: PageId) -> BlockId {
        BlockId(page.0 / self.cfg.pages_per_block)
    }

    pub fn index_in_block(&self, page: PageId) -> u32 {
        page.0 % self.cfg.pages_per_block
    }

    pub fn channel_of(&self, block: BlockId) -> u32 {
        block.0 % self.cfg.channel_count
    }

    pub fn now(&self) -> Nanos {
        self.clock.now()
    }

    pub fn time_mode(&self) -> TimeMode {
        self.cfg.time_mode
    }

    fn check_page(&self, page: PageId) -> Result<()> {
        if page.0 as u64 >= self.cfg.total_pages() {
            return Err(Error::Address(format!("page {} of {}", page.0, self.cfg.total_pages())));
        }
        Ok(())
    }

    fn check_block(&self, block: BlockId) -> Result<()> {
        if block.0 >= self.cfg.block_count {
            return Err(Error::Address(format!("block {} of {}", block.0, self.cfg.block_count)));
        }
        Ok(())
    }

    pub fn read_page(&self, page: PageId) -> Result<PageBuf> {
        self.check_page(page)?;
        let block = self.block_of(page);
        let data = {
            let b = self.blocks[block.0 as usize].lock();
            b.pages[self.index_in_block(page) as usize].clone()
        };
        self.charge(block, self.cfg.read_latency)?;
        self.reads.fetch_add(1, Ordering::Relaxed);
        Ok(data.unwrap_or_else(|| self.erased.clone()))
    }

    pub fn write_page(&self, page: PageId, data: &[u8]) -> Result<()> {
        self.check_page(page)?;
        if data.len() != self.cfg.page_size_bytes {
            return Err(Error::DataLength { expected: self.cfg.page_size_bytes, got: data.len() });
        }
        let block = self.block_of(page);
        let idx = self.index_in_block(page);
        let mut b = self.blocks[block.0 as usize].lock();
        if b.pages[idx as usize].is_some() || idx < b.next_page {
            return Err(Error::WriteViolation { page: page.0 });
        }
        if idx != b.next_page {
            return Err(Error::Sequence { block: block.0, expected: b.next_page, got: idx });
        }
        self.charge(block, self.cfg.write_latency)?;
        b.pages[idx as usize] = Some(data.into());
        b.next_page = idx + 1;
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn erase_block(&self, block: BlockId) -> Result<()> {
        self.check_block(block)?;
        let mut b = self.blocks[block.0 as usize].lock();
        self.charge(block, self.cfg.erase_latency)?;
        b.pages.iter_mut().for_each(|p| *p = None);
        b.next_page = 0;
        b.erase_count += 1;
        self.erases.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn block_state(&self, block: BlockId) -> Result<BlockState> {
        self.check_block(block)?;
        let b = self.blocks[block.0 as usize].lock();
        Ok(BlockState {
            erased_through: b.next_page,
            page_written: b.pages.iter().map(Option::is_some).collect(),
            erase_count: b.erase_count,
        })
    }

    pub fn stats(&self) -> DeviceStats {
        DeviceStats {
            reads: self.reads.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
            erases: self.erases.load(Ordering::Relaxed),
            simulated_time: self.horizon.load(Ordering::Relaxed),
            rejected_ops: self.rejected.load(Ordering::Relaxed),
        }
    }

    /// Accounts one operation of `latency` on `block`'s channel.
    fn charge(&self, block: BlockId, latency: Duration) -> Result<()> {
        let service = nanos(latency + self.cfg.command_overhead);
        let channel = self.channel_of(block) as usize;
        match &self.timing {
            Timing::Virtual(sched) => {
                let mut s = sched.lock();
                let mut t = clock::now();
                let qd = self.cfg.queue_depth;
                s.retire_until(t);
                loop {
                    let (n, first_end) = s.outstanding_at(t, qd);
                    if n < qd {
                        break;
                    }
                    if self.cfg.admission == Admission::Reject {
                        self.rejected.fetch_add(1, Ordering::Relaxed);
                        return Err(Error::QueueFull);
                    }
                    t = first_end;
                }
                let start = s.channels[channel].book(t, service);
                let end = start + service;
                let id = s.next_id;
                s.next_id += 1;
                s.by_issue.insert((t, id), end);
                s.by_end.push(Reverse((end, t, id)));
                clock::set_now(end);
                self.horizon.fetch_max(end, Ordering::Relaxed);
            }
            Timing::Realtime(rt) => {
                {
                    let mut n = rt.outstanding.lock();
                    if *n >= self.cfg.queue_depth {
                        if self.cfg.admission == Admission::Reject {
                            self.rejected.fetch_add(1, Ordering::Relaxed);
                            return Err(Error::QueueFull);
                        }
                        while *n >= self.cfg.queue_depth {
                            rt.slot_freed.wait(&mut n);
                        }
                    }
                    *n += 1;
                }
                {
                    let _busy = rt.channels[channel].lock();
                    std::thread::sleep(Duration::from_nanos(service));
                }
                *rt.outstanding.lock() -= 1;
                rt.slot_freed.notify_one();
                self.horizon.fetch_max(self.clock.now(), Ordering::Relaxed);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(blocks: u32) -> FlashDevice {
        FlashDevice::new(DeviceConfig { block_count: blocks, ..Default::default() }).unwrap()
    }

    fn page_of(dev: &FlashDevice, byte: u8) -> Vec<u8> {
        vec![byte; dev.config().page_size_bytes]
    }

    #[test]
    fn read_your_write() {
        clock::set_now(0);
        let dev = small(4);
        let d = page_of(&dev, 0xAB);
        for p in 0..=5 {
            dev.write_page(PageId(p), &if p == 5 { d.clone() } else { page_of(&dev, 0) }).unwrap();
        }
        assert_eq!(&*dev.read_page(PageId(5)).unwrap(), &d[..]);
    }

    #[test]
    fn erased_page_reads_all_ones() {
        let dev = small(2);
        assert!(dev.read_page(PageId(3)).unwrap().iter().all(|&b| b == 0xFF));
        dev.write_page(PageId(0), &page_of(&dev, 1)).unwrap();
        dev.erase_block(BlockId(0)).unwrap();
        assert!(dev.read_page(PageId(0)).unwrap().iter().all(|&b| b == 0xFF));
    }

    #[test]
    fn out_of_range_is_an_address_error() {
        let dev = small(2);
        let total = dev.total_pages();
        assert!(matches!(dev.read_page(PageId(total)), Err(Error::Address(_))));
        assert!(matches!(dev.erase_block(BlockId(2)), Err(Error::Address(_))));
    }

    #[test]
    fn double_write_is_rejected() {
        let dev = small(2);
        dev.erase_block(BlockId(1)).unwrap();
        dev.write_page(PageId(32), &page_of(&dev, 7)).unwrap();
        assert_eq!(
            dev.write_page(PageId(32), &page_of(&dev, 8)),
            Err(Error::WriteViolation { page: 32 })
        );
    }

    #[test]
    fn skipping_a_page_is_a_sequence_error() {
        let dev = small(1);
        dev.write_page(PageId(0), &page_of(&dev, 0)).unwrap();
        assert_eq!(
            dev.write_page(PageId(2), &page_of(&dev, 0)),
            Err(Error::Sequence { block: 0, expected: 1, got: 2 })
        );
    }

    #[test]
    fn wrong_length_is_rejected() {
        let dev = small(1);
        assert!(matches!(dev.write_page(PageId(0), &[0u8; 10]), Err(Error::DataLength { .. })));
    }

    #[test]
    fn erase_count_increments_once_per_call() {
        let dev = small(1);
        for i in 1..=3 {
            dev.erase_block(BlockId(0)).unwrap();
            assert_eq!(dev.block_state(BlockId(0)).unwrap().erase_count, i);
        }
        assert_eq!(dev.stats().erases, 3);
    }

    #[test]
    fn fresh_device_has_zero_counters() {
        assert_eq!(small(1).stats(), DeviceStats::default());
    }

    #[test]
    fn ten_writes_are_counted() {
        let dev = small(1);
        for p in 0..10 {
            dev.write_page(PageId(p), &page_of(&dev, 0)).unwrap();
        }
        assert_eq!(dev.stats().writes, 10);
    }

    #[test]
    fn one_idle_write_costs_the_write_latency() {
        clock::set_now(0);
        let dev = small(1);
        dev.write_page(PageId(0), &page_of(&dev, 0)).unwrap();
        assert!(dev.stats().simulated_time >= 100_000);
        assert_eq!(clock::now(), 100_000);
    }

    #[test]
    fn same_channel_writes_serialize_and_channels_overlap() {
        let dev = small(16);
        // Blocks 0 and 8 share channel 0; blocks 0..8 are all distinct channels.
        for i in 0..4 {
            clock::set_now(0);
            dev.write_page(PageId(i), &page_of(&dev, 0)).unwrap();
        }
        assert_eq!(clock::now(), 4 * 100_000);
        let dev = small(16);
        for b in 0..8 {
            clock::set_now(0);
            dev.write_page(PageId(b * 32), &page_of(&dev, 0)).unwrap();
            assert_eq!(clock::now(), 100_000);
        }
        assert_eq!(dev.stats().simulated_time, 100_000);
    }

    #[test]
    fn admission_bound_delays_or_rejects() {
        let cfg = DeviceConfig { block_count: 8, queue_depth: 2, ..Default::default() };
        let dev = FlashDevice::new(cfg.clone()).unwrap();
        for b in 0..3 {
            clock::set_now(0);
            dev.read_page(PageId(b * 32)).unwrap();
        }
        // The third request waited for the first slot to free up.
        assert_eq!(clock::now(), 100_000);

        let dev = FlashDevice::new(DeviceConfig { admission: Admission::Reject, ..cfg }).unwrap();
        for b in 0..2 {
            clock::set_now(0);
            dev.read_page(PageId(b * 32)).unwrap();
        }
        clock::set_now(0);
        assert_eq!(dev.read_page(PageId(64)), Err(Error::QueueFull));
        assert_eq!(dev.stats().rejected_ops, 1);
        assert_eq!(dev.stats().reads, 2);
    }

    #[test]
    fn command_overhead_adds_to_service_time() {
        clock::set_now(0);
        let dev = FlashDevice::new(DeviceConfig {
            block_count: 1,
            command_overhead: Duration::from_micros(10),
            ..Default::default()
        })
        .unwrap();
        dev.read_page(PageId(0)).unwrap();
        assert_eq!(clock::now(), 60_000);
    }

    #[test]
    fn config_validation() {
        assert!(DeviceConfig { channel_count: 0, ..Default::default() }.validate().is_err());
        assert!(DeviceConfig { block_count: 1 << 25, ..Default::default() }.validate().is_err());
        assert!(DeviceConfig::default().validate().is_ok());
    }

    #[test]
    fn realtime_mode_sleeps_for_latency() {
        let dev = FlashDevice::new(DeviceConfig {
            block_count: 1,
            time_mode: TimeMode::Realtime,
            ..Default::default()
        })
        .unwrap();
        let start = std::time::Instant::now();
        dev.write_page(PageId(0), &page_of(&dev, 0)).unwrap();
        dev.read_page(PageId(0)).unwrap();
        assert!(start.elapsed() >= Duration::from_micros(150));
        assert!(dev.stats().simulated_time >= 150_000);
    }
}
