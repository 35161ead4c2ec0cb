//! The stacked baseline: a conventional page-mapped FTL exporting a logical
//! block device, with a separate multi-version log running on top of it.
//!
//! The device keeps its own logical-to-physical map, over-provisions a share
//! of its blocks and collects greedily, unaware of the host log above. The
//! host layer is the in-memory-index store, writing into logical segments of
//! `pages_per_block` pages and trimming a segment when it reclaims it.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;

use crate::clock::{Nanos, TimeMode};
use crate::error::{Error, Result};
use crate::flashsim::{BlockId, DeviceConfig, DeviceStats, FlashDevice, PageBuf, PageId};
use crate::ftl::{Key, LogControl, PageDevice, Timestamp};
use crate::semel::{SemelConfig, SemelStore};
use crate::store::{MemoryUsage, PutReceipt, StoreStats, Versioned, VersionedStore, Watermark};

const UNMAPPED: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct LogicalDeviceConfig {
    pub device: DeviceConfig,
    /// Share of physical blocks withheld from the exported capacity.
    pub over_provisioning: f64,
    /// Device collection runs when free blocks drop below this.
    pub gc_threshold_blocks: usize,
}

impl LogicalDeviceConfig {
    /// The firmware translation layer costs controller time on every
    /// command; the raw device settings are otherwise unchanged.
    pub fn conventional(mut device: DeviceConfig, command_overhead: Duration) -> Self {
        device.command_overhead = command_overhead;
        LogicalDeviceConfig { device, over_provisioning: 0.10, gc_threshold_blocks: 3 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogicalStats {
    pub host_writes: u64,
    pub host_reads: u64,
    pub trims: u64,
    pub gc_runs: u64,
    pub gc_copies: u64,
}

impl LogicalStats {
    /// Physical programs per logical write at the device level.
    pub fn write_amplification(&self) -> f64 {
        if self.host_writes == 0 {
            return 0.0;
        }
        (self.host_writes + self.gc_copies) as f64 / self.host_writes as f64
    }
}

struct MapState {
    l2p: Vec<u32>,
    p2l: Vec<u32>,
    valid: Vec<u32>,
    free: VecDeque<u32>,
    /// Blocks fully written and eligible as victims.
    sealed: Vec<u32>,
    /// Open blocks, written in turn so consecutive pages use different channels.
    active: Vec<Option<(u32, u32)>>,
    lane: usize,
    stats: LogicalStats,
}

/// A block device backed by a page-mapped translation layer.
pub struct LogicalDevice {
    flash: FlashDevice,
    cfg: LogicalDeviceConfig,
    logical_pages: u32,
    state: RwLock<MapState>,
    host_reads: AtomicU64,
}

impl LogicalDevice {
    pub fn new(cfg: LogicalDeviceConfig) -> Result<Self> {
        let flash = FlashDevice::new(cfg.device.clone())?;
        let ppb = cfg.device.pages_per_block;
        let blocks = cfg.device.block_count;
        let exported_blocks = (blocks as f64 * (1.0 - cfg.over_provisioning)).floor() as u32;
        if exported_blocks == 0 || blocks - exported_blocks < cfg.gc_threshold_blocks as u32 + 1 {
            return Err(Error::Config("over-provisioning too small for device collection".into()));
        }
        let physical = flash.total_pages() as usize;
        let logical_pages = exported_blocks * ppb;
        let lanes = (cfg.device.channel_count as usize).min((blocks - exported_blocks) as usize / 4).max(1);
        Ok(LogicalDevice {
            flash,
            logical_pages,
            state: RwLock::new(MapState {
                l2p: vec![UNMAPPED; logical_pages as usize],
                p2l: vec![UNMAPPED; physical],
                valid: vec![0; blocks as usize],
                free: (0..blocks).collect(),
                sealed: Vec::new(),
                active: vec![None; lanes],
                lane: 0,
                stats: LogicalStats::default(),
            }),
            cfg,
            host_reads: AtomicU64::new(0),
        })
    }

    pub fn logical_pages(&self) -> u32 {
        self.logical_pages
    }

    pub fn flash(&self) -> &FlashDevice {
        &self.flash
    }

    pub fn device_stats(&self) -> DeviceStats {
        self.flash.stats()
    }

    pub fn logical_stats(&self) -> LogicalStats {
        let host_reads = self.host_reads.load(Ordering::Relaxed);
        LogicalStats { host_reads, ..self.state.read().stats }
    }

    pub fn free_blocks(&self) -> usize {
        self.state.read().free.len()
    }

    /// Physical pages currently holding the data of a logical page.
    pub fn valid_copies(&self, lpage: u32) -> usize {
        let st = self.state.read();
        st.p2l.iter().filter(|&&l| l == lpage).count()
    }

    fn check(&self, lpage: u32) -> Result<()> {
        if lpage >= self.logical_pages {
            return Err(Error::Address(format!("logical page {lpage} of {}", self.logical_pages)));
        }
        Ok(())
    }

    fn ppb(&self) -> u32 {
        self.cfg.device.pages_per_block
    }

    pub fn logical_read(&self, lpage: u32) -> Result<PageBuf> {
        self.check(lpage)?;
        self.host_reads.fetch_add(1, Ordering::Relaxed);
        // The shared lock keeps collection from moving the page mid-read.
        let st = self.state.read();
        match st.l2p[lpage as usize] {
            UNMAPPED => Ok(vec![0xFF; self.cfg.device.page_size_bytes].into()),
            p => self.flash.read_page(PageId(p)),
        }
    }

    pub fn logical_write(&self, lpage: u32, data: &[u8]) -> Result<()> {
        self.check(lpage)?;
        let mut st = self.state.write();
        let p = self.next_page(&mut st, true)?;
        self.flash.write_page(PageId(p), data)?;
        self.invalidate(&mut st, lpage);
        self.map(&mut st, lpage, p);
        st.stats.host_writes += 1;
        Ok(())
    }

    pub fn logical_trim(&self, lpage: u32) -> Result<()> {
        self.check(lpage)?;
        let mut st = self.state.write();
        self.invalidate(&mut st, lpage);
        st.stats.trims += 1;
        Ok(())
    }

    fn invalidate(&self, st: &mut MapState, lpage: u32) {
        let old = std::mem::replace(&mut st.l2p[lpage as usize], UNMAPPED);
        if old != UNMAPPED {
            st.p2l[old as usize] = UNMAPPED;
            st.valid[(old / self.ppb()) as usize] -= 1;
        }
    }

    fn map(&self, st: &mut MapState, lpage: u32, p: u32) {
        st.l2p[lpage as usize] = p;
        st.p2l[p as usize] = lpage;
        st.valid[(p / self.ppb()) as usize] += 1;
    }

    /// Next physical page, taken from the open blocks in turn. Host writes
    /// may trigger collection first; collection's own copies may not.
    fn next_page(&self, st: &mut MapState, may_collect: bool) -> Result<u32> {
        let ppb = self.ppb();
        let lanes = st.active.len();
        let lane = st.lane;
        st.lane = (lane + 1) % lanes;
        if let Some((b, next)) = st.active[lane] {
            if next < ppb {
                st.active[lane] = Some((b, next + 1));
                return Ok(b * ppb + next);
            }
            st.sealed.push(b);
            st.active[lane] = None;
        }
        while may_collect && st.free.len() < self.cfg.gc_threshold_blocks {
            if self.collect(st)? == 0 {
                break;
            }
        }
        // Collection may have opened a block on this lane for its copies.
        if let Some((b, next)) = st.active[lane] {
            if next < ppb {
                st.active[lane] = Some((b, next + 1));
                return Ok(b * ppb + next);
            }
            st.sealed.push(b);
        }
        let pos = st.free.iter().position(|&b| b as usize % lanes == lane).unwrap_or(0);
        let b = st.free.remove(pos).ok_or(Error::StoreFull)?;
        st.active[lane] = Some((b, 1));
        Ok(b * ppb)
    }

    /// Greedy collection of the sealed block with the fewest valid pages.
    /// Returns blocks freed.
    fn collect(&self, st: &mut MapState) -> Result<usize> {
        let ppb = self.ppb();
        let Some(i) = (0..st.sealed.len()).min_by_key(|&i| st.valid[st.sealed[i] as usize]) else {
            return Ok(0);
        };
        if st.valid[st.sealed[i] as usize] == ppb {
            // Nothing to gain: every sealed block is fully valid.
            return Ok(0);
        }
        let victim = st.sealed.swap_remove(i);
        st.stats.gc_runs += 1;
        for p in victim * ppb..(victim + 1) * ppb {
            let l = st.p2l[p as usize];
            if l == UNMAPPED {
                continue;
            }
            let data = self.flash.read_page(PageId(p))?;
            let dst = self.next_page(st, false)?;
            self.flash.write_page(PageId(dst), &data)?;
            self.invalidate(st, l);
            self.map(st, l, dst);
            st.stats.gc_copies += 1;
        }
        self.flash.erase_block(BlockId(victim))?;
        st.free.push_back(victim);
        Ok(1)
    }

    /// Runs one device collection step regardless of free space.
    pub fn device_gc_step(&self) -> Result<u64> {
        let mut st = self.state.write();
        let before = st.stats.gc_copies;
        self.collect(&mut st)?;
        Ok(st.stats.gc_copies - before)
    }
}

impl PageDevice for LogicalDevice {
    fn page_size(&self) -> usize {
        self.cfg.device.page_size_bytes
    }

    fn pages_per_block(&self) -> u32 {
        self.ppb()
    }

    fn block_count(&self) -> u32 {
        self.logical_pages / self.ppb()
    }

    fn read_page(&self, page: u32) -> Result<PageBuf> {
        self.logical_read(page)
    }

    fn write_page(&self, page: u32, data: &[u8]) -> Result<()> {
        self.logical_write(page, data)
    }

    /// Reclaiming a host segment trims its logical pages.
    fn erase_block(&self, block: u32) -> Result<()> {
        let ppb = self.ppb();
        for l in block * ppb..(block + 1) * ppb {
            self.logical_trim(l)?;
        }
        Ok(())
    }

    fn now(&self) -> Nanos {
        self.flash.now()
    }

    fn time_mode(&self) -> TimeMode {
        self.flash.time_mode()
    }
}

#[derive(Debug, Clone)]
pub struct VftlConfig {
    pub device: LogicalDeviceConfig,
    pub host: SemelConfig,
}

/// Host-side multi-version store over a conventional SSD.
pub struct Vftl {
    dev: Arc<LogicalDevice>,
    host: SemelStore<LogicalDevice>,
}

impl Vftl {
    pub fn open(cfg: VftlConfig) -> Result<Self> {
        let dev = Arc::new(LogicalDevice::new(cfg.device)?);
        let host = SemelStore::new(Arc::clone(&dev), cfg.host, "vftl")?;
        Ok(Vftl { dev, host })
    }

    pub fn device(&self) -> &LogicalDevice {
        &self.dev
    }

    pub fn host(&self) -> &SemelStore<LogicalDevice> {
        &self.host
    }

    /// Physical page programs per page of user data: both logs together.
    pub fn end_to_end_write_amp(&self) -> f64 {
        let user = self.host.log().stats().user_chunks;
        if user == 0 {
            return 0.0;
        }
        self.dev.device_stats().writes as f64 * 8.0 / user as f64
    }
}

impl VersionedStore for Vftl {
    fn name(&self) -> &'static str {
        "vftl"
    }

    fn put(&self, key: &Key, value: &[u8], ts: Timestamp) -> Result<PutReceipt> {
        self.host.put(key, value, ts)
    }

    fn delete(&self, key: &Key, ts: Timestamp) -> Result<PutReceipt> {
        self.host.delete(key, ts)
    }

    fn get(&self, key: &Key, snapshot: Timestamp) -> Result<Versioned> {
        self.host.get(key, snapshot)
    }

    fn needs_gc(&self) -> bool {
        self.host.needs_gc()
    }

    fn gc_step(&self) -> Result<usize> {
        self.host.gc_step()
    }

    fn memory_usage(&self) -> MemoryUsage {
        self.host.memory_usage()
    }

    fn stats(&self) -> StoreStats {
        StoreStats { write_amp: self.end_to_end_write_amp(), ..self.host.stats() }
    }

    fn write_log(&self) -> &dyn LogControl {
        self.host.write_log()
    }

    fn watermark(&self) -> &Watermark {
        self.host.watermark()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::LATEST;

    fn device(blocks: u32) -> LogicalDevice {
        let dev = DeviceConfig { block_count: blocks, ..Default::default() };
        LogicalDevice::new(LogicalDeviceConfig::conventional(dev, Duration::ZERO)).unwrap()
    }

    fn page(fill: u8) -> Vec<u8> {
        vec![fill; 4096]
    }

    #[test]
    fn overwrite_remaps() {
        let d = device(40);
        d.logical_write(7, &page(1)).unwrap();
        d.logical_write(7, &page(2)).unwrap();
        assert_eq!(&d.logical_read(7).unwrap()[..], &page(2)[..]);
        assert_eq!(d.valid_copies(7), 1);
    }

    #[test]
    fn trim_reads_erased() {
        let d = device(40);
        d.logical_write(3, &page(1)).unwrap();
        d.logical_trim(3).unwrap();
        assert_eq!(&d.logical_read(3).unwrap()[..], &page(0xFF)[..]);
        assert_eq!(d.valid_copies(3), 0);
    }

    #[test]
    fn exported_capacity_excludes_over_provisioning() {
        let d = device(40);
        assert_eq!(d.logical_pages(), 36 * 32);
        assert!(d.logical_write(36 * 32, &page(0)).is_err());
        assert!(d.logical_read(36 * 32).is_err());
    }

    #[test]
    fn empty_victim_costs_only_an_erase() {
        let d = device(40);
        for l in 0..32 {
            d.logical_write(l, &page(1)).unwrap();
        }
        d.logical_write(32, &page(1)).unwrap();
        for l in 0..32 {
            d.logical_trim(l).unwrap();
        }
        let erases = d.device_stats().erases;
        assert_eq!(d.device_gc_step().unwrap(), 0);
        assert_eq!(d.device_stats().erases, erases + 1);
    }

    #[test]
    fn victim_with_k_valid_pages_copies_k() {
        let d = device(40);
        for l in 0..33 {
            d.logical_write(l, &page(l as u8)).unwrap();
        }
        for l in 5..32 {
            d.logical_trim(l).unwrap();
        }
        let writes = d.device_stats().writes;
        assert_eq!(d.device_gc_step().unwrap(), 5);
        assert_eq!(d.device_stats().writes, writes + 5);
        for l in 0..5 {
            assert_eq!(d.logical_read(l).unwrap()[0], l as u8);
        }
    }

    #[test]
    fn random_overwrites_amplify() {
        use rand::{Rng, SeedableRng};
        let d = device(64);
        let live = (d.logical_pages() as f64 * 0.9) as u32;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for l in 0..live {
            d.logical_write(l, &page(0)).unwrap();
        }
        for _ in 0..20_000 {
            d.logical_write(rng.random_range(0..live), &page(1)).unwrap();
        }
        assert!(d.logical_stats().write_amplification() > 1.5);
    }

    #[test]
    fn host_store_over_logical_device() {
        let dev = DeviceConfig { block_count: 64, ..Default::default() };
        let cfg = VftlConfig {
            device: LogicalDeviceConfig::conventional(dev, Duration::from_micros(10)),
            host: SemelConfig::default(),
        };
        let s = Vftl::open(cfg).unwrap();
        s.watermark().advance(u64::MAX);
        for ts in 1..=30_000u64 {
            s.put(&Key::from_u64(ts % 200), b"v", ts).unwrap();
        }
        for key in 0..200u64 {
            let want = (29_801..=30_000).find(|t| t % 200 == key).unwrap();
            assert_eq!(s.get(&Key::from_u64(key), LATEST).unwrap().ts, want);
        }
        assert!(s.host().log().stats().blocks_reclaimed > 0);
        assert!(s.device().logical_stats().trims > 0);
        assert!(s.end_to_end_write_amp() >= s.host().log().stats().write_amplification());
    }
}
