//! Machinery shared by the log-structured stores: address and record codecs,
//! the packing write log, and the page-device abstraction it writes through.

pub mod location;
pub mod log;
pub mod record;

use crate::clock::{Nanos, TimeMode};
use crate::error::Result;
use crate::flashsim::{BlockId, FlashDevice, PageBuf, PageId};

pub use location::{decode_location, encode_location, FlashLocation, Link};
pub use log::{AppendClass, Appended, Log, LogConfig, LogControl, LogStats, ReadGuard};
pub use record::{decode_record, encode_record, Key, KvRecord, RecordLayout, Timestamp};

/// Page-granular storage a [`Log`] can be laid over: raw flash, or the
/// logical block device of a conventional SSD.
pub trait PageDevice: Send + Sync {
    fn page_size(&self) -> usize;
    fn pages_per_block(&self) -> u32;
    fn block_count(&self) -> u32;
    /// Independent units that can serve operations concurrently.
    fn parallelism(&self) -> u32 {
        1
    }
    fn read_page(&self, page: u32) -> Result<PageBuf>;
    fn write_page(&self, page: u32, data: &[u8]) -> Result<()>;
    fn erase_block(&self, block: u32) -> Result<()>;
    fn now(&self) -> Nanos;
    fn time_mode(&self) -> TimeMode;
}

impl PageDevice for FlashDevice {
    fn page_size(&self) -> usize {
        self.config().page_size_bytes
    }

    fn pages_per_block(&self) -> u32 {
        self.config().pages_per_block
    }

    fn block_count(&self) -> u32 {
        self.config().block_count
    }

    fn parallelism(&self) -> u32 {
        self.config().channel_count
    }

    fn read_page(&self, page: u32) -> Result<PageBuf> {
        FlashDevice::read_page(self, PageId(page))
    }

    fn write_page(&self, page: u32, data: &[u8]) -> Result<()> {
        FlashDevice::write_page(self, PageId(page), data)
    }

    fn erase_block(&self, block: u32) -> Result<()> {
        FlashDevice::erase_block(self, BlockId(block))
    }

    fn now(&self) -> Nanos {
        FlashDevice::now(self)
    }

    fn time_mode(&self) -> TimeMode {
        FlashDevice::time_mode(self)
    }
}
