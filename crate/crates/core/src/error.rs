use thiserror::Error;

/// Errors surfaced by the flash emulator, the log machinery and the stores.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("address out of range: {0}")]
    Address(String),
    #[error("page {page} already written since last erase")]
    WriteViolation { page: u32 },
    #[error("out-of-order program in block {block}: expected page index {expected}, got {got}")]
    Sequence { block: u32, expected: u32, got: u32 },
    #[error("device queue full")]
    QueueFull,
    #[error("invalid data length {got}, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("value of {len} bytes exceeds record capacity of {max} bytes")]
    Capacity { len: usize, max: usize },
    #[error("corrupt record: {0}")]
    Corruption(String),
    #[error("sentinel link used as a location")]
    SentinelLocation,
    #[error("store full: no reclaimable space left")]
    StoreFull,
    #[error("version {ts} is not newer than the key's latest version {latest}")]
    Ordering { ts: u64, latest: u64 },
    #[error("key not found")]
    NotFound,
    #[error("no version at or below the snapshot")]
    NotFoundAtSnapshot,
    #[error("requested version has been retired below the watermark")]
    VersionRetired,
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
