//! Building the stores under test from benchmark settings.

use std::sync::Arc;
use std::time::Duration;

use flashkv::flashsim::DeviceConfig;
use flashkv::semel::{Semel, SemelConfig};
use flashkv::skimpy::{Skimpy, SkimpyConfig};
use flashkv::store::VersionedStore;
use flashkv::vftl::{LogicalDeviceConfig, Vftl, VftlConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, clap::ValueEnum)]
pub enum StoreKind {
    Semel,
    Skimpy,
    Vftl,
}

impl StoreKind {
    pub const ALL: [StoreKind; 3] = [StoreKind::Semel, StoreKind::Skimpy, StoreKind::Vftl];

    pub fn name(self) -> &'static str {
        match self {
            StoreKind::Semel => "semel",
            StoreKind::Skimpy => "skimpy",
            StoreKind::Vftl => "vftl",
        }
    }
}

impl std::str::FromStr for StoreKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "semel" => Ok(StoreKind::Semel),
            "skimpy" => Ok(StoreKind::Skimpy),
            "vftl" => Ok(StoreKind::Vftl),
            other => anyhow::bail!("unknown store `{other}`"),
        }
    }
}

/// Per-command firmware cost charged by the conventional SSD under the
/// stacked baseline.
pub const DEFAULT_VFTL_COMMAND_OVERHEAD: Duration = Duration::from_micros(30);

#[derive(Debug, Clone)]
pub struct StoreSetup {
    pub kind: StoreKind,
    pub single_version: bool,
    pub keys: u64,
    pub keys_per_bucket: f64,
    pub cache_pct: f64,
    pub device: DeviceConfig,
    pub vftl_command_overhead: Duration,
}

impl StoreSetup {
    pub fn new(kind: StoreKind, keys: u64) -> Self {
        StoreSetup {
            kind,
            single_version: false,
            keys,
            keys_per_bucket: 5.0,
            cache_pct: 10.0,
            device: DeviceConfig::default(),
            vftl_command_overhead: DEFAULT_VFTL_COMMAND_OVERHEAD,
        }
    }

    pub fn skimpy_config(&self) -> SkimpyConfig {
        SkimpyConfig::for_keys(self.keys as usize, self.keys_per_bucket, self.cache_pct / 100.0)
    }

    /// Bucket directory size; zero for stores without one.
    pub fn buckets(&self) -> u64 {
        match self.kind {
            StoreKind::Skimpy => self.skimpy_config().bucket_count as u64,
            _ => 0,
        }
    }

    /// Cache size as a share of keys; zero for stores without a cache.
    pub fn effective_cache_pct(&self) -> f64 {
        match self.kind {
            StoreKind::Skimpy => self.cache_pct,
            _ => 0.0,
        }
    }

    pub fn mode(&self) -> &'static str {
        if self.single_version {
            "sv"
        } else {
            "mv"
        }
    }

    pub fn build(&self) -> anyhow::Result<Arc<dyn VersionedStore>> {
        let host = SemelConfig { single_version: self.single_version, ..Default::default() };
        Ok(match self.kind {
            StoreKind::Semel => Arc::new(Semel::open(self.device.clone(), host)?),
            StoreKind::Skimpy => {
                anyhow::ensure!(!self.single_version, "skimpy has no single-version mode");
                Arc::new(Skimpy::open(self.device.clone(), self.skimpy_config())?)
            }
            StoreKind::Vftl => {
                let device =
                    LogicalDeviceConfig::conventional(self.device.clone(), self.vftl_command_overhead);
                Arc::new(Vftl::open(VftlConfig { device, host })?)
            }
        })
    }
}
