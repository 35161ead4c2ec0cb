//! Command-line settings. A `key=value` config file may supply any flag;
//! flags given on the command line take precedence.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, ValueEnum};
use flashkv::clock::TimeMode;
use flashkv::flashsim::DeviceConfig;

use crate::stores::{StoreKind, StoreSetup};
use crate::workload::{KvWorkloadSpec, TxnWorkloadSpec, PACKED_VALUE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Kv,
    Txn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// A single run with the given settings.
    Run,
    /// Multi- against single-version aborts over the `--loads` sweep.
    Fig1,
    /// Skimpy throughput over keys per bucket {1,2,5,10,32}.
    Fig4,
    /// Throughput of every store over the `--put-pcts` sweep.
    Fig5,
    /// Transactional throughput and latency of every store over `--loads`.
    Fig6,
}

fn parse_time(s: &str) -> Result<TimeMode, String> {
    s.parse()
}

#[derive(Debug, Clone, Parser)]
#[command(name = "flashkv-bench", version, about = "Flash key-value store benchmarks", args_override_self = true)]
pub struct Cli {
    /// Read further settings from a key=value file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "semel")]
    pub store: StoreKind,
    #[arg(long, value_enum, default_value = "kv")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "run")]
    pub experiment: Experiment,
    #[arg(long)]
    pub single_version: bool,
    #[arg(long, default_value_t = 200_000)]
    pub keys: u64,
    #[arg(long, default_value_t = PACKED_VALUE_SIZE)]
    pub value_size: usize,
    #[arg(long, default_value_t = 90.0)]
    pub get_pct: f64,
    /// Key popularity skew (read keys in txn mode).
    #[arg(long, default_value_t = 0.99)]
    pub zipf: f64,
    /// Key popularity skew of read-write transactions.
    #[arg(long, default_value_t = 0.75)]
    pub zipf_rw: f64,
    #[arg(long, default_value_t = 90.0)]
    pub readonly_pct: f64,
    /// Measured run length in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    /// Unmeasured lead-in in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub warmup: f64,
    /// Offered transactions per second.
    #[arg(long, default_value_t = 10_000.0)]
    pub rate: f64,
    /// Closed-loop clients in kv mode; transactional runs use 64 when unset.
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub cache_pct: f64,
    #[arg(long, default_value_t = 5.0)]
    pub keys_per_bucket: f64,
    #[arg(long, default_value_t = 2400)]
    pub device_blocks: u32,
    #[arg(long, default_value_t = 8)]
    pub channels: u32,
    #[arg(long, default_value_t = 128)]
    pub queue_depth: usize,
    /// Figure sweeps always run on virtual time.
    #[arg(long, value_parser = parse_time, default_value = "realtime")]
    pub time: TimeMode,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Age the device with overwrites (one uniform turnover, then one skewed) before measuring.
    #[arg(long)]
    pub precondition: bool,
    /// Offered loads for transactional sweeps.
    #[arg(long, value_delimiter = ',', default_values_t = [5_000.0, 10_000.0, 15_000.0, 20_000.0, 25_000.0])]
    pub loads: Vec<f64>,
    /// Put percentages for key-value sweeps.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 5.0, 10.0, 25.0])]
    pub put_pcts: Vec<f64>,
    /// Per-command firmware cost of the conventional SSD, in microseconds.
    #[arg(long, default_value_t = crate::stores::DEFAULT_VFTL_COMMAND_OVERHEAD.as_micros() as f64)]
    pub vftl_overhead_us: f64,
}

const BOOL_FLAGS: [&str; 2] = ["single-version", "precondition"];

/// Turns `key=value` lines into flag tokens. Blank lines and `#` comments
/// are skipped; boolean flags take `true` or `false`.
pub fn config_tokens(text: &str) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("config line {}: expected key=value", n + 1))?;
        let (k, v) = (k.trim().trim_start_matches("--").replace('_', "-"), v.trim());
        anyhow::ensure!(k != "config", "config line {}: nested config files are not supported", n + 1);
        if BOOL_FLAGS.contains(&k.as_str()) {
            match v {
                "true" | "1" | "yes" => out.push(format!("--{k}")),
                "false" | "0" | "no" => {}
                _ => anyhow::bail!("config line {}: `{k}` takes true or false", n + 1),
            }
        } else {
            out.push(format!("--{k}"));
            out.push(v.to_string());
        }
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Parses the command line, splicing in the config file's settings ahead of
/// the explicit flags so the latter win.
pub fn parse_args(args: Vec<String>) -> anyhow::Result<Cli> {
    let mut full = vec![args.first().cloned().unwrap_or_else(|| "flashkv-bench".into())];
    if let Some(path) = config_path(&args[1.min(args.len())..]) {
        full.extend(read_config(&path)?);
    }
    full.extend(args.into_iter().skip(1));
    Ok(Cli::try_parse_from(full)?)
}

fn read_config(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    config_tokens(&text)
}

impl Cli {
    pub fn device(&self) -> DeviceConfig {
        DeviceConfig {
            block_count: self.device_blocks,
            channel_count: self.channels,
            queue_depth: self.queue_depth,
            time_mode: self.time,
            ..Default::default()
        }
    }

    pub fn setup(&self) -> StoreSetup {
        StoreSetup {
            kind: self.store,
            single_version: self.single_version,
            keys: self.keys,
            keys_per_bucket: self.keys_per_bucket,
            cache_pct: self.cache_pct,
            device: self.device(),
            vftl_command_overhead: Duration::from_secs_f64(self.vftl_overhead_us / 1e6),
        }
    }

    pub fn kv_spec(&self) -> KvWorkloadSpec {
        KvWorkloadSpec {
            keys: self.keys,
            value_size: self.value_size,
            get_fraction: self.get_pct / 100.0,
            alpha: self.zipf,
            clients: self.clients.unwrap_or(KvWorkloadSpec::default().clients),
            duration: Duration::from_secs_f64(self.duration),
            warmup: Duration::from_secs_f64(self.warmup),
            seed: self.seed,
        }
    }

    pub fn txn_spec(&self) -> TxnWorkloadSpec {
        TxnWorkloadSpec {
            keys: self.keys,
            value_size: self.value_size,
            read_only_fraction: self.readonly_pct / 100.0,
            alpha_r: self.zipf,
            alpha_rw: self.zipf_rw,
            clients: self.clients.unwrap_or(TxnWorkloadSpec::default().clients),
            rate: self.rate,
            duration: Duration::from_secs_f64(self.duration),
            warmup: Duration::from_secs_f64(self.warmup),
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.keys >= 1, "--keys must be at least 1");
        anyhow::ensure!((0.0..=100.0).contains(&self.get_pct), "--get-pct must be within 0..=100");
        anyhow::ensure!((0.0..=100.0).contains(&self.readonly_pct), "--readonly-pct must be within 0..=100");
        anyhow::ensure!((0.0..=100.0).contains(&self.cache_pct), "--cache-pct must be within 0..=100");
        anyhow::ensure!(self.keys_per_bucket > 0.0, "--keys-per-bucket must be positive");
        anyhow::ensure!(self.duration > 0.0 && self.warmup >= 0.0, "durations must be positive");
        anyhow::ensure!(self.clients.is_none_or(|c| c >= 1), "--clients must be at least 1");
        anyhow::ensure!(self.rate > 0.0, "--rate must be positive");
        anyhow::ensure!(self.put_pcts.iter().all(|p| (0.0..=100.0).contains(p)), "--put-pcts must be within 0..=100");
        self.device().validate()?;
        Ok(())
    }
}
