//! Benchmark harness for the flashkv stores: zipfian workload generators,
//! virtual-time and wall-clock drivers, the figure sweeps, CSV reporting,
//! and reference models for the randomized test suites.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod realtime;
pub mod report;
pub mod sim;
pub mod stores;
pub mod verify;
pub mod workload;
pub mod zipf;
