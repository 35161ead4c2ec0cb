//! Parameter sweeps behind each result figure.

use std::sync::Arc;

use flashkv::clock;
use flashkv::store::VersionedStore;

use crate::metrics::{RunMetrics, RunResult};
use crate::sim::{precondition, run_kv, run_txn, KvRunOutput, Stage, TxnRunOutput};
use crate::stores::{StoreKind, StoreSetup};
use crate::workload::{KvWorkloadSpec, TxnWorkloadSpec};

/// A built store with its timestamp high-water mark.
pub struct Prepared {
    pub store: Arc<dyn VersionedStore>,
    pub last_ts: u64,
}

/// Overwrite stages that bring a freshly loaded store to steady state: one
/// device turnover of uniform overwrites spreads live data over the log,
/// then one turnover with the measured skew settles hot keys and chains.
pub fn steady_state_stages(setup: &StoreSetup, alpha: f64) -> [Stage; 2] {
    let turnover = setup.device.block_count as u64;
    [Stage { alpha: 0.0, reclaim_blocks: turnover }, Stage { alpha, reclaim_blocks: turnover }]
}

/// Builds a store on a fresh virtual timeline and brings it to steady state.
pub fn prepare(setup: &StoreSetup, value_size: usize, alpha: f64, seed: u64) -> anyhow::Result<Prepared> {
    clock::set_now(0);
    let store = setup.build()?;
    let stages = steady_state_stages(setup, alpha);
    let pre = precondition(store.as_ref(), setup.keys, value_size, seed, &stages)?;
    Ok(Prepared { store, last_ts: pre.last_ts })
}

pub fn kv_metrics(setup: &StoreSetup, spec: &KvWorkloadSpec, store: &dyn VersionedStore, out: &KvRunOutput) -> RunResult {
    RunResult {
        metrics: RunMetrics {
            store: setup.kind.name().into(),
            mode: setup.mode().into(),
            workload: "kv".into(),
            put_pct: round2((1.0 - spec.get_fraction) * 100.0),
            offered_load: spec.clients as f64,
            keys: setup.keys,
            buckets: setup.buckets(),
            cache_pct: setup.effective_cache_pct(),
            throughput: out.throughput,
            p50_us: out.latency.percentile_us(50.0),
            p95_us: out.latency.percentile_us(95.0),
            p99_us: out.latency.percentile_us(99.0),
            abort_rate: 0.0,
            commit_rate: 0.0,
            cache_hit_rate: out.window.cache_hit_rate,
            write_amp: out.window.write_amp,
            index_bytes: store.memory_usage().index_bytes,
            seed: spec.seed,
        },
        detail: out.detail,
    }
}

pub fn txn_metrics(setup: &StoreSetup, spec: &TxnWorkloadSpec, store: &dyn VersionedStore, out: &TxnRunOutput) -> RunResult {
    RunResult {
        metrics: RunMetrics {
            store: setup.kind.name().into(),
            mode: setup.mode().into(),
            workload: "txn".into(),
            put_pct: 0.0,
            offered_load: spec.rate,
            keys: setup.keys,
            buckets: setup.buckets(),
            cache_pct: setup.effective_cache_pct(),
            throughput: out.throughput,
            p50_us: out.latency.percentile_us(50.0),
            p95_us: out.latency.percentile_us(95.0),
            p99_us: out.latency.percentile_us(99.0),
            abort_rate: out.abort_rate,
            commit_rate: out.commit_rate,
            cache_hit_rate: out.window.cache_hit_rate,
            write_amp: out.window.write_amp,
            index_bytes: store.memory_usage().index_bytes,
            seed: spec.seed,
        },
        detail: out.detail,
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Throughput against put percentage on one preconditioned store.
pub fn kv_sweep(setup: &StoreSetup, base: &KvWorkloadSpec, put_pcts: &[f64]) -> anyhow::Result<Vec<RunResult>> {
    let mut p = prepare(setup, base.value_size, base.alpha, base.seed)?;
    let mut out = Vec::new();
    for (i, &pct) in put_pcts.iter().enumerate() {
        let seed = base.seed.wrapping_add(i as u64 + 1);
        let spec = KvWorkloadSpec { get_fraction: 1.0 - pct / 100.0, seed, ..base.clone() };
        let run = run_kv(p.store.as_ref(), &spec, &mut p.last_ts, false)?;
        out.push(kv_metrics(setup, &spec, p.store.as_ref(), &run));
    }
    Ok(out)
}

/// Throughput and latency against offered transaction load.
pub fn txn_sweep(setup: &StoreSetup, base: &TxnWorkloadSpec, loads: &[f64]) -> anyhow::Result<Vec<RunResult>> {
    let mut p = prepare(setup, base.value_size, base.alpha_rw, base.seed)?;
    let mut out = Vec::new();
    for (i, &rate) in loads.iter().enumerate() {
        let seed = base.seed.wrapping_add(i as u64 + 1);
        let spec = TxnWorkloadSpec { rate, seed, ..base.clone() };
        let run = run_txn(Arc::clone(&p.store), &spec, p.last_ts)?;
        p.last_ts = run.last_ts;
        out.push(txn_metrics(setup, &spec, p.store.as_ref(), &run));
    }
    Ok(out)
}

/// Key-value throughput for each store over a put-percentage sweep.
pub fn fig5(base_setup: &StoreSetup, spec: &KvWorkloadSpec, put_pcts: &[f64]) -> anyhow::Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for kind in StoreKind::ALL {
        let setup = StoreSetup { kind, single_version: false, ..base_setup.clone() };
        out.extend(kv_sweep(&setup, spec, put_pcts)?);
    }
    Ok(out)
}

/// Skimpy throughput as the directory shrinks.
pub fn fig4(
    base_setup: &StoreSetup,
    spec: &KvWorkloadSpec,
    keys_per_bucket: &[f64],
    put_pct: f64,
) -> anyhow::Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for &kpb in keys_per_bucket {
        let setup = StoreSetup { kind: StoreKind::Skimpy, keys_per_bucket: kpb, ..base_setup.clone() };
        out.extend(kv_sweep(&setup, spec, &[put_pct])?);
    }
    Ok(out)
}

/// Multi-version against single-version transactions on the full-index store.
pub fn fig1(base_setup: &StoreSetup, spec: &TxnWorkloadSpec, loads: &[f64]) -> anyhow::Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for single_version in [false, true] {
        let setup = StoreSetup { kind: StoreKind::Semel, single_version, ..base_setup.clone() };
        out.extend(txn_sweep(&setup, spec, loads)?);
    }
    Ok(out)
}

/// Transactional throughput and latency for each store.
pub fn fig6(base_setup: &StoreSetup, spec: &TxnWorkloadSpec, loads: &[f64]) -> anyhow::Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for kind in StoreKind::ALL {
        let setup = StoreSetup { kind, single_version: false, ..base_setup.clone() };
        out.extend(txn_sweep(&setup, spec, loads)?);
    }
    Ok(out)
}
