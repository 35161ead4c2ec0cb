//! Wall-clock drivers: one thread per client, plus a page flusher and a
//! background collector. Device operations sleep for their latency.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use flashkv::clock::nanos;
use flashkv::store::{VersionedStore, LATEST};
use flashkv::txn::{AbortReason, Outcome, TxnConfig, TxnError, TxnManager};
use flashkv::Error;
use parking_lot::Mutex;

use crate::metrics::{LatencyRecorder, RunDetail};
use crate::sim::{KvRunOutput, TxnRunOutput, WindowStats};
use crate::workload::{value_for, KvGenerator, KvOp, KvWorkloadSpec, TxnGenerator, TxnWorkloadSpec};

fn background(store: &dyn VersionedStore, stop: &AtomicBool, steps: &AtomicU64) {
    while !stop.load(Ordering::Relaxed) {
        let _ = store.write_log().flush_expired();
        if store.needs_gc() {
            if store.gc_slice().is_ok() {
                steps.fetch_add(1, Ordering::Relaxed);
            }
        } else {
            std::thread::sleep(Duration::from_micros(100));
        }
    }
}

fn window(store: &dyn VersionedStore, start: flashkv::store::StoreStats) -> WindowStats {
    let end = store.stats();
    let hits = end.cache_hits - start.cache_hits;
    let misses = end.cache_misses - start.cache_misses;
    WindowStats {
        cache_hit_rate: if hits + misses == 0 { 0.0 } else { hits as f64 / (hits + misses) as f64 },
        write_amp: end.write_amp,
        blocks_reclaimed: end.blocks_reclaimed - start.blocks_reclaimed,
        page_reads: end.page_reads - start.page_reads,
    }
}

/// Closed-loop key-value run on wall-clock time.
pub fn run_kv(store: Arc<dyn VersionedStore>, spec: &KvWorkloadSpec, next_ts: &mut u64) -> anyhow::Result<KvRunOutput> {
    anyhow::ensure!(spec.clients >= 1, "at least one client is required");
    let ts = AtomicU64::new(*next_ts);
    let stop = AtomicBool::new(false);
    let steps = AtomicU64::new(0);
    let merged = Mutex::new((LatencyRecorder::default(), RunDetail::default()));
    let start = Instant::now();
    let warm_end = start + spec.warmup;
    let end = warm_end + spec.duration;
    let start_stats = Mutex::new(None);
    let store = store.as_ref();
    std::thread::scope(|s| -> anyhow::Result<()> {
        s.spawn(|| background(store, &stop, &steps));
        let mut workers = Vec::new();
        for c in 0..spec.clients {
            let (ts, merged, start_stats) = (&ts, &merged, &start_stats);
            let client_spec = KvWorkloadSpec { seed: spec.seed.wrapping_add(c as u64 * 7919), ..spec.clone() };
            workers.push(s.spawn(move || -> anyhow::Result<()> {
                let mut gen = KvGenerator::new(&client_spec)?;
                let mut lat = LatencyRecorder::default();
                let mut d = RunDetail::default();
                loop {
                    let issued = Instant::now();
                    if issued >= end {
                        break;
                    }
                    let measured = issued >= warm_end;
                    if measured {
                        start_stats.lock().get_or_insert_with(|| store.stats());
                    }
                    match gen.next_op() {
                        KvOp::Get(k) => {
                            match store.get(&k, LATEST) {
                                Ok(_) | Err(Error::NotFound) => {}
                                Err(e) => return Err(e.into()),
                            }
                            d.gets += measured as u64;
                        }
                        KvOp::Put(k) => loop {
                            let t = ts.fetch_add(1, Ordering::AcqRel) + 1;
                            match store.put(&k, &value_for(client_spec.value_size, t), t) {
                                Ok(r) => {
                                    store.watermark().advance(t);
                                    store.write_log().wait_durable(r.seq)?;
                                    d.puts += measured as u64;
                                    break;
                                }
                                // Another client wrote the key with a later stamp first.
                                Err(Error::Ordering { .. }) => continue,
                                Err(Error::StoreFull) => {
                                    d.store_full += 1;
                                    break;
                                }
                                Err(e) => return Err(e.into()),
                            }
                        },
                    }
                    if measured {
                        lat.record(nanos(issued.elapsed()));
                        d.ops += 1;
                    }
                }
                let mut m = merged.lock();
                m.1.ops += d.ops;
                m.1.gets += d.gets;
                m.1.puts += d.puts;
                m.1.store_full += d.store_full;
                m.0.extend(&lat);
                Ok(())
            }));
        }
        let results: Vec<_> = workers.into_iter().map(|w| w.join().expect("client thread")).collect();
        stop.store(true, Ordering::Relaxed);
        results.into_iter().collect()
    })?;
    *next_ts = ts.load(Ordering::Acquire);
    let (latency, mut detail) = merged.into_inner();
    let win = window(store, start_stats.into_inner().unwrap_or_default());
    detail.gc_steps = steps.load(Ordering::Relaxed);
    detail.blocks_reclaimed = win.blocks_reclaimed;
    detail.device_reads = win.page_reads;
    detail.mean_latency_us = latency.mean_us();
    Ok(KvRunOutput {
        throughput: detail.ops as f64 / spec.duration.as_secs_f64(),
        latency,
        detail,
        window: win,
        trace: None,
    })
}

/// Open-loop transactional run on wall-clock time. Arrival times are drawn
/// up front; each client thread takes the next arrival, waits for it, and
/// runs the transaction.
pub fn run_txn(store: Arc<dyn VersionedStore>, spec: &TxnWorkloadSpec, last_ts: u64) -> anyhow::Result<TxnRunOutput> {
    anyhow::ensure!(spec.clients >= 1, "at least one client is required");
    let mgr = TxnManager::new(Arc::clone(&store), TxnConfig { clients: spec.clients, ack_interval: 1 }, last_ts);
    let mut gen = TxnGenerator::new(spec)?;
    let total = spec.warmup + spec.duration;
    let mut arrivals = Vec::new();
    let mut t = Duration::ZERO;
    loop {
        t += gen.next_gap();
        if t >= total {
            break;
        }
        arrivals.push((t, gen.next_plan()));
    }
    let next = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let steps = AtomicU64::new(0);
    let merged = Mutex::new((LatencyRecorder::default(), RunDetail::default()));
    let start_stats = Mutex::new(None);
    let start = Instant::now();
    let store_ref = store.as_ref();
    std::thread::scope(|s| -> anyhow::Result<()> {
        s.spawn(|| background(store_ref, &stop, &steps));
        let mut workers = Vec::new();
        for client in 0..spec.clients {
            let (mgr, arrivals, next, merged, start_stats) = (&mgr, &arrivals, &next, &merged, &start_stats);
            workers.push(s.spawn(move || -> anyhow::Result<()> {
                let mut lat = LatencyRecorder::default();
                let mut d = RunDetail::default();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed) as usize;
                    let Some((at, plan)) = arrivals.get(i) else { break };
                    let arrival = start + *at;
                    if let Some(wait) = arrival.checked_duration_since(Instant::now()) {
                        std::thread::sleep(wait);
                    }
                    let mut txn = mgr.begin(client);
                    let mut result = None;
                    for key in &plan.keys {
                        match mgr.read(&mut txn, key) {
                            Ok(_) => {}
                            Err(TxnError::Aborted(r)) => {
                                result = Some(Err(r));
                                break;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    if result.is_none() {
                        if !plan.read_only {
                            let value = value_for(spec.value_size, txn.start_ts());
                            for key in &plan.keys {
                                mgr.write(&mut txn, key, &value)?;
                            }
                        }
                        result = Some(match mgr.commit(&mut txn)? {
                            Outcome::Committed(c) => {
                                if let Some(seq) = c.durable_seq {
                                    store_ref.write_log().wait_durable(seq)?;
                                }
                                Ok(())
                            }
                            Outcome::Aborted(r) => Err(r),
                        });
                    }
                    if *at < spec.warmup {
                        continue;
                    }
                    start_stats.lock().get_or_insert_with(|| store_ref.stats());
                    d.ops += 1;
                    match result.expect("finished") {
                        Ok(()) => {
                            d.committed += 1;
                            lat.record(nanos(arrival.elapsed()));
                        }
                        Err(AbortReason::Conflict) => d.conflict_aborts += 1,
                        Err(AbortReason::StaleSnapshot) => d.stale_aborts += 1,
                        Err(AbortReason::Capacity) => d.capacity_aborts += 1,
                    }
                }
                let mut m = merged.lock();
                m.1.ops += d.ops;
                m.1.committed += d.committed;
                m.1.conflict_aborts += d.conflict_aborts;
                m.1.stale_aborts += d.stale_aborts;
                m.1.capacity_aborts += d.capacity_aborts;
                m.0.extend(&lat);
                Ok(())
            }));
        }
        let results: Vec<_> = workers.into_iter().map(|w| w.join().expect("client thread")).collect();
        stop.store(true, Ordering::Relaxed);
        results.into_iter().collect()
    })?;
    let (latency, mut detail) = merged.into_inner();
    let win = window(store_ref, start_stats.into_inner().unwrap_or_default());
    let secs = start.elapsed().saturating_sub(spec.warmup).as_secs_f64().max(1e-9);
    detail.attempt_rate = detail.ops as f64 / secs;
    detail.gc_steps = steps.load(Ordering::Relaxed);
    detail.blocks_reclaimed = win.blocks_reclaimed;
    detail.device_reads = win.page_reads;
    detail.mean_latency_us = latency.mean_us();
    let aborts = detail.conflict_aborts + detail.stale_aborts + detail.capacity_aborts;
    let n = detail.ops.max(1) as f64;
    Ok(TxnRunOutput {
        throughput: detail.committed as f64 / secs,
        abort_rate: aborts as f64 / n,
        commit_rate: detail.committed as f64 / n,
        latency,
        detail,
        window: win,
        last_ts: mgr.oracle().current(),
    })
}
