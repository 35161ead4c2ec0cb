//! Discrete-event drivers on virtual time.
//!
//! One thread plays every client. Each event sets the thread clock to the
//! client's time before issuing its request; device operations advance the
//! clock to their completion, and channel contention between clients is
//! resolved by the emulator's per-channel queues. A put is acknowledged when
//! the page holding it has been programmed. A background collector runs
//! whenever the store asks for it, on its own timeline.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use anyhow::Context;
use flashkv::clock::{self, nanos, Nanos};
use flashkv::ftl::Timestamp;
use flashkv::store::{StoreStats, VersionedStore, LATEST};
use flashkv::txn::{AbortReason, Outcome, Txn, TxnConfig, TxnError, TxnManager};
use flashkv::Error;

use crate::metrics::{LatencyRecorder, RunDetail};
use crate::workload::{
    key_of, value_for, KvGenerator, KvOp, KvWorkloadSpec, TxnGenerator, TxnPlan, TxnWorkloadSpec,
};
use crate::zipf::ZipfGenerator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preconditioned {
    /// Largest timestamp written.
    pub last_ts: Timestamp,
    pub puts: u64,
}

pub(crate) fn put_with_gc(store: &dyn VersionedStore, key_rank: u64, value: &[u8], ts: Timestamp) -> anyhow::Result<()> {
    if store.needs_gc() {
        store.gc_step()?;
    }
    store.put(&key_of(key_rank), value, ts).with_context(|| format!("put at ts {ts}"))?;
    store.watermark().advance(ts);
    Ok(())
}

/// Writes every key once, in key order refined by the store's preference, with timestamps
/// `1..=keys`. Returns the last timestamp.
pub fn load_keys(store: &dyn VersionedStore, keys: u64, value_size: usize) -> anyhow::Result<Timestamp> {
    let mut order: Vec<_> = (1..=keys).map(key_of).collect();
    order.sort_unstable();
    store.load_order(&mut order);
    let value = value_for(value_size, 0);
    let mut ts = 0;
    for key in &order {
        ts += 1;
        if store.needs_gc() {
            store.gc_step()?;
        }
        store.put(key, &value, ts)?;
        store.watermark().advance(ts);
    }
    store.flush()?;
    Ok(ts)
}

/// One overwrite phase of preconditioning: keys drawn with skew `alpha`
/// until the collector has reclaimed `reclaim_blocks` more blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub alpha: f64,
    pub reclaim_blocks: u64,
}

/// Writes every key once, then runs each overwrite stage in turn; every
/// stage lasts until at least one block has been reclaimed. Leaves the store
/// with free space above the collection trigger.
pub fn precondition(
    store: &dyn VersionedStore,
    keys: u64,
    value_size: usize,
    seed: u64,
    stages: &[Stage],
) -> anyhow::Result<Preconditioned> {
    let mut ts = load_keys(store, keys, value_size)?;
    let value = value_for(value_size, 0);
    for (i, stage) in stages.iter().enumerate() {
        let mut zipf = ZipfGenerator::new(keys, stage.alpha, seed ^ 0x7072_6563 ^ (i as u64) << 32)?;
        let goal = store.stats().blocks_reclaimed + stage.reclaim_blocks.max(1);
        while store.stats().blocks_reclaimed < goal {
            for _ in 0..256 {
                ts += 1;
                put_with_gc(store, zipf.sample(), &value, ts)?;
            }
        }
    }
    store.flush()?;
    while store.needs_gc() {
        if store.gc_step()? == 0 {
            break;
        }
    }
    store.flush()?;
    Ok(Preconditioned { last_ts: ts, puts: ts })
}

/// Runs the background collector if it is idle and the store wants it.
struct Collector {
    ready: Nanos,
    steps: u64,
}

impl Collector {
    fn new(t: Nanos) -> Self {
        Collector { ready: t, steps: 0 }
    }

    fn poll(&mut self, store: &dyn VersionedStore, t: Nanos) -> anyhow::Result<()> {
        if self.ready <= t && store.needs_gc() {
            clock::set_now(t.max(self.ready));
            store.gc_slice()?;
            self.ready = clock::now();
            self.steps += 1;
        }
        clock::set_now(t);
        Ok(())
    }
}

struct Window {
    warm_end: Nanos,
    end: Nanos,
    start_stats: Option<StoreStats>,
}

impl Window {
    fn new(t0: Nanos, warmup: Nanos, duration: Nanos) -> Self {
        Window { warm_end: t0 + warmup, end: t0 + warmup + duration, start_stats: None }
    }

    fn observe(&mut self, store: &dyn VersionedStore, t: Nanos) {
        if t >= self.warm_end && self.start_stats.is_none() {
            self.start_stats = Some(store.stats());
        }
    }

    fn measured(&self, t: Nanos) -> bool {
        t >= self.warm_end && t < self.end
    }

    fn seconds(&self) -> f64 {
        (self.end - self.warm_end) as f64 / 1e9
    }
}

/// Store-level counters over the measured window.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindowStats {
    pub cache_hit_rate: f64,
    pub write_amp: f64,
    pub blocks_reclaimed: u64,
    pub page_reads: u64,
}

fn window_stats(store: &dyn VersionedStore, start: Option<StoreStats>) -> WindowStats {
    let end = store.stats();
    let start = start.unwrap_or_default();
    let hits = end.cache_hits - start.cache_hits;
    let misses = end.cache_misses - start.cache_misses;
    WindowStats {
        cache_hit_rate: if hits + misses == 0 { 0.0 } else { hits as f64 / (hits + misses) as f64 },
        write_amp: end.write_amp,
        blocks_reclaimed: end.blocks_reclaimed - start.blocks_reclaimed,
        page_reads: end.page_reads - start.page_reads,
    }
}

#[derive(Debug, Clone)]
pub struct KvRunOutput {
    pub throughput: f64,
    pub latency: LatencyRecorder,
    pub detail: RunDetail,
    pub window: WindowStats,
    /// Outcome of every get issued, in issue order: the version read, or 0.
    pub trace: Option<Vec<Timestamp>>,
}

/// Closed-loop key-value run. `next_ts` is the last timestamp in use and
/// is advanced by every put.
pub fn run_kv(
    store: &dyn VersionedStore,
    spec: &KvWorkloadSpec,
    next_ts: &mut Timestamp,
    keep_trace: bool,
) -> anyhow::Result<KvRunOutput> {
    anyhow::ensure!(spec.clients >= 1, "at least one client is required");
    let mut gen = KvGenerator::new(spec)?;
    let log = store.write_log();
    let t0 = clock::now();
    let mut win = Window::new(t0, nanos(spec.warmup), nanos(spec.duration));
    let mut heap: BinaryHeap<Reverse<(Nanos, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for c in 0..spec.clients {
        heap.push(Reverse((t0, seq, c)));
        seq += 1;
    }
    // Clients whose put waits for its page: (client, page seq, issue, return).
    let mut waiting: Vec<(usize, u64, Nanos, Nanos)> = Vec::new();
    let mut collector = Collector::new(t0);
    let mut latency = LatencyRecorder::default();
    let mut detail = RunDetail::default();
    let mut trace = keep_trace.then(Vec::new);

    // Summed get and put latencies.
    let mut split = [(0u64, 0u64); 2];
    let complete = |heap: &mut BinaryHeap<_>, seq: &mut u64, c: usize, issue: Nanos, done: Nanos,
                        detail: &mut RunDetail, latency: &mut LatencyRecorder, win: &Window,
                        split: &mut (u64, u64)| {
        if win.measured(issue) {
            latency.record(done - issue);
            detail.ops += 1;
            split.0 += 1;
            split.1 += done - issue;
        }
        heap.push(Reverse((done, *seq, c)));
        *seq += 1;
    };

    loop {
        let next = heap.peek().map(|Reverse((t, _, _))| *t);
        if let Some(d) = log.pending_deadline() {
            if next.is_none_or(|t| d <= t) {
                clock::set_now(d);
                log.flush_expired()?;
            }
        }
        let mut i = 0;
        while i < waiting.len() {
            let (c, s, issue, after) = waiting[i];
            if let Some(f) = log.flush_time(s) {
                waiting.swap_remove(i);
                complete(&mut heap, &mut seq, c, issue, after.max(f), &mut detail, &mut latency, &win, &mut split[1]);
            } else {
                i += 1;
            }
        }
        let Some(Reverse((t, _, c))) = heap.peek().copied() else {
            if waiting.is_empty() {
                break;
            }
            continue;
        };
        if let Some(d) = log.pending_deadline() {
            if d <= t {
                continue;
            }
        }
        if t >= win.end {
            break;
        }
        heap.pop();
        win.observe(store, t);
        collector.poll(store, t)?;
        match gen.next_op() {
            KvOp::Get(key) => {
                let got = match store.get(&key, LATEST) {
                    Ok(v) => v.ts,
                    Err(Error::NotFound) => 0,
                    Err(e) => return Err(e.into()),
                };
                if let Some(tr) = trace.as_mut() {
                    tr.push(got);
                }
                if win.measured(t) {
                    detail.gets += 1;
                }
                complete(&mut heap, &mut seq, c, t, clock::now(), &mut detail, &mut latency, &win, &mut split[0]);
            }
            KvOp::Put(key) => {
                *next_ts += 1;
                let value = value_for(spec.value_size, *next_ts);
                let r = match store.put(&key, &value, *next_ts) {
                    Ok(r) => r,
                    Err(Error::StoreFull) => {
                        detail.store_full += 1;
                        complete(&mut heap, &mut seq, c, t, clock::now(), &mut detail, &mut latency, &win, &mut split[1]);
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                store.watermark().advance(*next_ts);
                if win.measured(t) {
                    detail.puts += 1;
                }
                let after = clock::now();
                match log.flush_time(r.seq) {
                    Some(f) => {
                        complete(&mut heap, &mut seq, c, t, after.max(f), &mut detail, &mut latency, &win, &mut split[1])
                    }
                    None => waiting.push((c, r.seq, t, after)),
                }
            }
        }
    }
    clock::set_now(win.end.max(clock::now()));
    let window = window_stats(store, win.start_stats);
    detail.gc_steps = collector.steps;
    detail.blocks_reclaimed = window.blocks_reclaimed;
    detail.device_reads = window.page_reads;
    detail.mean_latency_us = latency.mean_us();
    let mean_us = |(n, sum): (u64, u64)| if n == 0 { 0.0 } else { sum as f64 / n as f64 / 1e3 };
    detail.mean_get_us = mean_us(split[0]);
    detail.mean_put_us = mean_us(split[1]);
    Ok(KvRunOutput { throughput: detail.ops as f64 / win.seconds(), latency, detail, window, trace })
}

#[derive(Debug, Clone)]
pub struct TxnRunOutput {
    /// Committed transactions per second.
    pub throughput: f64,
    pub latency: LatencyRecorder,
    pub detail: RunDetail,
    pub window: WindowStats,
    pub abort_rate: f64,
    pub commit_rate: f64,
    /// Largest timestamp issued during the run.
    pub last_ts: Timestamp,
}

struct Actor {
    txn: Txn,
    plan: TxnPlan,
    next: usize,
    arrival: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Arrival,
    Step(usize),
}

enum Done {
    Committed,
    Aborted(AbortReason),
}

/// Open-loop transactional run: Poisson arrivals at `spec.rate`, served by a
/// pool of `spec.clients`. Arrivals that find every client busy queue.
pub fn run_txn(
    store: Arc<dyn VersionedStore>,
    spec: &TxnWorkloadSpec,
    last_ts: Timestamp,
) -> anyhow::Result<TxnRunOutput> {
    anyhow::ensure!(spec.clients >= 1, "at least one client is required");
    anyhow::ensure!(spec.rate > 0.0, "offered load must be positive");
    let mgr = TxnManager::new(Arc::clone(&store), TxnConfig { clients: spec.clients, ack_interval: 1 }, last_ts);
    let mut gen = TxnGenerator::new(spec)?;
    let store = store.as_ref();
    let log = store.write_log();
    let t0 = clock::now();
    let mut win = Window::new(t0, nanos(spec.warmup), nanos(spec.duration));
    let mut heap: BinaryHeap<Reverse<(Nanos, u64, Ev)>> = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Reverse((t0, 0, Ev::Arrival)));
    let mut actors: Vec<Option<Actor>> = Vec::new();
    let mut free_slots: Vec<usize> = Vec::new();
    let mut free_clients: VecDeque<usize> = (0..spec.clients).collect();
    let mut queued: VecDeque<Nanos> = VecDeque::new();
    let mut waiting: Vec<(usize, u64, Nanos)> = Vec::new();
    let mut collector = Collector::new(t0);
    let mut latency = LatencyRecorder::default();
    let mut detail = RunDetail::default();
    let mut finished = 0u64;

    macro_rules! push {
        ($t:expr, $ev:expr) => {{
            seq += 1;
            heap.push(Reverse(($t, seq, $ev)));
        }};
    }

    // Begins a transaction for `client` at the current clock.
    let start = |client: usize,
                     arrival: Nanos,
                     gen: &mut TxnGenerator,
                     actors: &mut Vec<Option<Actor>>,
                     free_slots: &mut Vec<usize>|
     -> usize {
        let actor = Actor { txn: mgr.begin(client), plan: gen.next_plan(), next: 0, arrival };
        match free_slots.pop() {
            Some(i) => {
                actors[i] = Some(actor);
                i
            }
            None => {
                actors.push(Some(actor));
                actors.len() - 1
            }
        }
    };

    loop {
        let next = heap.peek().map(|Reverse((t, _, _))| *t);
        if let Some(d) = log.pending_deadline() {
            if next.is_none_or(|t| d <= t) && (!waiting.is_empty() || next.is_some()) {
                clock::set_now(d);
                log.flush_expired()?;
            }
        }
        let mut ended: Vec<(usize, Nanos, Done)> = Vec::new();
        let mut i = 0;
        while i < waiting.len() {
            let (a, s, after) = waiting[i];
            if let Some(f) = log.flush_time(s) {
                waiting.swap_remove(i);
                ended.push((a, after.max(f), Done::Committed));
            } else {
                i += 1;
            }
        }
        let mut event = None;
        if ended.is_empty() {
            let Some(Reverse((t, _, ev))) = heap.peek().copied() else {
                if waiting.is_empty() {
                    break;
                }
                continue;
            };
            if log.pending_deadline().is_some_and(|d| d <= t) {
                continue;
            }
            if t >= win.end {
                break;
            }
            heap.pop();
            win.observe(store, t);
            collector.poll(store, t)?;
            event = Some((t, ev));
        }
        if let Some((t, ev)) = event {
            match ev {
                Ev::Arrival => {
                    match free_clients.pop_front() {
                        Some(client) => {
                            let a = start(client, t, &mut gen, &mut actors, &mut free_slots);
                            push!(t, Ev::Step(a));
                        }
                        None => queued.push_back(t),
                    }
                    let gap = nanos(gen.next_gap()).max(1);
                    if t + gap < win.end {
                        push!(t + gap, Ev::Arrival);
                    }
                }
                Ev::Step(a) => {
                    let actor = actors[a].as_mut().expect("live actor");
                    if actor.next < actor.plan.keys.len() {
                        let key = actor.plan.keys[actor.next];
                        actor.next += 1;
                        match mgr.read(&mut actor.txn, &key) {
                            Ok(_) => push!(clock::now(), Ev::Step(a)),
                            Err(TxnError::Aborted(r)) => ended.push((a, clock::now(), Done::Aborted(r))),
                            Err(e) => return Err(e.into()),
                        }
                    } else {
                        if !actor.plan.read_only {
                            let ts_hint = actor.txn.start_ts();
                            for key in &actor.plan.keys {
                                mgr.write(&mut actor.txn, key, &value_for(spec.value_size, ts_hint))?;
                            }
                        }
                        match mgr.commit(&mut actor.txn)? {
                            Outcome::Committed(c) => match c.durable_seq {
                                None => ended.push((a, clock::now(), Done::Committed)),
                                Some(s) => match log.flush_time(s) {
                                    Some(f) => ended.push((a, clock::now().max(f), Done::Committed)),
                                    None => waiting.push((a, s, clock::now())),
                                },
                            },
                            Outcome::Aborted(r) => ended.push((a, clock::now(), Done::Aborted(r))),
                        }
                    }
                }
            }
        }
        for (a, done, how) in ended {
            let actor = actors[a].take().expect("live actor");
            free_slots.push(a);
            if win.measured(done) {
                finished += 1;
                match how {
                    Done::Committed => {
                        detail.committed += 1;
                        latency.record(done - actor.arrival);
                    }
                    Done::Aborted(AbortReason::Conflict) => detail.conflict_aborts += 1,
                    Done::Aborted(AbortReason::StaleSnapshot) => detail.stale_aborts += 1,
                    Done::Aborted(AbortReason::Capacity) => detail.capacity_aborts += 1,
                }
            }
            let client = actor.txn.client();
            match queued.pop_front() {
                Some(arrival) => {
                    clock::set_now(done);
                    let n = start(client, arrival, &mut gen, &mut actors, &mut free_slots);
                    push!(done, Ev::Step(n));
                }
                None => free_clients.push_back(client),
            }
        }
    }
    clock::set_now(win.end.max(clock::now()));
    let window = window_stats(store, win.start_stats);
    let secs = win.seconds();
    detail.ops = finished;
    detail.attempt_rate = finished as f64 / secs;
    detail.gc_steps = collector.steps;
    detail.blocks_reclaimed = window.blocks_reclaimed;
    detail.device_reads = window.page_reads;
    detail.mean_latency_us = latency.mean_us();
    let aborts = detail.conflict_aborts + detail.stale_aborts + detail.capacity_aborts;
    let (abort_rate, commit_rate) = if finished == 0 {
        (0.0, 0.0)
    } else {
        (aborts as f64 / finished as f64, detail.committed as f64 / finished as f64)
    };
    Ok(TxnRunOutput {
        throughput: detail.committed as f64 / secs,
        latency,
        detail,
        window,
        abort_rate,
        commit_rate,
        last_ts: mgr.oracle().current(),
    })
}
