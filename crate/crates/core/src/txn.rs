//! Optimistic multi-version transactions over a [`VersionedStore`].
//!
//! Transactions read the snapshot at their start timestamp and buffer
//! writes. Read-write transactions validate at commit: if any key they read
//! or wrote has a committed version newer than their start, they abort
//! (first committer wins). Read-only transactions need no validation, since
//! a snapshot read is already serializable at its start timestamp.
//!
//! Clients report the oldest timestamp they may still read from; the
//! minimum over all clients is the watermark that bounds version retention.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::ftl::{Key, Timestamp};
use crate::store::{VersionedStore, Watermark};

/// Issues strictly increasing timestamps, starting at 1.
#[derive(Debug, Default)]
pub struct TimestampOracle {
    last: AtomicU64,
}

impl TimestampOracle {
    pub fn starting_after(ts: Timestamp) -> Self {
        TimestampOracle { last: AtomicU64::new(ts) }
    }

    pub fn next(&self) -> Timestamp {
        self.last.fetch_add(1, Ordering::AcqRel) + 1
    }

    /// The most recently issued timestamp.
    pub fn current(&self) -> Timestamp {
        self.last.load(Ordering::Acquire)
    }
}

pub type ClientId = usize;

/// Per-client acknowledged timestamps; the watermark is their minimum.
#[derive(Debug)]
pub struct WatermarkTracker {
    acks: Mutex<Vec<Timestamp>>,
    published: Watermark,
}

impl WatermarkTracker {
    /// Tracks `clients` clients, all starting at `initial`, publishing the
    /// minimum to `published`.
    pub fn new(clients: usize, initial: Timestamp, published: Watermark) -> Self {
        published.advance(if clients == 0 { 0 } else { initial });
        WatermarkTracker { acks: Mutex::new(vec![initial; clients]), published }
    }

    pub fn clients(&self) -> usize {
        self.acks.lock().len()
    }

    /// Records a client's last acknowledged timestamp. Reports must not go
    /// backwards.
    pub fn report_ack(&self, client: ClientId, ts: Timestamp) -> Result<Timestamp> {
        let mut acks = self.acks.lock();
        let prev = *acks
            .get(client)
            .ok_or_else(|| Error::Config(format!("unknown client {client}")))?;
        if ts < prev {
            return Err(Error::Ordering { ts, latest: prev });
        }
        acks[client] = ts;
        let w = acks.iter().copied().min().unwrap_or(ts);
        self.published.advance(w);
        Ok(w)
    }

    pub fn current_watermark(&self) -> Timestamp {
        self.acks.lock().iter().copied().min().unwrap_or_else(|| self.published.get())
    }

    pub fn last_ack(&self, client: ClientId) -> Option<Timestamp> {
        self.acks.lock().get(client).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortReason {
    /// A key in the read or write set was committed after the start.
    Conflict,
    /// The store could no longer serve the start snapshot.
    StaleSnapshot,
    /// The store ran out of space while applying writes.
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed(Timestamp),
    Aborted(AbortReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Committed {
    pub ts: Timestamp,
    /// Log page that must be durable before the commit is acknowledged.
    pub durable_seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Committed(Committed),
    Aborted(AbortReason),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TxnError {
    #[error("transaction aborted: {0:?}")]
    Aborted(AbortReason),
    #[error("transaction is no longer active")]
    NotActive,
    #[error(transparent)]
    Store(#[from] Error),
}

#[derive(Debug, Clone)]
pub struct Txn {
    client: ClientId,
    start_ts: Timestamp,
    /// Keys read from the store with the version observed (0 if absent).
    read_set: Vec<(Key, Timestamp)>,
    write_set: BTreeMap<Key, Vec<u8>>,
    state: TxnState,
}

impl Txn {
    pub fn client(&self) -> ClientId {
        self.client
    }

    pub fn start_ts(&self) -> Timestamp {
        self.start_ts
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn read_set(&self) -> &[(Key, Timestamp)] {
        &self.read_set
    }

    pub fn is_read_only(&self) -> bool {
        self.write_set.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxnStats {
    pub begun: u64,
    pub committed: u64,
    pub conflict_aborts: u64,
    pub stale_aborts: u64,
    pub capacity_aborts: u64,
}

impl TxnStats {
    pub fn aborted(&self) -> u64 {
        self.conflict_aborts + self.stale_aborts + self.capacity_aborts
    }
}

#[derive(Default)]
struct CommitState {
    /// Newest committed timestamp per key, pruned below the watermark.
    last_commit: HashMap<Key, Timestamp>,
    since_prune: usize,
    /// Start timestamps of running transactions, per client.
    active: Vec<BTreeMap<Timestamp, usize>>,
    finished: Vec<u64>,
    stats: TxnStats,
}

#[derive(Debug, Clone)]
pub struct TxnConfig {
    pub clients: usize,
    /// Clients report their ack after this many finished transactions.
    pub ack_interval: u64,
}

impl Default for TxnConfig {
    fn default() -> Self {
        TxnConfig { clients: 64, ack_interval: 1 }
    }
}

pub struct TxnManager {
    store: Arc<dyn VersionedStore>,
    oracle: TimestampOracle,
    tracker: WatermarkTracker,
    cfg: TxnConfig,
    /// Begin and commit are serialized so every snapshot includes all
    /// commits with smaller timestamps.
    state: Mutex<CommitState>,
}

impl TxnManager {
    /// `first_ts` is the largest timestamp already present in the store.
    pub fn new(store: Arc<dyn VersionedStore>, cfg: TxnConfig, first_ts: Timestamp) -> Self {
        let tracker = WatermarkTracker::new(cfg.clients, first_ts, store.watermark().clone());
        TxnManager {
            oracle: TimestampOracle::starting_after(first_ts),
            tracker,
            state: Mutex::new(CommitState {
                active: vec![BTreeMap::new(); cfg.clients],
                finished: vec![0; cfg.clients],
                ..Default::default()
            }),
            store,
            cfg,
        }
    }

    pub fn store(&self) -> &Arc<dyn VersionedStore> {
        &self.store
    }

    pub fn oracle(&self) -> &TimestampOracle {
        &self.oracle
    }

    pub fn tracker(&self) -> &WatermarkTracker {
        &self.tracker
    }

    pub fn current_watermark(&self) -> Timestamp {
        self.tracker.current_watermark()
    }

    pub fn stats(&self) -> TxnStats {
        self.state.lock().stats
    }

    pub fn begin(&self, client: ClientId) -> Txn {
        assert!(client < self.cfg.clients, "unknown client {client}");
        let mut st = self.state.lock();
        let start_ts = self.oracle.next();
        *st.active[client].entry(start_ts).or_insert(0) += 1;
        st.stats.begun += 1;
        Txn { client, start_ts, read_set: Vec::new(), write_set: BTreeMap::new(), state: TxnState::Active }
    }

    pub fn read(&self, txn: &mut Txn, key: &Key) -> Result<Option<Vec<u8>>, TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::NotActive);
        }
        if let Some(v) = txn.write_set.get(key) {
            return Ok(Some(v.clone()));
        }
        match self.store.get(key, txn.start_ts) {
            Ok(v) => {
                txn.read_set.push((*key, v.ts));
                Ok(Some(v.value))
            }
            Err(Error::NotFound | Error::NotFoundAtSnapshot) => {
                txn.read_set.push((*key, 0));
                Ok(None)
            }
            Err(Error::VersionRetired) => {
                self.finish(txn, TxnState::Aborted(AbortReason::StaleSnapshot));
                Err(TxnError::Aborted(AbortReason::StaleSnapshot))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn write(&self, txn: &mut Txn, key: &Key, value: &[u8]) -> Result<(), TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::NotActive);
        }
        txn.write_set.insert(*key, value.to_vec());
        Ok(())
    }

    pub fn abort(&self, txn: &mut Txn) {
        if txn.state == TxnState::Active {
            self.finish(txn, TxnState::Aborted(AbortReason::Conflict));
        }
    }

    pub fn commit(&self, txn: &mut Txn) -> Result<Outcome, TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::NotActive);
        }
        if txn.is_read_only() {
            self.finish(txn, TxnState::Committed(txn.start_ts));
            return Ok(Outcome::Committed(Committed { ts: txn.start_ts, durable_seq: None }));
        }
        let mut st = self.state.lock();
        let conflict = txn
            .read_set
            .iter()
            .map(|(k, _)| k)
            .chain(txn.write_set.keys())
            .any(|k| st.last_commit.get(k).is_some_and(|&t| t > txn.start_ts));
        if conflict {
            drop(st);
            self.finish(txn, TxnState::Aborted(AbortReason::Conflict));
            return Ok(Outcome::Aborted(AbortReason::Conflict));
        }
        let ts = self.oracle.next();
        let mut durable_seq = None;
        for (key, value) in &txn.write_set {
            match self.store.put(key, value, ts) {
                Ok(r) => durable_seq = durable_seq.max(Some(r.seq)),
                Err(Error::StoreFull) => {
                    drop(st);
                    self.finish(txn, TxnState::Aborted(AbortReason::Capacity));
                    return Ok(Outcome::Aborted(AbortReason::Capacity));
                }
                Err(e) => return Err(e.into()),
            }
            st.last_commit.insert(*key, ts);
        }
        st.since_prune += 1;
        if st.since_prune >= 4096 {
            let w = self.tracker.current_watermark();
            st.last_commit.retain(|_, t| *t >= w);
            st.since_prune = 0;
        }
        drop(st);
        self.finish(txn, TxnState::Committed(ts));
        Ok(Outcome::Committed(Committed { ts, durable_seq }))
    }

    fn finish(&self, txn: &mut Txn, state: TxnState) {
        txn.state = state;
        let client = txn.client;
        let mut st = self.state.lock();
        let slot = &mut st.active[client];
        if let Some(n) = slot.get_mut(&txn.start_ts) {
            *n -= 1;
            if *n == 0 {
                slot.remove(&txn.start_ts);
            }
        }
        match state {
            TxnState::Committed(_) => st.stats.committed += 1,
            TxnState::Aborted(AbortReason::Conflict) => st.stats.conflict_aborts += 1,
            TxnState::Aborted(AbortReason::StaleSnapshot) => st.stats.stale_aborts += 1,
            TxnState::Aborted(AbortReason::Capacity) => st.stats.capacity_aborts += 1,
            TxnState::Active => {}
        }
        st.finished[client] += 1;
        if st.finished[client] % self.cfg.ack_interval.max(1) == 0 {
            // Oldest snapshot this client may still read from.
            let ack = st.active[client].keys().next().copied().unwrap_or(self.oracle.current());
            let prev = self.tracker.last_ack(client).unwrap_or(0);
            self.tracker
                .report_ack(client, ack.max(prev))
                .expect("acks are monotonic per client");
        }
    }
}
