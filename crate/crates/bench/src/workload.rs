//! Request generators for the key-value microbenchmark and the
//! transactional workload.

use std::time::Duration;

use flashkv::ftl::Key;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::zipf::ZipfGenerator;

/// Largest value that still packs into one 512-byte record slot.
pub const PACKED_VALUE_SIZE: usize = 474;

/// Key for a popularity rank (rank 1 is the hottest). Ranks are scrambled
/// so that popularity is unrelated to key order.
pub fn key_of(rank: u64) -> Key {
    let mut h = rank;
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    Key::from_u64(h)
}

#[derive(Debug, Clone)]
pub struct KvWorkloadSpec {
    pub keys: u64,
    pub value_size: usize,
    pub get_fraction: f64,
    pub alpha: f64,
    /// Closed-loop clients, each with one request outstanding.
    pub clients: usize,
    pub duration: Duration,
    /// Unmeasured run time before `duration` starts.
    pub warmup: Duration,
    pub seed: u64,
}

impl Default for KvWorkloadSpec {
    fn default() -> Self {
        KvWorkloadSpec {
            keys: 200_000,
            value_size: PACKED_VALUE_SIZE,
            get_fraction: 0.9,
            alpha: 0.99,
            clients: 8,
            duration: Duration::from_secs(1),
            warmup: Duration::from_millis(200),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvOp {
    Get(Key),
    Put(Key),
}

#[derive(Debug, Clone)]
pub struct KvGenerator {
    zipf: ZipfGenerator,
    mix: ChaCha8Rng,
    get_fraction: f64,
}

impl KvGenerator {
    pub fn new(spec: &KvWorkloadSpec) -> anyhow::Result<Self> {
        anyhow::ensure!((0.0..=1.0).contains(&spec.get_fraction), "get fraction out of range");
        Ok(KvGenerator {
            zipf: ZipfGenerator::new(spec.keys, spec.alpha, spec.seed)?,
            mix: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6b76_6d69_78),
            get_fraction: spec.get_fraction,
        })
    }

    pub fn next_op(&mut self) -> KvOp {
        let key = key_of(self.zipf.sample());
        if self.mix.random::<f64>() < self.get_fraction {
            KvOp::Get(key)
        } else {
            KvOp::Put(key)
        }
    }

    pub fn next_key(&mut self) -> Key {
        key_of(self.zipf.sample())
    }
}

#[derive(Debug, Clone)]
pub struct TxnWorkloadSpec {
    pub keys: u64,
    pub value_size: usize,
    pub read_only_fraction: f64,
    pub alpha_r: f64,
    pub alpha_rw: f64,
    /// Inclusive range of keys accessed by a read-only transaction.
    pub read_only_keys: (usize, usize),
    /// Inclusive range of keys accessed by a read-write transaction.
    pub read_write_keys: (usize, usize),
    /// Clients available to run transactions; arrivals queue when all are busy.
    pub clients: usize,
    /// Offered load in transactions per second.
    pub rate: f64,
    pub duration: Duration,
    pub warmup: Duration,
    pub seed: u64,
}

impl Default for TxnWorkloadSpec {
    fn default() -> Self {
        TxnWorkloadSpec {
            keys: 200_000,
            value_size: PACKED_VALUE_SIZE,
            read_only_fraction: 0.9,
            alpha_r: 0.99,
            alpha_rw: 0.75,
            read_only_keys: (1, 10),
            read_write_keys: (1, 5),
            clients: 64,
            rate: 10_000.0,
            duration: Duration::from_millis(500),
            warmup: Duration::from_millis(100),
            seed: 1,
        }
    }
}

/// Keys a transaction touches. A read-write transaction reads each key and
/// writes it back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnPlan {
    pub read_only: bool,
    pub keys: Vec<Key>,
}

#[derive(Debug, Clone)]
pub struct TxnGenerator {
    read: ZipfGenerator,
    write: ZipfGenerator,
    rng: ChaCha8Rng,
    spec: TxnWorkloadSpec,
}

impl TxnGenerator {
    pub fn new(spec: &TxnWorkloadSpec) -> anyhow::Result<Self> {
        let (lo, hi) = spec.read_only_keys;
        anyhow::ensure!(lo >= 1 && lo <= hi, "bad read-only key range");
        let (lo, hi) = spec.read_write_keys;
        anyhow::ensure!(lo >= 1 && lo <= hi, "bad read-write key range");
        anyhow::ensure!(
            spec.read_only_keys.1.max(spec.read_write_keys.1) as u64 <= spec.keys,
            "transactions touch more keys than exist"
        );
        Ok(TxnGenerator {
            read: ZipfGenerator::new(spec.keys, spec.alpha_r, spec.seed)?,
            write: ZipfGenerator::new(spec.keys, spec.alpha_rw, spec.seed ^ 0x7277)?,
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7478_6e),
            spec: spec.clone(),
        })
    }

    pub fn next_plan(&mut self) -> TxnPlan {
        let read_only = self.rng.random::<f64>() < self.spec.read_only_fraction;
        let ((lo, hi), zipf) = if read_only {
            (self.spec.read_only_keys, &mut self.read)
        } else {
            (self.spec.read_write_keys, &mut self.write)
        };
        let n = self.rng.random_range(lo..=hi);
        let mut keys = Vec::with_capacity(n);
        while keys.len() < n {
            let k = key_of(zipf.sample());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        TxnPlan { read_only, keys }
    }

    /// Gap to the next Poisson arrival at the offered rate.
    pub fn next_gap(&mut self) -> Duration {
        let u: f64 = self.rng.random::<f64>();
        Duration::from_secs_f64(-(1.0 - u).ln() / self.spec.rate)
    }
}

/// Deterministic value bytes for a write.
pub fn value_for(size: usize, ts: u64) -> Vec<u8> {
    vec![(ts % 251) as u8; size]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_mix_matches_get_fraction() {
        let spec = KvWorkloadSpec { keys: 1000, get_fraction: 0.75, ..Default::default() };
        let mut g = KvGenerator::new(&spec).unwrap();
        let gets = (0..100_000).filter(|_| matches!(g.next_op(), KvOp::Get(_))).count();
        assert!((gets as f64 / 100_000.0 - 0.75).abs() < 0.01);
    }

    #[test]
    fn txn_plans_respect_ranges() {
        let spec = TxnWorkloadSpec { keys: 1000, ..Default::default() };
        let mut g = TxnGenerator::new(&spec).unwrap();
        let mut ro = 0;
        for _ in 0..10_000 {
            let p = g.next_plan();
            let (lo, hi) = if p.read_only { (1, 10) } else { (1, 5) };
            assert!((lo..=hi).contains(&p.keys.len()));
            let mut d = p.keys.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), p.keys.len());
            ro += p.read_only as usize;
        }
        assert!((ro as f64 / 10_000.0 - 0.9).abs() < 0.02);
    }

    #[test]
    fn arrival_gaps_average_to_the_rate() {
        let spec = TxnWorkloadSpec { keys: 100, rate: 5000.0, ..Default::default() };
        let mut g = TxnGenerator::new(&spec).unwrap();
        let total: f64 = (0..50_000).map(|_| g.next_gap().as_secs_f64()).sum();
        assert!((50_000.0 / total - 5000.0).abs() < 100.0);
    }
}
