use super::*;
use crate::store::LATEST;

fn store_with(buckets: usize, cache: usize) -> Skimpy {
    let dev = DeviceConfig { block_count: 32, ..Default::default() };
    let log = LogConfig { stripe_width: Some(1), ..Default::default() };
    let cfg = SkimpyConfig { bucket_count: buckets, cache_capacity: cache, log, ..Default::default() };
    Skimpy::open(dev, cfg).unwrap()
}

fn k(i: u64) -> Key {
    Key::from_u64(i)
}

fn raw(s: &Skimpy, loc: FlashLocation) -> KvRecord {
    s.log().read_record(loc).unwrap()
}

fn reads(s: &Skimpy) -> u64 {
    s.stats().record_reads
}

#[test]
fn zero_buckets_is_a_config_error() {
    let dev = DeviceConfig { block_count: 32, ..Default::default() };
    let cfg = SkimpyConfig { bucket_count: 0, ..Default::default() };
    assert!(matches!(Skimpy::open(dev, cfg), Err(Error::Config(_))));
}

#[test]
fn chain_walk_through_a_shared_bucket() {
    // One bucket: key 1 v1, key 2 v1, key 1 v2, key 3 v1, key 2 v2.
    let s = store_with(1, 16);
    for (key, ts) in [(1, 1), (2, 2), (1, 3), (3, 4), (2, 5)] {
        s.put(&k(key), format!("{key}@{ts}").as_bytes(), ts).unwrap();
    }
    s.clear_cache();
    let before = reads(&s);
    let loc = s.lookup_latest(&k(1)).unwrap();
    // Visits key 2 v2, key 3 v1, key 1 v2.
    assert_eq!(reads(&s) - before, 3);
    assert_eq!(raw(&s, loc).version, 3);
    assert_eq!(s.cached(&k(1)).unwrap().loc, loc);
    assert_eq!(s.skimpy_stats().chain_depth[3], 1);
}

#[test]
fn put_links_bucket_head_and_prior_version() {
    let s = store_with(1, 16);
    let k2_old = s.put(&k(2), b"k2v1", 1).unwrap().loc;
    let k3 = s.put(&k(3), b"k3v1", 2).unwrap().loc;
    let k2_new = s.put(&k(2), b"k2v2", 3).unwrap().loc;
    let rec = raw(&s, k2_new);
    assert_eq!(rec.hash_next, Link::At(k3));
    assert_eq!(rec.prior, Link::At(k2_old));
    assert_eq!(s.head(0), Link::At(k2_new));
    assert_eq!(s.cached(&k(2)).unwrap().loc, k2_new);
}

#[test]
fn cold_put_leaves_prior_unknown() {
    let s = store_with(8, 0);
    let a = s.put(&k(7), b"x", 1).unwrap().loc;
    assert_eq!(raw(&s, a).prior, Link::UnknownPrior);
    assert_eq!(raw(&s, a).hash_next, Link::Null);
}

#[test]
fn same_bucket_puts_chain_together() {
    let s = store_with(1, 0);
    let first = s.put(&k(1), b"a", 1).unwrap().loc;
    let second = s.put(&k(2), b"b", 2).unwrap().loc;
    assert_eq!(raw(&s, second).hash_next, Link::At(first));
}

#[test]
fn cache_hit_costs_one_record_read() {
    let s = store_with(1, 16);
    for i in 0..10 {
        s.put(&k(i), b"v", i + 1).unwrap();
    }
    let before = reads(&s);
    assert_eq!(s.get(&k(0), LATEST).unwrap().ts, 1);
    assert_eq!(reads(&s) - before, 1);
}

#[test]
fn repeated_lookup_hits_the_cache() {
    let s = store_with(1, 16);
    for i in 0..10 {
        s.put(&k(i), b"v", i + 1).unwrap();
    }
    s.clear_cache();
    s.lookup_latest(&k(0)).unwrap();
    let before = reads(&s);
    s.lookup_latest(&k(0)).unwrap();
    assert_eq!(reads(&s), before);
}

#[test]
fn miss_at_depth_d_reads_d_records() {
    let s = store_with(1, 16);
    let n = 12;
    for i in 0..n {
        s.put(&k(i), b"v", i + 1).unwrap();
    }
    for i in 0..n {
        s.clear_cache();
        let before = reads(&s);
        s.lookup_latest(&k(i)).unwrap();
        // Key i was the (i+1)-th put, so it sits n - i records from the head.
        assert_eq!(reads(&s) - before, n - i);
    }
}

#[test]
fn lookup_in_empty_bucket_is_not_found() {
    let s = store_with(4, 16);
    assert_eq!(s.lookup_latest(&k(1)), Err(Error::NotFound));
}

#[test]
fn snapshot_two_back_follows_prior_links() {
    let s = store_with(1, 16);
    for ts in 1..=5 {
        s.put(&k(1), b"v", ts * 10).unwrap();
        s.put(&k(2), b"w", ts * 10 + 1).unwrap();
    }
    let before = reads(&s);
    assert_eq!(s.get(&k(1), 35).unwrap().ts, 30);
    // Cache hit (1) plus two prior hops.
    assert!(reads(&s) - before <= 3);
}

#[test]
fn unknown_prior_falls_back_to_chain_scan() {
    let s = store_with(1, 0);
    s.put(&k(1), b"old", 10).unwrap();
    s.put(&k(2), b"x", 11).unwrap();
    s.put(&k(1), b"new", 12).unwrap();
    assert_eq!(s.get(&k(1), 10).unwrap().value, b"old");
    assert_eq!(s.get(&k(1), 9), Err(Error::NotFoundAtSnapshot));
    assert_eq!(s.get(&k(1), LATEST).unwrap().value, b"new");
}

#[test]
fn ordering_error_on_cached_key() {
    let s = store_with(4, 16);
    s.put(&k(1), b"a", 10).unwrap();
    assert_eq!(s.put(&k(1), b"b", 10), Err(Error::Ordering { ts: 10, latest: 10 }));
}

#[test]
fn sweep_applies_retention_and_rebuilds_in_order() {
    let s = store_with(1, 16);
    s.put(&k(0xA), b"a50", 50).unwrap();
    s.put(&k(0xB), b"b60", 60).unwrap();
    s.put(&k(0xA), b"a80", 80).unwrap();
    s.put(&k(0xA), b"a120", 120).unwrap();
    s.watermark().advance(100);
    assert_eq!(s.gc_sweep_bucket(0).unwrap(), 3);

    let mut chain = Vec::new();
    let mut cur = s.head(0);
    while let Some(loc) = cur.location() {
        let r = raw(&s, loc);
        assert_ne!(r.prior, Link::UnknownPrior);
        chain.push((r.key, r.version));
        cur = r.hash_next;
    }
    assert_eq!(chain, vec![(k(0xA), 120), (k(0xA), 80), (k(0xB), 60)]);
    assert_eq!(s.get(&k(0xA), 100).unwrap().value, b"a80");
    assert_eq!(s.get(&k(0xA), 60), Err(Error::VersionRetired));
    assert_eq!(s.get(&k(0xB), 100).unwrap().value, b"b60");
    assert_eq!(s.cached(&k(0xA)).unwrap().ts, 120);
}

#[test]
fn sweep_of_empty_bucket_is_a_no_op() {
    let s = store_with(4, 16);
    let writes = s.log().stats().user_appends + s.log().stats().relocation_appends;
    assert_eq!(s.gc_sweep_bucket(2).unwrap(), 0);
    assert_eq!(s.log().stats().relocation_appends + s.log().stats().user_appends, writes);
    assert!(s.gc_sweep_bucket(4).is_err());
}

#[test]
fn sweep_resolves_every_unknown_prior() {
    let s = store_with(2, 0);
    for ts in 1..=60u64 {
        s.put(&k(ts % 6), b"v", ts).unwrap();
    }
    assert!(s.audit().unwrap().unknown_prior_links > 0);
    s.sweep_all().unwrap();
    let audit = s.audit().unwrap();
    assert_eq!(audit.unknown_prior_links, 0);
    // Prior chains are strictly decreasing and end in a null link.
    for key in 0..6 {
        let mut loc = s.lookup_latest(&k(key)).unwrap();
        let mut last = u64::MAX;
        loop {
            let r = raw(&s, loc);
            assert!(r.version < last);
            last = r.version;
            match r.prior {
                Link::At(p) => loc = p,
                Link::Null => break,
                Link::UnknownPrior => panic!("sentinel after sweep"),
            }
        }
    }
}

#[test]
fn gc_cycle_with_nothing_below_watermark_keeps_every_version() {
    let s = store_with(16, 32);
    for ts in 1..=700u64 {
        s.put(&k(ts % 40), b"v", ts).unwrap();
    }
    assert!(s.gc_cycle().unwrap() >= 1);
    for ts in 1..=700u64 {
        assert_eq!(s.get(&k(ts % 40), ts).unwrap().ts, ts);
    }
}

#[test]
fn relocated_copies_are_settled_without_a_sweep() {
    let s = store_with(16, 1024);
    for key in 0..512u64 {
        s.put(&k(key), b"v", key + 1).unwrap();
    }
    s.sweep_all().unwrap();
    s.gc_cycle().unwrap();
    // The first block holds only the original copies.
    assert!(s.skimpy_stats().sweeps.records_settled_by_probe >= 256);
    s.audit().unwrap();
    for key in 0..512u64 {
        assert_eq!(s.get(&k(key), LATEST).unwrap().ts, key + 1);
    }
}

#[test]
fn reclaimed_blocks_are_unreachable() {
    let s = store_with(16, 32);
    s.watermark().advance(u64::MAX);
    let mut ts = 0;
    while s.stats().blocks_reclaimed < 20 {
        ts += 1;
        s.put(&k(ts % 300), b"v", ts).unwrap();
    }
    let audit = s.audit().unwrap();
    for b in &audit.reachable_blocks {
        assert!(!s.log().is_free(*b), "block {b} is free but reachable");
    }
    for key in 0..300 {
        let expect = (1..=ts).rev().find(|t| t % 300 == key).unwrap();
        assert_eq!(s.get(&k(key), LATEST).unwrap().ts, expect);
    }
}

#[test]
fn cache_never_points_at_a_stale_version() {
    let s = store_with(8, 20);
    s.watermark().advance(u64::MAX);
    let mut latest = HashMap::new();
    for ts in 1..=6000u64 {
        let key = (ts * 7919) % 97;
        s.put(&k(key), b"v", ts).unwrap();
        latest.insert(key, ts);
        let probe = (ts * 31) % 97;
        if ts % 3 == 0 && latest.contains_key(&probe) {
            assert_eq!(s.get(&k(probe), LATEST).unwrap().ts, latest[&probe]);
        }
    }
    for (key, ts) in latest {
        if let Some(c) = s.cached(&k(key)) {
            assert_eq!(c.ts, ts);
            let r = raw(&s, c.loc);
            assert_eq!((r.key, r.version), (k(key), ts));
        }
    }
}

#[test]
fn accounted_memory_arithmetic() {
    let s = store_with(1000, 200);
    assert_eq!(s.memory_usage().index_bytes, 4 * 1000 + 20 * 200);
    let full = SkimpyConfig::for_keys(20_000_000, 5.0, 0.10);
    assert_eq!((full.bucket_count, full.cache_capacity), (4_000_000, 2_000_000));
    assert_eq!(accounted_index_bytes(full.bucket_count, full.cache_capacity), 16_000_000 + 40_000_000);
}

#[test]
fn load_order_groups_buckets() {
    let s = store_with(10, 0);
    let mut keys: Vec<_> = (0..100).map(k).collect();
    s.load_order(&mut keys);
    let buckets: Vec<_> = keys.iter().map(|key| s.bucket_of(key)).collect();
    assert!(buckets.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn hash_is_seedable_and_spreads_keys() {
    let a: Vec<_> = (0..1000).map(|i| key_hash(&k(i), 1) % 100).collect();
    let b: Vec<_> = (0..1000).map(|i| key_hash(&k(i), 2) % 100).collect();
    assert_ne!(a, b);
    let mut counts = [0usize; 100];
    for x in a {
        counts[x as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0 && c < 30));
}
