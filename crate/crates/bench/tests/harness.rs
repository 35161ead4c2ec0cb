use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use flashkv::flashsim::DeviceConfig;
use flashkv::skimpy::accounted_index_bytes;
use flashkv_bench::config::parse_args;
use flashkv_bench::experiments::{kv_sweep, prepare};
use flashkv_bench::metrics::{RunMetrics, COLUMNS};
use flashkv_bench::report::{read_csv, write_csv};
use flashkv_bench::sim::{run_kv, run_txn};
use flashkv_bench::stores::{StoreKind, StoreSetup};
use flashkv_bench::workload::{KvWorkloadSpec, TxnWorkloadSpec};
use flashkv_bench::zipf::{zipf_pmf, ZipfGenerator};

fn small(kind: StoreKind) -> StoreSetup {
    let mut s = StoreSetup::new(kind, 4000);
    s.device = DeviceConfig { block_count: 96, ..Default::default() };
    s
}

fn kv_spec(get_fraction: f64) -> KvWorkloadSpec {
    KvWorkloadSpec {
        keys: 4000,
        get_fraction,
        duration: Duration::from_millis(300),
        warmup: Duration::from_millis(50),
        ..Default::default()
    }
}

fn sample_row(store: &str, put_pct: f64) -> RunMetrics {
    RunMetrics {
        store: store.into(),
        mode: "mv".into(),
        workload: "kv".into(),
        put_pct,
        offered_load: 8.0,
        keys: 200_000,
        buckets: 40_000,
        cache_pct: 10.0,
        throughput: 12345.678,
        p50_us: 50.25,
        p95_us: 300.5,
        p99_us: 1100.125,
        abort_rate: 0.0,
        commit_rate: 0.0,
        cache_hit_rate: 0.7391,
        write_amp: 1.4821,
        index_bytes: 560_000,
        seed: 3,
    }
}

#[test]
fn zero_skew_is_uniform() {
    let mut g = ZipfGenerator::new(4, 0.0, 9).unwrap();
    let mut counts = [0u32; 4];
    for _ in 0..1_000_000 {
        counts[g.sample() as usize - 1] += 1;
    }
    for c in counts {
        assert!((c as f64 / 1e6 - 0.25).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn head_ratio_follows_the_law() {
    let mut g = ZipfGenerator::new(1000, 0.99, 4).unwrap();
    let (mut one, mut two) = (0u32, 0u32);
    for _ in 0..1_000_000 {
        match g.sample() {
            1 => one += 1,
            2 => two += 1,
            _ => {}
        }
    }
    let want = zipf_pmf(1000, 0.99, 1) / zipf_pmf(1000, 0.99, 2);
    let got = one as f64 / two as f64;
    assert!((got / want - 1.0).abs() < 0.05, "ratio {got}, law {want}");
    assert!((one as f64 / 1e6 - zipf_pmf(1000, 0.99, 1)).abs() < 0.005);
}

#[test]
fn fixed_seed_repeats_the_sequence() {
    let mut a = ZipfGenerator::new(1000, 0.99, 77).unwrap();
    let mut b = ZipfGenerator::new(1000, 0.99, 77).unwrap();
    let xs: Vec<_> = (0..1000).map(|_| a.sample()).collect();
    let ys: Vec<_> = (0..1000).map(|_| b.sample()).collect();
    assert_eq!(xs, ys);
}

#[test]
fn empty_input_gives_header_only() {
    let mut buf = Vec::new();
    write_csv(&mut buf, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", COLUMNS.join(",")));
}

#[test]
fn one_run_is_one_row() {
    let mut buf = Vec::new();
    write_csv(&mut buf, &[sample_row("semel", 5.0)]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
}

#[test]
fn csv_round_trips_and_orders_rows() {
    let rows = vec![sample_row("vftl", 10.0), sample_row("semel", 25.0), sample_row("semel", 0.0)];
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).unwrap();
    let back = read_csv(buf.as_slice()).unwrap();
    let order: Vec<_> = back.iter().map(|r| (r.store.as_str(), r.put_pct)).collect();
    assert_eq!(order, vec![("semel", 0.0), ("semel", 25.0), ("vftl", 10.0)]);
    assert_eq!(back[2], rows[0]);
}

#[test]
fn command_line_overrides_config_file() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "# sweep settings\nstore = skimpy\nkeys=5000\nzipf=0.5\nprecondition=true\n").unwrap();
    let path = f.path().to_str().unwrap().to_string();
    let args = ["flashkv-bench", "--config", &path, "--keys", "7000"].map(String::from).to_vec();
    let cli = parse_args(args).unwrap();
    assert_eq!(cli.store, StoreKind::Skimpy);
    assert_eq!(cli.keys, 7000);
    assert_eq!(cli.zipf, 0.5);
    assert!(cli.precondition);
    cli.validate().unwrap();
}

#[test]
fn malformed_config_is_rejected() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "keys 5000").unwrap();
    let args = ["flashkv-bench", "--config", f.path().to_str().unwrap()].map(String::from).to_vec();
    assert!(parse_args(args).is_err());
}

#[test]
fn get_only_run_does_no_collection() {
    let setup = small(StoreKind::Skimpy);
    let spec = kv_spec(1.0);
    let mut p = prepare(&setup, spec.value_size, spec.alpha, 1).unwrap();
    let before = p.store.stats();
    let out = run_kv(p.store.as_ref(), &spec, &mut p.last_ts, false).unwrap();
    assert!(out.detail.ops > 0);
    assert_eq!(out.detail.gc_steps, 0);
    assert_eq!(p.store.stats().blocks_reclaimed, before.blocks_reclaimed);
    assert_eq!(p.store.stats().puts, before.puts);
}

#[test]
fn virtual_time_runs_are_deterministic() {
    let run = || {
        let setup = small(StoreKind::Semel);
        let spec = kv_spec(0.8);
        let mut p = prepare(&setup, spec.value_size, spec.alpha, 1).unwrap();
        let out = run_kv(p.store.as_ref(), &spec, &mut p.last_ts, true).unwrap();
        (out.detail, out.trace, out.latency.percentile_us(99.0), p.last_ts)
    };
    let (a, b) = (run(), run());
    assert!(a.1.as_ref().is_some_and(|t| !t.is_empty()));
    assert_eq!(a, b);
}

#[test]
fn open_loop_meets_offered_rate_below_saturation() {
    let setup = small(StoreKind::Semel);
    let spec = TxnWorkloadSpec {
        keys: 4000,
        rate: 4000.0,
        duration: Duration::from_secs(2),
        warmup: Duration::from_millis(200),
        ..Default::default()
    };
    let p = prepare(&setup, spec.value_size, spec.alpha_rw, 1).unwrap();
    let out = run_txn(Arc::clone(&p.store), &spec, p.last_ts).unwrap();
    let rate = out.detail.attempt_rate;
    assert!((rate / spec.rate - 1.0).abs() < 0.05, "achieved {rate}");
    assert!(out.commit_rate >= 0.9);
}

#[test]
fn one_key_per_bucket_costs_four_bytes_a_key() {
    let mut setup = StoreSetup::new(StoreKind::Skimpy, 200_000);
    setup.keys_per_bucket = 1.0;
    assert_eq!(setup.buckets(), 200_000);
    assert_eq!(accounted_index_bytes(setup.buckets() as usize, 0), 4 * 200_000);
}

#[test]
fn small_put_sweep_is_non_increasing() {
    for kind in StoreKind::ALL {
        let rows = kv_sweep(&small(kind), &kv_spec(0.9), &[0.0, 25.0]).unwrap();
        assert!(rows[0].metrics.throughput >= rows[1].metrics.throughput, "{kind:?}");
    }
}
