//! CSV output with a fixed column set and a short human summary.

use std::io::{Read, Write};

use crate::metrics::{RunMetrics, COLUMNS};

/// Writes a header and one row per run, sorted into a stable order.
pub fn write_csv<W: Write>(out: W, runs: &[RunMetrics]) -> anyhow::Result<()> {
    let mut rows = runs.to_vec();
    rows.sort_by(|a, b| {
        (&a.workload, &a.store, &a.mode, a.seed)
            .cmp(&(&b.workload, &b.store, &b.mode, b.seed))
            .then(a.put_pct.total_cmp(&b.put_pct))
            .then(a.offered_load.total_cmp(&b.offered_load))
            .then(a.buckets.cmp(&b.buckets))
    });
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> anyhow::Result<Vec<RunMetrics>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    anyhow::ensure!(header == COLUMNS, "unexpected CSV columns: {header:?}");
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// One line per run for the terminal.
pub fn summary(runs: &[RunMetrics]) -> String {
    let mut s = String::new();
    for r in runs {
        s.push_str(&format!(
            "{:<6} {:<3} {:<10} put%={:<5} load={:<8} kpb_buckets={:<8} tput={:>10.0}/s p50={:>8.1}us p99={:>9.1}us abort={:.4} hit={:.3} wa={:.2}\n",
            r.store,
            r.mode,
            r.workload,
            r.put_pct,
            r.offered_load,
            r.buckets,
            r.throughput,
            r.p50_us,
            r.p99_us,
            r.abort_rate,
            r.cache_hit_rate,
            r.write_amp
        ));
    }
    s
}
