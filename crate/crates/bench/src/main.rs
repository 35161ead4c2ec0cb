use std::fs::File;
use std::io::Write;
use std::sync::Arc;

use flashkv::clock::{self, TimeMode};
use flashkv_bench::config::{parse_args, Cli, Experiment, Mode};
use flashkv_bench::experiments::{self, kv_metrics, txn_metrics};
use flashkv_bench::metrics::RunMetrics;
use flashkv_bench::stores::StoreSetup;
use flashkv_bench::{realtime, report, sim};

fn single_run(cli: &Cli) -> anyhow::Result<Vec<RunMetrics>> {
    let setup = cli.setup();
    clock::set_now(0);
    let store = setup.build()?;
    let mut last_ts = if cli.precondition {
        let alpha = if cli.mode == Mode::Txn { cli.zipf_rw } else { cli.zipf };
        let stages = experiments::steady_state_stages(&setup, alpha);
        sim::precondition(store.as_ref(), cli.keys, cli.value_size, cli.seed, &stages)?.last_ts
    } else {
        sim::load_keys(store.as_ref(), cli.keys, cli.value_size)?
    };
    let virtual_time = cli.time == TimeMode::Virtual;
    let row = match cli.mode {
        Mode::Kv => {
            let spec = cli.kv_spec();
            let out = if virtual_time {
                sim::run_kv(store.as_ref(), &spec, &mut last_ts, false)?
            } else {
                realtime::run_kv(Arc::clone(&store), &spec, &mut last_ts)?
            };
            kv_metrics(&setup, &spec, store.as_ref(), &out)
        }
        Mode::Txn => {
            let spec = cli.txn_spec();
            let out = if virtual_time {
                sim::run_txn(Arc::clone(&store), &spec, last_ts)?
            } else {
                realtime::run_txn(Arc::clone(&store), &spec, last_ts)?
            };
            txn_metrics(&setup, &spec, store.as_ref(), &out)
        }
    };
    Ok(vec![row.metrics])
}

fn sweep(cli: &Cli) -> anyhow::Result<Vec<RunMetrics>> {
    let mut setup: StoreSetup = cli.setup();
    setup.device.time_mode = TimeMode::Virtual;
    let results = match cli.experiment {
        Experiment::Run => unreachable!("handled by single_run"),
        Experiment::Fig1 => experiments::fig1(&setup, &cli.txn_spec(), &cli.loads)?,
        Experiment::Fig4 => {
            let kpb = [1.0, 2.0, 5.0, 10.0, 32.0];
            experiments::fig4(&setup, &cli.kv_spec(), &kpb, 10.0)?
        }
        Experiment::Fig5 => experiments::fig5(&setup, &cli.kv_spec(), &cli.put_pcts)?,
        Experiment::Fig6 => experiments::fig6(&setup, &cli.txn_spec(), &cli.loads)?,
    };
    Ok(results.into_iter().map(|r| r.metrics).collect())
}

fn main() -> anyhow::Result<()> {
    let cli = match parse_args(std::env::args().collect()) {
        Ok(cli) => cli,
        // Help, version and usage errors print through clap.
        Err(e) => match e.downcast::<clap::Error>() {
            Ok(e) => e.exit(),
            Err(e) => return Err(e),
        },
    };
    cli.validate()?;
    let rows = match cli.experiment {
        Experiment::Run => single_run(&cli)?,
        _ => sweep(&cli)?,
    };
    match &cli.out {
        Some(path) => report::write_csv(File::create(path)?, &rows)?,
        None => report::write_csv(std::io::stdout().lock(), &rows)?,
    }
    let mut err = std::io::stderr().lock();
    write!(err, "{}", report::summary(&rows))?;
    Ok(())
}
