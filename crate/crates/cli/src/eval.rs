use std::collections::BTreeMap;

use stepnet::config::{EnvConfig, Param, ScenarioKind};
use stepnet::env::Environment;
use stepnet::netsim::dumbbell::{Dumbbell, SERIES_HEADER};
use stepnet::trainer::{evaluate_checkpoint, Controller, EvalReport, PolicyCheckpoint};

use crate::csv::CsvFile;
use crate::document::{Dimension, Sweep};
use crate::train::CHECKPOINT_FILE;
use crate::{CliError, Common};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const SWEEP_HEADER: &str = "dimension,value,seed,norm_throughput,mean_queue_delay_ms,loss_rate,ep_reward,ep_len";

/// The environment for one grid point: the document's environment with all
/// three network dimensions pinned.
pub fn grid_point(base: &EnvConfig, sweep: &Sweep, value: f64) -> EnvConfig {
    let mut cfg = base.clone();
    let f = sweep.fixed;
    let pick = |d: Dimension, fixed: f64| Param::Fixed(if sweep.dimension == d { value } else { fixed });
    cfg.dumbbell.bandwidth_mbps = pick(Dimension::Bandwidth, f.bandwidth_mbps);
    cfg.dumbbell.rtt_ms = pick(Dimension::Rtt, f.rtt_ms);
    cfg.dumbbell.buffer_pkts = pick(Dimension::Buffer, f.buffer_pkts);
    cfg
}

pub fn run(args: &Common) -> Result<(), CliError> {
    let mut doc = args.document()?;
    if args.steps.is_some() {
        doc.env.max_steps = args.steps;
    }
    let path = match &doc.eval.checkpoint {
        Some(p) => doc.resolve(p),
        None => args.out.join(CHECKPOINT_FILE),
    };
    let ckpt = PolicyCheckpoint::load(&path)?;
    args.create_out()?;
    let mut csv = CsvFile::create(&args.out.join(SWEEP_FILE), "eval-sweep", 1, SWEEP_HEADER)?;
    let seed = doc.env.seed;
    if doc.env.scenario == ScenarioKind::Dumbbell {
        for sweep in &doc.eval.sweeps {
            for &value in &sweep.grid {
                let cfg = grid_point(&doc.env, sweep, value);
                let report = evaluate_checkpoint(&ckpt, &cfg, doc.eval.episodes, seed)?;
                log::info!(
                    "{} = {value}: throughput {:.3}, loss {:.4}",
                    sweep.dimension.name(),
                    report.mean_metric("norm_throughput").unwrap_or(f64::NAN),
                    report.mean_metric("loss_rate").unwrap_or(f64::NAN)
                );
                write_rows(&mut csv, sweep.dimension.name(), value, &report)?;
            }
        }
    } else {
        // Nothing to sweep; report the configured environment as is.
        let report = evaluate_checkpoint(&ckpt, &doc.env, doc.eval.episodes, seed)?;
        log::info!("mean episode length {:.1}", report.mean_len().unwrap_or(0.0));
        write_rows(&mut csv, "none", 0.0, &report)?;
    }
    csv.finish()?;
    if doc.env.scenario == ScenarioKind::Dumbbell && doc.env.dumbbell.sample_interval_ms.is_some() {
        write_series(args, &doc.env, &mut ckpt.policy(), seed)?;
    }
    Ok(())
}

fn write_rows(csv: &mut CsvFile, dimension: &str, value: f64, report: &EvalReport) -> Result<(), CliError> {
    for e in &report.episodes {
        let m = |k: &str| e.metrics.get(k).map_or(String::new(), |v| v.to_string());
        csv.line(&format!(
            "{dimension},{value},{},{},{},{},{},{}",
            e.seed,
            m("norm_throughput"),
            m("mean_queue_delay_ms"),
            m("loss_rate"),
            e.reward,
            e.len
        ))?;
    }
    Ok(())
}

/// Runs one greedy episode on the unswept environment and writes its
/// per-flow time series.
fn write_series(args: &Common, cfg: &EnvConfig, policy: &mut dyn Controller, seed: u64) -> Result<(), CliError> {
    let mut env = Environment::initialise(cfg)?;
    let mut obs = env.reset(Some(seed))?;
    loop {
        let mut actions = BTreeMap::new();
        for (agent, o) in &obs {
            actions.insert(agent.clone(), policy.choose(agent, o)?);
        }
        let result = env.step(&actions)?;
        if result.episode_done {
            break;
        }
        obs = result.observations.into_iter().filter(|(a, _)| !result.dones[a]).collect();
    }
    let net = env.scenario_as::<Dumbbell>().expect("dumbbell scenario");
    let mut csv = CsvFile::create(&args.out.join(SERIES_FILE), "flow-series", 1, SERIES_HEADER)?;
    for row in net.series() {
        csv.line(&row.to_string())?;
    }
    csv.finish()
}
