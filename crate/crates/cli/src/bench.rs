use std::sync::Arc;
use std::time::Instant;

use stepnet::config::EnvConfig;
use stepnet::rng::RngStream;
use stepnet::trainer::rollout::{self, Consumer, Flow};
use stepnet::trainer::{ActionMap, Message, Mlp, TrainError, TrainerConfig};

use crate::csv::CsvFile;
use crate::{CliError, Common};

pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_HEADER: &str = "workers,seed,wall_ms,steps_per_sec";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    pub seed: u64,
    pub wall_ms: f64,
    pub steps_per_sec: f64,
}

/// Counts transitions and drops them: the benchmark measures collection,
/// not learning.
struct Counter(u64);

impl Consumer for Counter {
    fn consume(&mut self, message: Message) -> Result<Flow, TrainError> {
        if let Message::Transition { .. } = message {
            self.0 += 1;
        }
        Ok(Flow::Continue)
    }

    fn take_published(&mut self) -> Option<Arc<Vec<f64>>> {
        None
    }
}

/// Wall-clock time for `workers` actors to deliver `steps` transitions under
/// a freshly initialised policy.
pub fn measure(env: &EnvConfig, base: &TrainerConfig, workers: usize, seed: u64, steps: u64) -> Result<BenchRow, CliError> {
    let config = TrainerConfig { workers, seed, ..base.clone() };
    let spaces = env.factory()?.spaces();
    let mut sizes = vec![spaces.observation_len()];
    sizes.extend(&config.hidden);
    sizes.push(ActionMap::new(&spaces, config.action_grid).len());
    let net = Mlp::new(&sizes, &mut RngStream::new(seed, "q-network-init"));
    let mut counter = Counter(0);
    let t = Instant::now();
    rollout::run(env, &config, &net, steps, 0, &mut counter)?;
    let secs = t.elapsed().as_secs_f64();
    debug_assert_eq!(counter.0, steps);
    Ok(BenchRow { workers, seed, wall_ms: secs * 1e3, steps_per_sec: counter.0 as f64 / secs })
}

pub fn run(args: &Common) -> Result<(), CliError> {
    let mut doc = args.document()?;
    if let Some(steps) = args.steps {
        if steps == 0 {
            return Err(stepnet::config::ConfigError::invalid("--steps", "the step budget must be positive").into());
        }
        doc.bench.steps = steps;
    }
    args.create_out()?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if let Some(&w) = doc.bench.workers.iter().max() {
        if w > cores {
            log::warn!("{w} workers on {cores} available cores; rates will not scale");
        }
    }
    let mut csv = CsvFile::create(&args.out.join(BENCH_FILE), "bench", 1, BENCH_HEADER)?;
    for &workers in &doc.bench.workers {
        for &seed in &doc.bench.seeds {
            let row = measure(&doc.env, &doc.trainer, workers, seed, doc.bench.steps)?;
            log::info!("{workers} workers, seed {seed}: {:.0} steps/s", row.steps_per_sec);
            csv.line(&format!("{},{},{:.3},{:.1}", row.workers, row.seed, row.wall_ms, row.steps_per_sec))?;
        }
    }
    csv.finish()
}
