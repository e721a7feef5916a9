use stepnet::trainer::{self, TrainEpisode, LOG_HEADER};

use crate::csv::CsvFile;
use crate::{CliError, Common};

pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const EPISODES_FILE: &str = "episodes.csv";

pub fn run(args: &Common) -> Result<(), CliError> {
    let mut doc = args.document()?;
    if let Some(steps) = args.steps {
        doc.trainer.total_steps = steps;
    }
    args.create_out()?;
    let mut log = CsvFile::create(&args.out.join(LOG_FILE), "train-log", 1, LOG_HEADER)?;
    let mut write_err = None;
    let outcome = trainer::train(&doc.env, &doc.trainer, None, &mut |row| {
        log::info!(
            "steps {} episodes {} mean reward {} loss {}",
            row.steps,
            row.episodes,
            row.mean_ep_reward.map_or("-".into(), |r| format!("{r:.3}")),
            row.loss.map_or("-".into(), |l| format!("{l:.4}"))
        );
        if let Err(e) = log.line(&row.to_string()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log.finish()?;
    write_episodes(args, &outcome.episodes)?;
    let path = args.out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&path)?;
    log::info!(
        "{} steps, {} episodes, {} gradient steps, {} worker faults; checkpoint at {}",
        outcome.checkpoint.steps,
        outcome.episodes.len(),
        outcome.updates,
        outcome.faults,
        path.display()
    );
    Ok(())
}

/// One row per finished episode, with the scenario's end-of-episode metrics
/// (for the dumbbell these include the sampled network parameters).
fn write_episodes(args: &Common, episodes: &[TrainEpisode]) -> Result<(), CliError> {
    let keys: Vec<String> = episodes.first().map(|e| e.record.metrics.keys().cloned().collect()).unwrap_or_default();
    let mut header = "step,worker,seed,ep_reward,ep_len".to_owned();
    for k in &keys {
        header.push(',');
        header.push_str(k);
    }
    let mut csv = CsvFile::create(&args.out.join(EPISODES_FILE), "train-episodes", 1, &header)?;
    for e in episodes {
        let r = &e.record;
        let mut row = format!("{},{},{},{},{}", e.step, r.worker, r.seed, r.reward, r.len);
        for k in &keys {
            row.push(',');
            if let Some(v) = r.metrics.get(k) {
                row.push_str(&v.to_string());
            }
        }
        csv.line(&row)?;
    }
    csv.finish()
}
