use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::Value;
use stepnet::config::ScenarioKind;
use stepnet::env::trace::EpisodeTrace;
use stepnet::env::Environment;
use stepnet::netsim::dumbbell::{Dumbbell, SERIES_HEADER};
use stepnet::spaces::{ActionSpace, ActionValue, AgentId};

use crate::csv::CsvFile;
use crate::document::{ActionSource, Document};
use crate::{io_error, CliError, Common};

pub const TRACE_FILE: &str = "trace.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const EVENTS_FILE: &str = "events.csv";

type Actions = BTreeMap<AgentId, ActionValue>;

/// How a replay ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ending {
    EpisodeDone,
    ScriptExhausted,
    StepCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplayReport {
    pub steps: u64,
    pub ending: Ending,
}

fn to_action(space: &ActionSpace, value: &Value) -> Option<ActionValue> {
    match (space, value) {
        (ActionSpace::Discrete { .. }, Value::Number(n)) => n.as_u64().map(ActionValue::Discrete),
        (ActionSpace::Box { .. }, Value::Number(n)) => n.as_f64().map(ActionValue::scalar),
        (ActionSpace::Box { .. }, Value::Array(xs)) => {
            xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>().map(ActionValue::Continuous)
        }
        _ => None,
    }
}

/// Parses a JSON-lines action script. Blank lines and lines starting with
/// `#` are skipped.
pub fn parse_script(text: &str, space: &ActionSpace) -> Result<Vec<Actions>, CliError> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: String| CliError::Script(format!("script line {}: {why}", i + 1));
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(bad("expected an object of agent -> action".into()));
        };
        let mut actions = Actions::new();
        for (agent, v) in map {
            let a = to_action(space, &v).ok_or_else(|| bad(format!("{v} is not an action for agent {agent}")))?;
            actions.insert(AgentId::new(agent), a);
        }
        steps.push(actions);
    }
    Ok(steps)
}

/// Runs one episode of `doc`'s environment under its action source and
/// writes the traces into `out`.
pub fn replay(doc: &Document, out: &Path, cap: Option<u64>) -> Result<ReplayReport, CliError> {
    let mut env = Environment::initialise(&doc.env)?;
    let script = match &doc.replay.actions {
        ActionSource::Script(p) => {
            let path = doc.resolve(p);
            let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
            Some(parse_script(&text, &env.spaces().action)?)
        }
        ActionSource::Ramp(_) => {
            if doc.env.scenario != ScenarioKind::Dumbbell {
                return Err(CliError::Script("the ramp controller needs the dumbbell scenario".into()));
            }
            None
        }
    };
    if doc.replay.events {
        env.record_events();
    }
    let trace_path = out.join(TRACE_FILE);
    let file = File::create(&trace_path).map_err(io_error(&trace_path))?;
    let mut trace = EpisodeTrace::new(BufWriter::new(file), env.spaces().observation_len()).map_err(io_error(&trace_path))?;
    let mut obs = env.reset(None)?;
    trace.reset(&obs).map_err(io_error(&trace_path))?;
    let mut steps = 0u64;
    let ending = loop {
        if cap.is_some_and(|c| steps >= c) {
            break Ending::StepCap;
        }
        let actions = match (&script, &doc.replay.actions) {
            (Some(script), _) => {
                let Some(a) = script.get(steps as usize) else {
                    break Ending::ScriptExhausted;
                };
                let given: BTreeSet<&AgentId> = a.keys().collect();
                let due: BTreeSet<&AgentId> = obs.keys().collect();
                if given != due {
                    return Err(CliError::Script(format!(
                        "script step {}: actions for {:?} but agents due are {:?}",
                        steps + 1,
                        given.iter().map(|a| a.as_str()).collect::<Vec<_>>(),
                        due.iter().map(|a| a.as_str()).collect::<Vec<_>>()
                    )));
                }
                a.clone()
            }
            (None, ActionSource::Ramp(ramp)) => ramp.actions(&env, &obs),
            (None, ActionSource::Script(_)) => unreachable!(),
        };
        trace.actions(&actions);
        let result = env.step(&actions)?;
        steps += 1;
        trace.step(steps, &result).map_err(io_error(&trace_path))?;
        if result.episode_done {
            break Ending::EpisodeDone;
        }
        obs = result.observations.into_iter().filter(|(a, _)| !result.dones[a]).collect();
    };
    trace.into_inner().flush().map_err(io_error(&trace_path))?;
    if let Some(net) = env.scenario_as::<Dumbbell>() {
        if !net.series().is_empty() {
            let mut csv = CsvFile::create(&out.join(SERIES_FILE), "flow-series", 1, SERIES_HEADER)?;
            for row in net.series() {
                csv.line(&row.to_string())?;
            }
            csv.finish()?;
        }
    }
    if doc.replay.events {
        let mut csv = CsvFile::create(&out.join(EVENTS_FILE), "event-trace", 1, "t_ns,seq,target,kind")?;
        for r in env.event_trace() {
            csv.line(&r.to_string())?;
        }
        csv.finish()?;
    }
    Ok(ReplayReport { steps, ending })
}

pub fn run(args: &Common) -> Result<(), CliError> {
    let doc = args.document()?;
    args.create_out()?;
    let report = replay(&doc, &args.out, args.steps)?;
    match report.ending {
        Ending::EpisodeDone => log::info!("episode finished after {} steps", report.steps),
        Ending::ScriptExhausted => {
            log::warn!("script ran out after {} steps; the episode was truncated", report.steps)
        }
        Ending::StepCap => log::info!("stopped at the {}-step cap; the episode was truncated", report.steps),
    }
    Ok(())
}
