//! Per-step episode trace: `step,agent_id,action,reward,obs_0..obs_k,done`.

use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::env::StepResult;
use crate::spaces::{ActionValue, AgentId, Observation};

pub const EPISODE_TRACE_VERSION: u32 = 1;

/// Writes one row per agent per step boundary. The initial observations
/// returned by `reset` are step 0 with empty action and reward columns; the
/// action column of later rows is the action the agent took before the
/// boundary.
pub struct EpisodeTrace<W: Write> {
    out: W,
    obs_len: usize,
    last_action: BTreeMap<AgentId, ActionValue>,
}

impl<W: Write> EpisodeTrace<W> {
    pub fn new(mut out: W, obs_len: usize) -> io::Result<Self> {
        writeln!(out, "# stepnet episode trace v{EPISODE_TRACE_VERSION}")?;
        write!(out, "step,agent_id,action,reward")?;
        for i in 0..obs_len {
            write!(out, ",obs_{i}")?;
        }
        writeln!(out, ",done")?;
        Ok(EpisodeTrace { out, obs_len, last_action: BTreeMap::new() })
    }

    pub fn reset(&mut self, observations: &BTreeMap<AgentId, Observation>) -> io::Result<()> {
        self.last_action.clear();
        for (id, obs) in observations {
            self.row(0, id, "", "", obs, false)?;
        }
        Ok(())
    }

    pub fn actions(&mut self, actions: &BTreeMap<AgentId, ActionValue>) {
        for (id, a) in actions {
            self.last_action.insert(id.clone(), a.clone());
        }
    }

    pub fn step(&mut self, step: u64, result: &StepResult) -> io::Result<()> {
        for (id, obs) in &result.observations {
            let action = self.last_action.get(id).map(ToString::to_string).unwrap_or_default();
            let reward = result.rewards[id];
            self.row(step, id, &action, &format!("{reward:?}"), obs, result.dones[id])?;
        }
        Ok(())
    }

    fn row(
        &mut self,
        step: u64,
        id: &AgentId,
        action: &str,
        reward: &str,
        obs: &[f64],
        done: bool,
    ) -> io::Result<()> {
        debug_assert_eq!(obs.len(), self.obs_len);
        write!(self.out, "{step},{id},{action},{reward}")?;
        for x in obs {
            // Debug formatting of f64 is the shortest exact round-trip form.
            write!(self.out, ",{x:?}")?;
        }
        writeln!(self.out, ",{}", u8::from(done))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
