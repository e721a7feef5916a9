//! A scripted reference controller for the dumbbell: every active flow
//! walks its window towards an equal share of the path's BDP.
//!
//! It reads the network from the scenario rather than from observations, so
//! it is a test fixture and plotting aid, not a learnable policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::netsim::dumbbell::{alpha_towards, Dumbbell};
use crate::spaces::{ActionValue, AgentId, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairShareRamp {
    /// Largest |alpha| applied in one step.
    pub max_alpha: f64,
    /// Target window as a multiple of the fair share of the BDP; a little
    /// above 1 keeps the bottleneck busy.
    pub headroom: f64,
}

impl Default for FairShareRamp {
    fn default() -> Self {
        FairShareRamp { max_alpha: 0.25, headroom: 1.1 }
    }
}

impl FairShareRamp {
    /// Actions for the agents in `due`. Empty when the environment is not
    /// running a dumbbell.
    pub fn actions(
        &self,
        env: &Environment,
        due: &BTreeMap<AgentId, Observation>,
    ) -> BTreeMap<AgentId, ActionValue> {
        let Some(net) = env.scenario_as::<Dumbbell>() else {
            return BTreeMap::new();
        };
        let active = net
            .flows()
            .iter()
            .filter(|f| f.is_registered() && f.done_reason().is_none() && !f.sender().is_completed())
            .count()
            .max(1);
        let target = self.headroom * net.params().bdp_packets() / active as f64;
        net.flows()
            .iter()
            .filter(|f| due.contains_key(f.id()))
            .map(|f| {
                let alpha = alpha_towards(f.sender().cwnd(), target, self.max_alpha);
                (f.id().clone(), ActionValue::scalar(alpha))
            })
            .collect()
    }
}
