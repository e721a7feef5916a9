//! CartPole balancing as a simulation component.
//!
//! Dynamics and constants follow the classic-control benchmark (explicit
//! Euler, 20 ms per step). The transition runs when the action arrives and
//! the next STEP is requested one integration step later, so stepping
//! through the event kernel changes nothing about the numbers.

use std::any::Any;

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::des::{ComponentId, Control};
use crate::env::{EnvError, RlAgent, Scenario, ScenarioFactory, SimContext, SimEvent};
use crate::rng::RngStream;
use crate::spaces::{ActionSpace, ActionValue, AgentId, Bounds, Observation, SpaceDescriptor};
use crate::time::SimTime;

pub const AGENT_ID: &str = "cartpole";
pub const COMPONENT: ComponentId = ComponentId(2);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole's length.
    pub half_length: f64,
    pub force: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
        }
    }
}

/// `[x, x_dot, theta, theta_dot]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleState(pub [f64; 4]);

impl CartPoleState {
    pub fn is_live(&self, p: &CartPoleParams) -> bool {
        let [x, _, theta, _] = self.0;
        (-p.x_threshold..=p.x_threshold).contains(&x)
            && (-p.theta_threshold..=p.theta_threshold).contains(&theta)
    }
}

/// One integration step; `push_right` selects the force direction.
pub fn transition(s: CartPoleState, push_right: bool, p: &CartPoleParams) -> CartPoleState {
    let [x, x_dot, theta, theta_dot] = s.0;
    let force = if push_right { p.force } else { -p.force };
    let total_mass = p.cart_mass + p.pole_mass;
    let polemass_length = p.pole_mass * p.half_length;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
    CartPoleState([
        x + p.tau * x_dot,
        x_dot + p.tau * x_acc,
        theta + p.tau * theta_dot,
        theta_dot + p.tau * theta_acc,
    ])
}

pub fn reset_state(rng: &mut RngStream) -> CartPoleState {
    CartPoleState(std::array::from_fn(|_| rng.uniform(-0.05, 0.05)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleConfig {
    pub max_episode_steps: u64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig { max_episode_steps: 500 }
    }
}

impl CartPoleConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_episode_steps == 0 {
            return Err(ConfigError::invalid("cartpole.max_episode_steps", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn spaces() -> SpaceDescriptor {
    let p = CartPoleParams::default();
    SpaceDescriptor {
        observation: vec![
            Bounds::new(-2.0 * p.x_threshold, 2.0 * p.x_threshold),
            Bounds::new(-f64::MAX, f64::MAX),
            Bounds::new(-2.0 * p.theta_threshold, 2.0 * p.theta_threshold),
            Bounds::new(-f64::MAX, f64::MAX),
        ],
        action: ActionSpace::Discrete { n: 2 },
    }
}

#[derive(Debug)]
pub struct CartPole {
    params: CartPoleParams,
    state: CartPoleState,
    steps: u64,
    max_steps: u64,
    id: AgentId,
    tick: SimTime,
}

impl CartPole {
    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn terminated(&self) -> bool {
        !self.state.is_live(&self.params)
    }
}

impl RlAgent for CartPole {
    fn get_obs(&self) -> Observation {
        self.state.0.to_vec()
    }

    fn get_reward(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            1.0
        }
    }

    fn get_done(&self) -> bool {
        self.terminated() || self.steps >= self.max_steps
    }

    fn set_action(&mut self, action: &ActionValue, ctx: &mut SimContext<'_>) -> Result<(), EnvError> {
        let push_right = match action {
            ActionValue::Discrete(i) => *i == 1,
            ActionValue::Continuous(_) => {
                return Err(EnvError::Scenario("cartpole takes a discrete action".into()))
            }
        };
        self.state = transition(self.state, push_right, &self.params);
        self.steps += 1;
        ctx.set_next_step(&self.id, self.tick)
    }
}

impl Scenario for CartPole {
    fn handle_event(&mut self, _ev: SimEvent, _ctx: &mut SimContext<'_>) -> Result<Control, EnvError> {
        // The only events are STEPs, which the platform consumes.
        Ok(Control::Continue)
    }

    fn agent_mut(&mut self, id: &AgentId) -> Option<&mut dyn RlAgent> {
        (*id == self.id).then_some(self as &mut dyn RlAgent)
    }

    fn metrics(&mut self, _now: SimTime) -> std::collections::BTreeMap<String, f64> {
        [("ep_len".to_owned(), self.steps as f64)].into()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Clone, Debug)]
pub struct CartPoleFactory {
    config: CartPoleConfig,
}

impl CartPoleFactory {
    pub fn new(config: CartPoleConfig) -> Self {
        CartPoleFactory { config }
    }
}

impl ScenarioFactory for CartPoleFactory {
    fn spaces(&self) -> SpaceDescriptor {
        spaces()
    }

    fn build(&self, ctx: &mut SimContext<'_>) -> Result<Box<dyn Scenario>, EnvError> {
        let params = CartPoleParams::default();
        let tick = SimTime::from_secs_f64(params.tau).expect("positive tau");
        let pole = CartPole {
            params,
            state: reset_state(&mut ctx.rng("cartpole-init")),
            steps: 0,
            max_steps: self.config.max_episode_steps,
            id: AgentId::new(AGENT_ID),
            tick,
        };
        ctx.register_agent(pole.id.clone(), COMPONENT)?;
        ctx.set_next_step(&pole.id, tick)?;
        Ok(Box::new(pole))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_pushes_give_mirrored_states() {
        let p = CartPoleParams::default();
        let l = transition(CartPoleState([0.0; 4]), false, &p);
        let r = transition(CartPoleState([0.0; 4]), true, &p);
        for i in 0..4 {
            assert_eq!(l.0[i], -r.0[i]);
        }
        assert!(r.0[1] > 0.0 && r.0[3] < 0.0);
    }

    #[test]
    fn angle_limit_is_twelve_degrees() {
        let p = CartPoleParams::default();
        assert!(CartPoleState([0.0, 0.0, 0.2094, 0.0]).is_live(&p));
        assert!(!CartPoleState([0.0, 0.0, 0.2095, 0.0]).is_live(&p));
        assert!(!CartPoleState([2.41, 0.0, 0.0, 0.0]).is_live(&p));
    }

    #[test]
    fn reset_state_is_small_and_seeded() {
        let a = reset_state(&mut RngStream::new(7, "cartpole-init"));
        let b = reset_state(&mut RngStream::new(7, "cartpole-init"));
        assert_eq!(a, b);
        assert!(a.0.iter().all(|x| x.abs() <= 0.05));
    }
}
