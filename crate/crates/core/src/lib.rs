//! Packet-level discrete-event network simulation with a multi-agent RL
//! environment built into its event loop, plus a small parallel DQN trainer.
//!
//! ```
//! use std::collections::BTreeMap;
//! use stepnet::config::EnvConfig;
//! use stepnet::env::Environment;
//! use stepnet::spaces::ActionValue;
//!
//! let mut env = Environment::initialise(&EnvConfig::cartpole()).unwrap();
//! let obs = env.reset(Some(1)).unwrap();
//! let id = obs.keys().next().unwrap().clone();
//! let result = env.step(&BTreeMap::from([(id.clone(), ActionValue::Discrete(1))])).unwrap();
//! assert_eq!(result.rewards[&id], 1.0);
//! ```

pub mod bus;
pub mod cartpole;
pub mod cc;
pub mod config;
pub mod des;
pub mod env;
pub mod netsim;
pub mod rng;
pub mod spaces;
pub mod time;
pub mod trainer;

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/dumbbell.md")]
    mod dumbbell {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
