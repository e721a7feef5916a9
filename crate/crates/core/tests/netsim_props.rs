use std::collections::BTreeMap;

use proptest::prelude::*;
use stepnet::config::{DumbbellConfig, EnvConfig, FlowSize, FlowSpec, Param};
use stepnet::env::Environment;
use stepnet::netsim::dumbbell::Dumbbell;
use stepnet::spaces::ActionValue;

fn net(env: &Environment) -> &Dumbbell {
    env.scenario_as::<Dumbbell>().unwrap()
}

fn training_ranges() -> DumbbellConfig {
    DumbbellConfig {
        bandwidth_mbps: Param::Range { low: 64.0, high: 128.0 },
        rtt_ms: Param::Range { low: 16.0, high: 64.0 },
        buffer_pkts: Param::Range { low: 80.0, high: 800.0 },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Every sampled network gets through slow start to a first step, and
    /// no packet is ever created or lost by the simulator itself.
    #[test]
    fn packets_are_conserved_under_arbitrary_control(
        seed in any::<u64>(),
        ssthresh in prop_oneof![Just(64.0), Just(1e9)],
        alphas in prop::collection::vec(-2.0f64..=2.0, 1..40),
    ) {
        let mut cfg = EnvConfig::dumbbell(training_ranges());
        cfg.agent.ssthresh_pkts = ssthresh;
        let mut env = Environment::initialise(&cfg).unwrap();
        let mut obs = env.reset(Some(seed)).unwrap();
        prop_assert!(!obs.is_empty());
        for alpha in alphas {
            let actions = obs.keys().map(|id| (id.clone(), ActionValue::scalar(alpha))).collect();
            let r = env.step(&actions).unwrap();
            let c = net(&env).conservation(env.now());
            prop_assert!(c.balances(), "{c:?}");
            for o in r.observations.values() {
                prop_assert!(o.iter().all(|x| (0.0..=1.0).contains(x)), "{o:?}");
            }
            for rew in r.rewards.values() {
                prop_assert!(*rew <= 1.0 + 1e-12, "{rew}");
            }
            if r.episode_done {
                break;
            }
            obs = r.observations;
        }
    }

    /// The window always stays within [1, cap] whatever the agent asks for.
    #[test]
    fn window_stays_in_bounds(seed in 0u64..1000, alphas in prop::collection::vec(prop_oneof![Just(-2.0), Just(2.0)], 1..30)) {
        let mut cfg = EnvConfig::dumbbell(training_ranges());
        cfg.agent.cwnd_cap_pkts = 4096.0;
        let mut env = Environment::initialise(&cfg).unwrap();
        let mut obs = env.reset(Some(seed)).unwrap();
        for alpha in alphas {
            let actions = obs.keys().map(|id| (id.clone(), ActionValue::scalar(alpha))).collect();
            let r = env.step(&actions).unwrap();
            let cwnd = net(&env).flow(0).sender().cwnd();
            prop_assert!((1.0..=4096.0).contains(&cwnd), "{cwnd}");
            if r.episode_done {
                break;
            }
            obs = r.observations;
        }
    }

    /// Finite flows finish and leave the episode; the simulator accounts
    /// for every one of their packets.
    #[test]
    fn finite_flows_complete(seed in 0u64..1000, size in 50u64..3000) {
        let mut cfg = EnvConfig::dumbbell(DumbbellConfig {
            flows: vec![FlowSpec { start_s: 0.0, size_pkts: FlowSize::Packets(size) }],
            ..training_ranges()
        });
        cfg.agent.ssthresh_pkts = 1e9;
        let mut env = Environment::initialise(&cfg).unwrap();
        let mut obs = match env.reset(Some(seed)) {
            Ok(o) => o,
            // A flow can finish inside slow start, before it ever registers.
            Err(stepnet::env::EnvError::Scenario(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let mut steps = 0;
        // A short transfer can finish while slow start's losses are repaired.
        while !env.is_episode_over() {
            let actions: BTreeMap<_, _> = obs.keys().map(|id| (id.clone(), ActionValue::scalar(0.0))).collect();
            let r = env.step(&actions).unwrap();
            steps += 1;
            prop_assert!(r.episode_done || steps < 400);
            obs = r.observations;
        }
        let n = net(&env);
        prop_assert!(n.flow(0).sender().stats.total_acked <= size);
        prop_assert!(n.conservation(env.now()).balances());
    }
}
