use std::collections::BTreeMap;

use stepnet::cartpole::AGENT_ID;
use stepnet::config::{DumbbellConfig, EnvConfig, Param};
use stepnet::env::{EnvError, Environment};
use stepnet::netsim::dumbbell::flow_agent_id;
use stepnet::spaces::{ActionValue, AgentId};

fn cart() -> AgentId {
    AgentId::new(AGENT_ID)
}

fn push(right: bool) -> BTreeMap<AgentId, ActionValue> {
    BTreeMap::from([(cart(), ActionValue::Discrete(right as u64))])
}

fn fixed_dumbbell() -> EnvConfig {
    EnvConfig::dumbbell(DumbbellConfig {
        bandwidth_mbps: Param::Fixed(100.0),
        rtt_ms: Param::Fixed(35.0),
        buffer_pkts: Param::Fixed(440.0),
        ..Default::default()
    })
}

#[test]
fn step_before_reset_is_refused() {
    let mut env = Environment::initialise(&EnvConfig::cartpole()).unwrap();
    assert!(matches!(env.step(&push(true)), Err(EnvError::NotReset)));
}

#[test]
fn finished_episodes_need_a_reset() {
    let mut env = Environment::initialise(&EnvConfig::cartpole()).unwrap();
    env.reset(Some(3)).unwrap();
    // Pushing one way topples the pole quickly.
    let mut steps = 0;
    while !env.step(&push(true)).unwrap().episode_done {
        steps += 1;
        assert!(steps < 500);
    }
    assert!(env.is_episode_over());
    assert!(matches!(env.step(&push(true)), Err(EnvError::EpisodeOver)));
    env.reset(None).unwrap();
    env.step(&push(false)).unwrap();
}

#[test]
fn actions_must_cover_exactly_the_due_agents() {
    let mut env = Environment::initialise(&EnvConfig::cartpole()).unwrap();
    env.reset(Some(1)).unwrap();
    assert!(matches!(env.step(&BTreeMap::new()), Err(EnvError::MissingAction(_))));

    let mut extra = push(true);
    extra.insert(AgentId::new("ghost"), ActionValue::Discrete(0));
    assert!(matches!(env.step(&extra), Err(EnvError::UnknownAgent(_))));

    let bad = BTreeMap::from([(cart(), ActionValue::Discrete(2))]);
    assert!(matches!(env.step(&bad), Err(EnvError::InvalidAction { .. })));

    // Rejected actions leave the episode where it was.
    assert_eq!(env.steps(), 0);
    env.step(&push(true)).unwrap();
}

#[test]
fn same_seed_same_episode() {
    let run = |seed| {
        let mut env = Environment::initialise(&EnvConfig::cartpole()).unwrap();
        let mut trail = vec![env.reset(Some(seed)).unwrap()];
        for i in 0..20 {
            let r = env.step(&push(i % 3 == 0)).unwrap();
            trail.push(r.observations);
            if r.episode_done {
                break;
            }
        }
        trail
    };
    assert_eq!(run(8), run(8));
    assert_ne!(run(8), run(9));
}

#[test]
fn unseeded_resets_derive_fresh_seeds_reproducibly() {
    let seeds = || {
        let mut env = Environment::initialise(&EnvConfig { seed: 4, ..EnvConfig::cartpole() }).unwrap();
        (0..4)
            .map(|_| {
                env.reset(None).unwrap();
                env.seed()
            })
            .collect::<Vec<_>>()
    };
    let a = seeds();
    assert_eq!(a[0], 4);
    assert_eq!(a, seeds());
    let distinct: std::collections::BTreeSet<_> = a.iter().collect();
    assert_eq!(distinct.len(), 4);
}

#[test]
fn step_cap_ends_the_episode() {
    let mut env = Environment::initialise(&EnvConfig { max_steps: Some(5), ..EnvConfig::cartpole() }).unwrap();
    env.reset(Some(0)).unwrap();
    let mut flags = Vec::new();
    for i in 0..5 {
        flags.push(env.step(&push(i % 2 == 0)).unwrap().episode_done);
    }
    assert_eq!(flags, [false, false, false, false, true]);
}

#[test]
fn dumbbell_time_advances_by_steps_of_two_min_rtts() {
    let mut env = Environment::initialise(&fixed_dumbbell()).unwrap();
    let obs = env.reset(Some(1)).unwrap();
    let id = flow_agent_id(0);
    assert_eq!(obs.keys().collect::<Vec<_>>(), [&id]);
    let mut last = env.now();
    for _ in 0..10 {
        let r = env.step(&BTreeMap::from([(id.clone(), ActionValue::scalar(0.0))])).unwrap();
        let span = (r.time - last).as_secs_f64();
        // The minimum RTT is the 35 ms propagation delay plus serialisation.
        assert!((0.0702..0.0704).contains(&span), "{span}");
        last = r.time;
        let o = &r.observations[&id];
        assert!(o.iter().all(|x| (0.0..=1.0).contains(x)), "{o:?}");
    }
}

#[test]
fn out_of_range_window_exponents_are_refused() {
    let mut env = Environment::initialise(&fixed_dumbbell()).unwrap();
    env.reset(Some(1)).unwrap();
    let a = BTreeMap::from([(flow_agent_id(0), ActionValue::scalar(2.5))]);
    assert!(matches!(env.step(&a), Err(EnvError::InvalidAction { .. })));
}

#[test]
fn event_traces_record_every_dispatch() {
    let mut env = Environment::initialise(&EnvConfig::cartpole()).unwrap();
    env.record_events();
    env.reset(Some(2)).unwrap();
    env.step(&push(true)).unwrap();
    let trace = env.event_trace();
    assert!(!trace.is_empty());
    assert!(trace.windows(2).all(|w| (w[0].time, w[0].seq) < (w[1].time, w[1].seq)));
}
