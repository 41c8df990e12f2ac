use popo::envs::{
    behavior_returns, collect_dataset, episode_rng, expert_action, pendulum_dynamics,
    pointmass_dynamics, BehaviorKind, BehaviorPolicy, Env, EnvKind, GOAL,
};
use proptest::prelude::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[test]
fn behavior_tiers_are_ordered() {
    for env in [EnvKind::PointMass, EnvKind::Pendulum] {
        let r = |k| behavior_returns(env, &BehaviorPolicy::new(k), 100, 0).unwrap();
        let (random, medium, expert) = (
            r(BehaviorKind::Random),
            r(BehaviorKind::Medium),
            r(BehaviorKind::Expert),
        );
        if env == EnvKind::PointMass {
            // Returns are negative: "5x better" means a 5x smaller penalty.
            assert!(
                mean(&random) <= 5.0 * mean(&expert),
                "{} vs {}",
                mean(&random),
                mean(&expert)
            );
        }
        assert!(
            median(&random) < median(&medium) && median(&medium) < median(&expert),
            "{env}"
        );
        assert!(random
            .iter()
            .chain(&medium)
            .chain(&expert)
            .all(|&g| g <= 0.0));
    }
}

#[test]
fn expert_is_silent_at_goal() {
    assert_eq!(
        expert_action(EnvKind::PointMass, &[GOAL[0], GOAL[1], 0.0, 0.0]),
        vec![0.0, 0.0]
    );
}

#[test]
fn single_transition_dataset() {
    let ds = collect_dataset(
        EnvKind::PointMass,
        &BehaviorPolicy::new(BehaviorKind::Expert),
        1,
        0,
        1,
    )
    .unwrap();
    assert_eq!(ds.len(), 1);
    assert!(collect_dataset(
        EnvKind::PointMass,
        &BehaviorPolicy::new(BehaviorKind::Expert),
        0,
        0,
        1
    )
    .is_err());
}

#[test]
fn collection_is_deterministic_and_thread_independent() {
    let p = BehaviorPolicy::new(BehaviorKind::Medium);
    let a = collect_dataset(EnvKind::Pendulum, &p, 1000, 5, 1).unwrap();
    let b = collect_dataset(EnvKind::Pendulum, &p, 1000, 5, 1).unwrap();
    let c = collect_dataset(EnvKind::Pendulum, &p, 1000, 5, 4).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.to_bytes(), c.to_bytes());
    let d = collect_dataset(EnvKind::Pendulum, &p, 1000, 6, 1).unwrap();
    assert_ne!(a.content_hash(), d.content_hash());
}

#[test]
fn manifest_matches_replay() {
    for env in [EnvKind::PointMass, EnvKind::Pendulum] {
        let policy = BehaviorPolicy::new(BehaviorKind::Medium);
        let ds = collect_dataset(env, &policy, 1000, 13, 1).unwrap();
        let mut replayed = Vec::new();
        for i in 0..ds.manifest().episode_returns.len() {
            let mut rng = episode_rng(13, i as u64);
            let mut e = Env::new(env);
            let mut obs = e.reset(&mut rng);
            let mut ret = 0.0;
            loop {
                let a = policy.act(env, &obs, &mut rng);
                let out = e.step(&a).unwrap();
                ret += out.reward;
                obs = out.obs;
                if out.done {
                    break;
                }
            }
            replayed.push(ret);
        }
        assert!((mean(&replayed) - ds.manifest().mean_return.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn expert_return_is_reproducible_from_the_log() {
    let policy = BehaviorPolicy::new(BehaviorKind::Expert);
    let ds = collect_dataset(EnvKind::PointMass, &policy, 200_000, 0, 4).unwrap();
    let logged = ds.manifest().mean_return.unwrap();
    let same_seed = mean(&behavior_returns(EnvKind::PointMass, &policy, 1000, 0).unwrap());
    assert!((same_seed - logged).abs() < 1e-9);
    let fresh = mean(&behavior_returns(EnvKind::PointMass, &policy, 1000, 1).unwrap());
    assert!(
        (fresh - logged).abs() <= 0.05 * logged.abs(),
        "{fresh} vs {logged}"
    );
}

proptest! {
    #[test]
    fn pointmass_rewards_nonpositive_and_pure(
        s in prop::array::uniform4(-3.0f64..3.0),
        a in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let (next, r) = pointmass_dynamics(&s, &a, 0.05);
        prop_assert!(r <= 0.0);
        prop_assert_eq!(pointmass_dynamics(&s, &a, 0.05), (next, r));
    }

    #[test]
    fn pendulum_rewards_nonpositive_and_speed_bounded(
        th in -10.0f64..10.0,
        thd in -8.0f64..8.0,
        u in -2.0f64..2.0,
    ) {
        let ((_, thd2), r) = pendulum_dynamics(th, thd, u, 0.05);
        prop_assert!(r <= 0.0);
        prop_assert!(thd2.abs() <= 8.0);
    }
}
