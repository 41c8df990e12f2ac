//! Toy continuous-control environments and scripted behavior policies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DatasetBuilder, Manifest, Transition};

pub const POINTMASS_ID: &str = "pointmass-v0";
pub const PENDULUM_ID: &str = "pendulum-v0";

pub const GOAL: [f64; 2] = [0.7, 0.7];
const G: f64 = 10.0;
const MAX_SPEED: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("unknown environment {0:?} (expected pointmass-v0 or pendulum-v0)")]
    UnknownEnv(String),
    #[error("unknown behavior policy {0:?} (expected random, medium or expert)")]
    UnknownPolicy(String),
    #[error("action has {actual} components, expected {expected}")]
    ActionDim { expected: usize, actual: usize },
    #[error("observation has {actual} components, expected {expected}")]
    ObsDim { expected: usize, actual: usize },
    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },
    #[error("step called before reset or after the episode ended")]
    NotRunning,
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "pointmass-v0")]
    PointMass,
    #[serde(rename = "pendulum-v0")]
    Pendulum,
}

impl EnvKind {
    pub fn id(self) -> &'static str {
        match self {
            EnvKind::PointMass => POINTMASS_ID,
            EnvKind::Pendulum => PENDULUM_ID,
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::PointMass => EnvSpec {
                env_id: POINTMASS_ID.into(),
                obs_dim: 4,
                act_dim: 2,
                max_action: 1.0,
                episode_len: 200,
                dt: 0.05,
            },
            EnvKind::Pendulum => EnvSpec {
                env_id: PENDULUM_ID.into(),
                obs_dim: 3,
                act_dim: 1,
                max_action: 2.0,
                episode_len: 200,
                dt: 0.05,
            },
        }
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            POINTMASS_ID => Ok(EnvKind::PointMass),
            PENDULUM_ID => Ok(EnvKind::Pendulum),
            other => Err(EnvError::UnknownEnv(other.into())),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_action: f64,
    pub episode_len: usize,
    pub dt: f64,
}

/// Wraps an angle to `[−π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Pure point-mass transition on `[x, y, vx, vy]` with an in-bounds action.
pub fn pointmass_dynamics(state: &[f64; 4], action: &[f64; 2], dt: f64) -> ([f64; 4], f64) {
    let vx = state[2] + action[0] * dt;
    let vy = state[3] + action[1] * dt;
    let x = state[0] + vx * dt;
    let y = state[1] + vy * dt;
    let dist = ((x - GOAL[0]).powi(2) + (y - GOAL[1]).powi(2)).sqrt();
    let effort = action[0] * action[0] + action[1] * action[1];
    ([x, y, vx, vy], -dist - 0.1 * effort)
}

/// Pure pendulum transition on `(θ, θ̇)`; θ = 0 is upright.
pub fn pendulum_dynamics(theta: f64, theta_dot: f64, u: f64, dt: f64) -> ((f64, f64), f64) {
    let reward = -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let acc = 3.0 * G / 2.0 * theta.sin() + 3.0 * u;
    let new_dot = (theta_dot + acc * dt).clamp(-MAX_SPEED, MAX_SPEED);
    ((theta + new_dot * dt, new_dot), reward)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True when the episode ran out of time. Never a terminal state.
    pub done: bool,
}

/// A value-semantics environment instance.
#[derive(Debug, Clone)]
pub struct Env {
    kind: EnvKind,
    spec: EnvSpec,
    state: Vec<f64>,
    t: usize,
    running: bool,
    clipped_actions: u64,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        let spec = kind.spec();
        Self {
            kind,
            state: vec![0.0; if kind == EnvKind::PointMass { 4 } else { 2 }],
            spec,
            t: 0,
            running: false,
            clipped_actions: 0,
        }
    }

    pub fn from_id(env_id: &str) -> Result<Self, EnvError> {
        Ok(Self::new(env_id.parse()?))
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    /// Out-of-bounds actions seen so far (each was clipped).
    pub fn clipped_actions(&self) -> u64 {
        self.clipped_actions
    }

    /// Internal state: `[x, y, vx, vy]` or `[θ, θ̇]`.
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Places the environment in an arbitrary internal state and starts an episode.
    pub fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>, EnvError> {
        if state.len() != self.state.len() {
            return Err(EnvError::Invalid(format!(
                "state has {} components, expected {}",
                state.len(),
                self.state.len()
            )));
        }
        self.state.copy_from_slice(state);
        self.t = 0;
        self.running = true;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Vec<f64> {
        match self.kind {
            EnvKind::PointMass => self.state.clone(),
            EnvKind::Pendulum => vec![self.state[0].cos(), self.state[0].sin(), self.state[1]],
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            EnvKind::PointMass => {
                let x = rng.random_range(-1.0..=1.0);
                let y = rng.random_range(-1.0..=1.0);
                self.state = vec![x, y, 0.0, 0.0];
            }
            EnvKind::Pendulum => {
                let th = rng.random_range(-PI..=PI);
                let thd = rng.random_range(-1.0..=1.0);
                self.state = vec![th, thd];
            }
        }
        self.t = 0;
        self.running = true;
        self.observe()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        if action.len() != self.spec.act_dim {
            return Err(EnvError::ActionDim {
                expected: self.spec.act_dim,
                actual: action.len(),
            });
        }
        let m = self.spec.max_action;
        let mut a = [0.0; 2];
        for (dst, &v) in a.iter_mut().zip(action) {
            if !(v.abs() <= m) {
                self.clipped_actions += 1;
            }
            *dst = if v.is_nan() { 0.0 } else { v.clamp(-m, m) };
        }
        let dt = self.spec.dt;
        let reward = match self.kind {
            EnvKind::PointMass => {
                let s = [self.state[0], self.state[1], self.state[2], self.state[3]];
                let (next, r) = pointmass_dynamics(&s, &a, dt);
                self.state.copy_from_slice(&next);
                r
            }
            EnvKind::Pendulum => {
                let ((th, thd), r) = pendulum_dynamics(self.state[0], self.state[1], a[0], dt);
                self.state[0] = th;
                self.state[1] = thd;
                r
            }
        };
        self.t += 1;
        if !reward.is_finite() || self.state.iter().any(|v| !v.is_finite()) {
            self.running = false;
            return Err(EnvError::NonFinite { step: self.t });
        }
        let done = self.t >= self.spec.episode_len;
        if done {
            self.running = false;
        }
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorKind {
    Random,
    Medium,
    Expert,
}

impl FromStr for BehaviorKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "random" => Ok(BehaviorKind::Random),
            "medium" => Ok(BehaviorKind::Medium),
            "expert" => Ok(BehaviorKind::Expert),
            other => Err(EnvError::UnknownPolicy(other.into())),
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BehaviorKind::Random => "random",
            BehaviorKind::Medium => "medium",
            BehaviorKind::Expert => "expert",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    pub kind: BehaviorKind,
    /// Gaussian noise scale, as a fraction of `max_action`.
    pub noise: f64,
    /// Probability of replacing the action with a uniform one.
    pub random_prob: f64,
}

impl BehaviorPolicy {
    pub fn new(kind: BehaviorKind) -> Self {
        match kind {
            BehaviorKind::Random => Self {
                kind,
                noise: 0.0,
                random_prob: 1.0,
            },
            BehaviorKind::Medium => Self {
                kind,
                noise: 0.3,
                random_prob: 0.3,
            },
            BehaviorKind::Expert => Self {
                kind,
                noise: 0.0,
                random_prob: 0.0,
            },
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, env: EnvKind, obs: &[f64], rng: &mut R) -> Vec<f64> {
        scripted_policy(self, env, obs, rng)
    }
}

/// Noise-free controller for each environment.
pub fn expert_action(env: EnvKind, obs: &[f64]) -> Vec<f64> {
    let m = env.spec().max_action;
    match env {
        EnvKind::PointMass => (0..2)
            .map(|i| (-2.0 * (obs[i] - GOAL[i]) - 1.0 * obs[i + 2]).clamp(-m, m))
            .collect(),
        EnvKind::Pendulum => {
            let theta = obs[1].atan2(obs[0]);
            let thd = obs[2];
            let u = if obs[0] > 0.95 {
                -(10.0 * theta + 2.0 * thd)
            } else {
                // With u = 0 the dynamics conserve E = ½θ̇² + 15 cos θ.
                let energy = 0.5 * thd * thd + 1.5 * G * obs[0];
                let push = 1.5 * G - energy;
                let dir = if thd == 0.0 { 1.0 } else { thd.signum() };
                push.signum() * dir * m
            };
            vec![u.clamp(-m, m)]
        }
    }
}

/// Behavior action for `obs`; consumes `rng` only for the random parts.
pub fn scripted_policy<R: Rng + ?Sized>(
    policy: &BehaviorPolicy,
    env: EnvKind,
    obs: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let spec = env.spec();
    let m = spec.max_action;
    let uniform = |rng: &mut R| -> Vec<f64> {
        (0..spec.act_dim)
            .map(|_| rng.random_range(-m..=m))
            .collect()
    };
    match policy.kind {
        BehaviorKind::Random => uniform(rng),
        BehaviorKind::Expert => expert_action(env, obs),
        BehaviorKind::Medium => {
            let mut a = expert_action(env, obs);
            for v in a.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v = (*v + policy.noise * m * e).clamp(-m, m);
            }
            if rng.random::<f64>() < policy.random_prob {
                a = uniform(rng);
            }
            a
        }
    }
}

/// RNG stream for one episode of a seeded collection.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub ret: f64,
}

/// Rolls one full episode with the behavior policy.
pub fn rollout_episode(
    env: EnvKind,
    policy: &BehaviorPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Episode, EnvError> {
    let mut e = Env::new(env);
    let mut obs = e.reset(rng);
    let mut transitions = Vec::with_capacity(e.spec().episode_len);
    let mut ret = 0.0;
    loop {
        let act = policy.act(env, &obs, rng);
        let out = e.step(&act)?;
        ret += out.reward;
        transitions.push(Transition {
            obs: obs.iter().map(|&v| v as f32).collect(),
            act: act.iter().map(|&v| v as f32).collect(),
            reward: out.reward as f32,
            next_obs: out.obs.iter().map(|&v| v as f32).collect(),
            done: 0.0,
        });
        obs = out.obs;
        if out.done {
            return Ok(Episode { transitions, ret });
        }
    }
}

/// Collects `n` transitions from whole episodes, episode `i` drawing from
/// `episode_rng(seed, i)`. The result does not depend on `jobs`.
pub fn collect_dataset(
    env: EnvKind,
    policy: &BehaviorPolicy,
    n: usize,
    seed: u64,
    jobs: usize,
) -> crate::Result<Dataset> {
    if n == 0 {
        return Err(EnvError::Invalid("n must be at least 1".into()).into());
    }
    let spec = env.spec();
    let n_episodes = n.div_ceil(spec.episode_len);
    let run = |i: usize| rollout_episode(env, policy, &mut episode_rng(seed, i as u64));
    let episodes: Vec<Episode> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EnvError::Invalid(e.to_string()))?;
        pool.install(|| {
            (0..n_episodes)
                .into_par_iter()
                .map(run)
                .collect::<Result<_, _>>()
        })?
    } else {
        (0..n_episodes).map(run).collect::<Result<_, _>>()?
    };
    let mut builder = DatasetBuilder::new(
        spec.env_id.clone(),
        spec.obs_dim,
        spec.act_dim,
        spec.max_action,
    );
    for t in episodes.iter().flat_map(|e| &e.transitions).take(n) {
        builder.push(t)?;
    }
    let returns: Vec<f64> = episodes.iter().map(|e| e.ret).collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let manifest = Manifest {
        policy: Some(policy.kind.to_string()),
        seed: Some(seed),
        episode_returns: returns,
        mean_return: Some(mean),
        extra: serde_json::Map::new(),
    };
    Ok(builder.build(manifest)?)
}

/// Undiscounted returns of `episodes` seeded behavior episodes.
pub fn behavior_returns(
    env: EnvKind,
    policy: &BehaviorPolicy,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>, EnvError> {
    (0..episodes)
        .map(|i| rollout_episode(env, policy, &mut episode_rng(seed, i as u64)).map(|e| e.ret))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointmass_hand_step() {
        let mut env = Env::new(EnvKind::PointMass);
        env.set_state(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = env.step(&[1.0, 0.0]).unwrap();
        assert!((out.obs[2] - 0.05).abs() < 1e-15);
        assert!((out.obs[0] - 0.0025).abs() < 1e-15);
        let expected = -((0.0025f64 - 0.7).powi(2) + 0.49).sqrt() - 0.1;
        assert!((out.reward - expected).abs() < 1e-12);
        assert!((out.reward + 0.988183 + 0.1).abs() < 1e-6);
    }

    #[test]
    fn pointmass_goal_is_free() {
        let mut env = Env::new(EnvKind::PointMass);
        env.set_state(&[0.7, 0.7, 0.0, 0.0]).unwrap();
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward, 0.0);
        assert_eq!(
            expert_action(EnvKind::PointMass, &[0.7, 0.7, 0.0, 0.0]),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn reset_is_seeded() {
        let mut env = Env::new(EnvKind::PointMass);
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(3));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(&a[2..], &[0.0, 0.0]);
    }

    #[test]
    fn reset_positions_are_centered() {
        let mut env = Env::new(EnvKind::PointMass);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..10_000 {
            let o = env.reset(&mut rng);
            assert!(o[0].abs() <= 1.0 && o[1].abs() <= 1.0);
            assert_eq!((o[2], o[3]), (0.0, 0.0));
            sx += o[0];
            sy += o[1];
        }
        assert!((sx / 1e4).abs() < 0.05 && (sy / 1e4).abs() < 0.05);
    }

    #[test]
    fn pendulum_speed_stays_clamped() {
        let mut env = Env::new(EnvKind::Pendulum);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.reset(&mut rng);
        for _ in 0..100_000 {
            let u = rng.random_range(-2.0..=2.0);
            let out = env.step(&[u]).unwrap();
            assert!(out.obs[2].abs() <= 8.0);
            assert!(out.reward <= 0.0);
            if out.done {
                env.reset(&mut rng);
            }
        }
    }

    #[test]
    fn episodes_end_on_time_and_clip_actions() {
        let mut env = Env::new(EnvKind::PointMass);
        env.reset(&mut ChaCha8Rng::seed_from_u64(2));
        for i in 1..=200 {
            let out = env.step(&[3.0, 0.0]).unwrap();
            assert_eq!(out.done, i == 200);
        }
        assert_eq!(env.clipped_actions(), 200);
        assert_eq!(env.step(&[0.0, 0.0]), Err(EnvError::NotRunning));
    }

    #[test]
    fn action_dim_checked() {
        let mut env = Env::new(EnvKind::Pendulum);
        env.reset(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(
            env.step(&[0.0, 1.0]),
            Err(EnvError::ActionDim {
                expected: 1,
                actual: 2
            })
        );
    }

    #[test]
    fn wrap_angle_range() {
        for k in -20..20 {
            let w = wrap_angle(k as f64 * 0.77);
            assert!((-PI..PI).contains(&w));
        }
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_ids_rejected() {
        assert!(matches!(
            "cartpole".parse::<EnvKind>(),
            Err(EnvError::UnknownEnv(_))
        ));
        assert!(matches!(
            "great".parse::<BehaviorKind>(),
            Err(EnvError::UnknownPolicy(_))
        ));
    }
}
