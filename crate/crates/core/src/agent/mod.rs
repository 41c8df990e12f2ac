//! The offline agent: VAE-anchored residual action generation, argmax
//! selection under the distorted critic, and the per-step update order
//! VAE → critic → actor → targets.

mod config;
mod metrics;
mod scoring;

pub use config::{TrainConfig, Variant};
pub use metrics::{mean_std, EvalReport, Metrics, CSV_HEADER};
pub use scoring::ActionCritic;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{sample_levels, QuantileCritic, TwinQCritic};
use crate::data::{Batch, Dataset};
use crate::envs::{episode_rng, Env, EnvKind};
use crate::error::{Error, Result};
use crate::nn::{read_networks, write_networks, Activation, AdamConfig, DenseNet, Optimizer, Real};
use crate::vae::{ConditionalVae, VaeLosses};

/// Stream offset separating action sampling from resets during evaluation.
const EVAL_ACTION_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone)]
pub enum Critic<T> {
    Quantile(QuantileCritic<T>),
    Twin(TwinQCritic<T>),
}

/// Update phases, in the order a training step runs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Vae,
    Critic,
    Actor,
    Targets,
}

/// `n` candidate actions for each of `rows` states, candidate-major within a
/// state: row `r * n + i` is candidate `i` of state `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates<T> {
    pub rows: usize,
    pub n: usize,
    pub actions: Vec<T>,
    /// VAE central actions `â`; empty for the state-only actor.
    pub anchors: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    /// `rows × act_dim` chosen actions.
    pub actions: Vec<T>,
    /// Central action behind each choice; empty for the state-only actor.
    pub anchors: Vec<T>,
    pub index: Vec<usize>,
    /// Best candidate score per row; empty when there was nothing to choose.
    pub scores: Vec<f64>,
    /// `k` levels per row used for scoring.
    pub levels: Vec<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    obs_dim: usize,
    act_dim: usize,
    max_action: f64,
    seed: u64,
    steps: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Agent<T> {
    config: TrainConfig,
    obs_dim: usize,
    act_dim: usize,
    max_action: f64,
    seed: u64,
    vae: Option<ConditionalVae<T>>,
    actor: DenseNet<T>,
    actor_target: DenseNet<T>,
    actor_optim: Optimizer<T>,
    critic: Critic<T>,
    rng: ChaCha8Rng,
    steps: u64,
    phases: Option<Vec<Phase>>,
}

fn concat<T: Copy>(a: &[T], wa: usize, b: &[T], wb: usize, rows: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * (wa + wb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
    out
}

fn repeat_rows<T: Copy>(x: &[T], width: usize, rows: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * n * width);
    for r in 0..rows {
        for _ in 0..n {
            out.extend_from_slice(&x[r * width..(r + 1) * width]);
        }
    }
    out
}

/// Index of the largest score in each group of `n`; ties go to the lowest index.
pub fn argmax_groups(scores: &[f64], n: usize) -> Vec<usize> {
    scores
        .chunks_exact(n)
        .map(|g| {
            let mut best = 0;
            for (i, &v) in g.iter().enumerate().skip(1) {
                if v > g[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn uniform_levels<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| rng.random::<f64>()).collect()
}

impl<T: Real> Agent<T> {
    pub fn new(
        config: TrainConfig,
        obs_dim: usize,
        act_dim: usize,
        max_action: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 || !(max_action > 0.0) {
            return Err(Error::Config(
                "dimensions and max_action must be positive".into(),
            ));
        }
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let vae = if config.variant.uses_vae() {
            Some(ConditionalVae::new(
                obs_dim,
                act_dim,
                config.vae_hidden,
                max_action,
                config.latent_clip,
                AdamConfig::with_lr(config.lr_vae),
                &mut init,
            )?)
        } else {
            None
        };
        let actor_in = if vae.is_some() {
            obs_dim + act_dim
        } else {
            obs_dim
        };
        let actor = DenseNet::mlp(
            actor_in,
            &[config.actor_hidden, config.actor_hidden],
            act_dim,
            Activation::Relu,
            Activation::Tanh,
            &mut init,
        )?;
        let critic_adam = AdamConfig::with_lr(config.lr_critic);
        let critic = if config.variant.uses_quantile_critic() {
            Critic::Quantile(QuantileCritic::new(
                obs_dim,
                act_dim,
                config.critic_hidden,
                critic_adam,
                &mut init,
            )?)
        } else {
            Critic::Twin(TwinQCritic::new(
                obs_dim,
                act_dim,
                config.critic_hidden,
                critic_adam,
                &mut init,
            )?)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            actor_optim: Optimizer::new(AdamConfig::with_lr(config.lr_actor), &[&actor]),
            actor_target: actor.clone(),
            actor,
            vae,
            critic,
            config,
            obs_dim,
            act_dim,
            max_action,
            seed,
            rng,
            steps: 0,
            phases: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn max_action(&self) -> f64 {
        self.max_action
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn vae(&self) -> Option<&ConditionalVae<T>> {
        self.vae.as_ref()
    }

    pub fn vae_mut(&mut self) -> Option<&mut ConditionalVae<T>> {
        self.vae.as_mut()
    }

    pub fn actor(&self) -> &DenseNet<T> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.actor
    }

    pub fn actor_target(&self) -> &DenseNet<T> {
        &self.actor_target
    }

    pub fn critic(&self) -> &Critic<T> {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Critic<T> {
        &mut self.critic
    }

    /// Starts recording update phases (clearing any previous record).
    pub fn record_phases(&mut self) {
        self.phases = Some(Vec::new());
    }

    pub fn phases(&self) -> &[Phase] {
        self.phases.as_deref().unwrap_or(&[])
    }

    fn mark(&mut self, p: Phase) {
        if let Some(v) = self.phases.as_mut() {
            v.push(p);
        }
    }

    fn residual_scale(&self) -> f64 {
        if self.vae.is_some() {
            self.config.xi * self.max_action
        } else {
            self.max_action
        }
    }

    fn check_obs(&self, obs: &[T], rows: usize) -> Result<()> {
        if obs.len() != rows * self.obs_dim {
            return Err(Error::Config(format!(
                "observation batch has {} values, expected {}",
                obs.len(),
                rows * self.obs_dim
            )));
        }
        Ok(())
    }

    /// Combines central actions and actor outputs: `clip(â + scale·raw)`.
    fn compose(&self, anchors: &[T], raw: &[T]) -> (Vec<T>, Vec<f64>) {
        let scale = self.residual_scale();
        let m = self.max_action;
        let pre: Vec<f64> = if anchors.is_empty() {
            raw.iter().map(|r| scale * r.f64()).collect()
        } else {
            anchors
                .iter()
                .zip(raw)
                .map(|(a, r)| a.f64() + scale * r.f64())
                .collect()
        };
        (pre.iter().map(|&v| T::of(v.clamp(-m, m))).collect(), pre)
    }

    /// `n` candidate actions per state. Latents come from `rng`; the target
    /// actor is used when `use_targets`.
    pub fn generate_actions<R: Rng + ?Sized>(
        &self,
        obs: &[T],
        rows: usize,
        n: usize,
        use_targets: bool,
        rng: &mut R,
    ) -> Result<Candidates<T>> {
        if n == 0 {
            return Err(Error::Config("candidate count must be at least 1".into()));
        }
        self.check_obs(obs, rows)?;
        let actor = if use_targets {
            &self.actor_target
        } else {
            &self.actor
        };
        let (anchors, raw) = match &self.vae {
            Some(vae) => {
                let rep = repeat_rows(obs, self.obs_dim, rows, n);
                let z = vae.sample_latent(rows * n, rng);
                let anchors = vae.decode_batch(&rep, &z, rows * n)?;
                let input = concat(&rep, self.obs_dim, &anchors, self.act_dim, rows * n);
                let raw = actor.forward_batch(&input, rows * n)?;
                (anchors, raw)
            }
            None => {
                let raw = actor.forward_batch(obs, rows)?;
                (Vec::new(), repeat_rows(&raw, self.act_dim, rows, n))
            }
        };
        let (actions, _) = self.compose(&anchors, &raw);
        Ok(Candidates {
            rows,
            n,
            actions,
            anchors,
        })
    }

    /// Levels for scoring: `K` distorted draws per row for the quantile
    /// critic, a single placeholder otherwise.
    fn scoring_levels<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> (Vec<f64>, usize) {
        match self.critic {
            Critic::Quantile(_) => {
                let k = self.config.k_quantiles;
                (sample_levels(&self.config.distortion, rows * k, rng), k)
            }
            Critic::Twin(_) => (vec![0.5; rows], 1),
        }
    }

    /// Generates candidates and keeps the best one per state under `critic`.
    /// All candidates of a state are scored at the same levels.
    pub fn select_with<C: ActionCritic<T> + ?Sized, R: Rng + ?Sized>(
        &self,
        critic: &C,
        obs: &[T],
        rows: usize,
        use_targets: bool,
        rng: &mut R,
    ) -> Result<Selection<T>> {
        let n = self.config.candidates();
        let cands = self.generate_actions(obs, rows, n, use_targets, rng)?;
        let (levels, k) = self.scoring_levels(rows, rng);
        let ad = self.act_dim;
        let (index, scores) = if n == 1 {
            (vec![0; rows], Vec::new())
        } else {
            let sa = concat(
                &repeat_rows(obs, self.obs_dim, rows, n),
                self.obs_dim,
                &cands.actions,
                ad,
                rows * n,
            );
            let all = critic.values_grouped(&sa, rows * n, &levels, k, n)?;
            let index = argmax_groups(&all, n);
            let scores = index
                .iter()
                .enumerate()
                .map(|(r, &i)| all[r * n + i])
                .collect();
            (index, scores)
        };
        let pick = |v: &[T]| -> Vec<T> {
            if v.is_empty() {
                return Vec::new();
            }
            index
                .iter()
                .enumerate()
                .flat_map(|(r, &i)| v[(r * n + i) * ad..(r * n + i + 1) * ad].iter().copied())
                .collect()
        };
        Ok(Selection {
            actions: pick(&cands.actions),
            anchors: pick(&cands.anchors),
            index,
            scores,
            levels,
            k,
        })
    }

    /// Batch selection with the agent's own online or target critic.
    pub fn select_actions<R: Rng + ?Sized>(
        &self,
        obs: &[T],
        rows: usize,
        use_targets: bool,
        rng: &mut R,
    ) -> Result<Selection<T>> {
        match (&self.critic, use_targets) {
            (Critic::Quantile(q), false) => self.select_with(&q.online, obs, rows, false, rng),
            (Critic::Quantile(q), true) => self.select_with(&q.target, obs, rows, true, rng),
            (Critic::Twin(t), false) => self.select_with(&t.q1, obs, rows, false, rng),
            (Critic::Twin(t), true) => self.select_with(&t.target1, obs, rows, true, rng),
        }
    }

    /// Greedy action for one observation.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let o: Vec<T> = obs.iter().map(|&v| T::of(v)).collect();
        let sel = self.select_actions(&o, 1, false, rng)?;
        Ok(sel.actions.iter().map(|v| v.f64()).collect())
    }

    /// The critic's value estimate for one state-action pair: `Q_β` for the
    /// quantile critic, `Q1` otherwise.
    pub fn estimate_value<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        act: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let s: Vec<T> = obs.iter().map(|&v| T::of(v)).collect();
        let a: Vec<T> = act.iter().map(|&v| T::of(v)).collect();
        match &self.critic {
            Critic::Quantile(q) => Ok(q.online.q_beta(
                &s,
                &a,
                &self.config.distortion,
                self.config.k_quantiles,
                rng,
            )?),
            Critic::Twin(t) => {
                let sa = concat(&s, self.obs_dim, &a, self.act_dim, 1);
                Ok(t.q1_values(&sa, 1)?[0].f64())
            }
        }
    }

    /// Mean selected-action value and the actor gradient of its negation,
    /// under an arbitrary critic. Gradients reach only the actor.
    pub fn actor_grads_with<C: ActionCritic<T> + ?Sized, R: Rng + ?Sized>(
        &self,
        critic: &C,
        obs: &[T],
        rows: usize,
        rng: &mut R,
    ) -> Result<(f64, Vec<T>)> {
        let sel = self.select_with(critic, obs, rows, false, rng)?;
        let input = if self.vae.is_some() {
            concat(obs, self.obs_dim, &sel.anchors, self.act_dim, rows)
        } else {
            obs.to_vec()
        };
        let trace = self.actor.forward_trace(input, rows)?;
        let (actions, pre) = self.compose(&sel.anchors, trace.output());
        let sa = concat(obs, self.obs_dim, &actions, self.act_dim, rows);
        let (values, d_sa) = critic.values_and_input_grads(&sa, rows, &sel.levels, sel.k)?;
        let objective = values.iter().sum::<f64>() / rows as f64;
        if !objective.is_finite() {
            return Err(Error::Numerical("non-finite actor objective".into()));
        }
        let w = self.obs_dim + self.act_dim;
        let scale = self.residual_scale();
        let m = self.max_action;
        let mut upstream = Vec::with_capacity(rows * self.act_dim);
        for r in 0..rows {
            for j in 0..self.act_dim {
                let inside = pre[r * self.act_dim + j].abs() < m;
                let g = if inside {
                    -d_sa[r * w + self.obs_dim + j].f64() * scale / rows as f64
                } else {
                    0.0
                };
                upstream.push(T::of(g));
            }
        }
        let mut grads = vec![T::zero(); self.actor.num_params()];
        self.actor.backward(&trace, &upstream, &mut grads, false)?;
        Ok((objective, grads))
    }

    pub fn actor_objective_and_grads<R: Rng + ?Sized>(
        &self,
        obs: &[T],
        rows: usize,
        rng: &mut R,
    ) -> Result<(f64, Vec<T>)> {
        match &self.critic {
            Critic::Quantile(q) => self.actor_grads_with(&q.online, obs, rows, rng),
            Critic::Twin(t) => self.actor_grads_with(&t.q1, obs, rows, rng),
        }
    }

    /// One Adam ascent step on the mean selected-action value; returns the
    /// pre-step objective.
    pub fn actor_update<R: Rng + ?Sized>(
        &mut self,
        obs: &[T],
        rows: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let (objective, grads) = self.actor_objective_and_grads(obs, rows, rng)?;
        self.actor_optim.step(vec![&mut self.actor], &[grads])?;
        Ok(objective)
    }

    /// Ascent step against a caller-supplied critic.
    pub fn actor_update_with<C: ActionCritic<T> + ?Sized, R: Rng + ?Sized>(
        &mut self,
        critic: &C,
        obs: &[T],
        rows: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let (objective, grads) = self.actor_grads_with(critic, obs, rows, rng)?;
        self.actor_optim.step(vec![&mut self.actor], &[grads])?;
        Ok(objective)
    }

    /// One TD regression step on the critic; returns the pre-step loss.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<f64> {
        let rows = batch.size;
        let next = self.select_actions(&batch.next_obs, rows, true, rng)?;
        let next_sa = concat(
            &batch.next_obs,
            self.obs_dim,
            &next.actions,
            self.act_dim,
            rows,
        );
        let sa = concat(&batch.obs, self.obs_dim, &batch.act, self.act_dim, rows);
        let gamma = self.config.gamma;
        let bootstrap = |r: usize| gamma * (1.0 - batch.done[r].f64());
        let cfg = &self.config;
        match &mut self.critic {
            Critic::Quantile(q) => {
                let (n, n_prime) = (cfg.n_quantiles, cfg.n_target_quantiles);
                let draw = |count: usize, rng: &mut R| {
                    if cfg.distort_td {
                        sample_levels(&cfg.distortion, count, rng)
                    } else {
                        uniform_levels(count, rng)
                    }
                };
                let target_levels = draw(rows * n_prime, rng);
                let z_next = q.target.eval(&next_sa, rows, &target_levels, n_prime)?;
                let mut targets = Vec::with_capacity(rows * n_prime);
                for r in 0..rows {
                    let (rew, b) = (batch.reward[r].f64(), bootstrap(r));
                    targets.extend(
                        z_next[r * n_prime..(r + 1) * n_prime]
                            .iter()
                            .map(|z| T::of(rew + b * z.f64())),
                    );
                }
                let levels = draw(rows * n, rng);
                Ok(q.fit(&sa, rows, &levels, n, &targets, n_prime, cfg.kappa)?)
            }
            Critic::Twin(t) => {
                let v = t.target_min(&next_sa, rows)?;
                let targets: Vec<T> = (0..rows)
                    .map(|r| T::of(batch.reward[r].f64() + bootstrap(r) * v[r].f64()))
                    .collect();
                Ok(t.fit(&sa, rows, &targets)?)
            }
        }
    }

    /// `target ← η·online + (1 − η)·target` for the critic and actor.
    pub fn soft_update(&mut self, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!(
                "soft update rate {eta} outside (0, 1]"
            )));
        }
        match &mut self.critic {
            Critic::Quantile(q) => q.soft_update(eta)?,
            Critic::Twin(t) => t.soft_update(eta)?,
        }
        self.actor_target.soft_update_from(&self.actor, eta)?;
        Ok(())
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.obs_dim() != self.obs_dim || dataset.act_dim() != self.act_dim {
            return Err(Error::Config(format!(
                "dataset has obs_dim {} / act_dim {}, agent expects {} / {}",
                dataset.obs_dim(),
                dataset.act_dim(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if dataset.len() < self.config.batch_size {
            return Err(Error::Config(format!(
                "dataset holds {} transitions, fewer than the batch size {}",
                dataset.len(),
                self.config.batch_size
            )));
        }
        Ok(())
    }

    /// One full update on a uniformly sampled mini-batch.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<Metrics> {
        self.check_dataset(dataset)?;
        let mut rng = self.rng.clone();
        let batch: Batch<T> = dataset.sample(self.config.batch_size, &mut rng)?;
        let rows = batch.size;
        let vae_losses: Option<VaeLosses> = match self.vae.as_mut() {
            Some(vae) => Some(vae.update(&batch.obs, &batch.act, rows, &mut rng)?),
            None => None,
        };
        if vae_losses.is_some() {
            self.mark(Phase::Vae);
        }
        let critic_loss = self.critic_update(&batch, &mut rng)?;
        self.mark(Phase::Critic);
        let actor_objective = self.actor_update(&batch.obs, rows, &mut rng)?;
        self.mark(Phase::Actor);
        self.soft_update(self.config.eta)?;
        self.mark(Phase::Targets);
        self.rng = rng;
        self.steps += 1;
        Ok(Metrics {
            step: self.steps,
            critic_loss,
            actor_objective,
            vae_losses,
            eval: None,
        })
    }

    /// Greedy rollouts of the frozen agent. Episode `i` resets from stream
    /// `i` of `seed` and draws its action randomness from a separate stream.
    pub fn evaluate(&self, env: EnvKind, episodes: usize, seed: u64) -> Result<EvalReport> {
        if episodes == 0 {
            return Err(Error::Config(
                "evaluation needs at least one episode".into(),
            ));
        }
        let spec = env.spec();
        if spec.obs_dim != self.obs_dim || spec.act_dim != self.act_dim {
            return Err(Error::Config(format!(
                "{} has obs_dim {} / act_dim {}, agent expects {} / {}",
                spec.env_id, spec.obs_dim, spec.act_dim, self.obs_dim, self.act_dim
            )));
        }
        let gamma = self.config.gamma;
        let mut returns = Vec::with_capacity(episodes);
        let mut mc_returns = Vec::with_capacity(episodes);
        let mut q_estimates = Vec::with_capacity(episodes);
        for i in 0..episodes as u64 {
            let mut env_rng = episode_rng(seed, i);
            let mut act_rng = episode_rng(seed, EVAL_ACTION_STREAM + i);
            let mut e = Env::new(env);
            let mut obs = e.reset(&mut env_rng);
            let (mut ret, mut disc, mut scale) = (0.0, 0.0, 1.0);
            loop {
                let act = self.select_action(&obs, &mut act_rng)?;
                if e.elapsed() == 0 {
                    q_estimates.push(self.estimate_value(&obs, &act, &mut act_rng)?);
                }
                let out = e.step(&act)?;
                ret += out.reward;
                disc += scale * out.reward;
                scale *= gamma;
                obs = out.obs;
                if out.done {
                    break;
                }
            }
            returns.push(ret);
            mc_returns.push(disc);
        }
        let (return_mean, return_std) = mean_std(&returns);
        let q_beta_mean = mean_std(&q_estimates).0;
        let mc_return = mean_std(&mc_returns).0;
        Ok(EvalReport {
            episodes,
            return_mean,
            return_std,
            returns,
            mc_returns,
            q_estimates,
            q_beta_mean,
            mc_return,
        })
    }

    /// Runs `config.max_steps` updates, evaluating every `eval_interval`
    /// steps; each metrics row is handed to `sink` as it is produced.
    pub fn train<F>(
        &mut self,
        dataset: &Dataset,
        env: EnvKind,
        eval_episodes: usize,
        eval_seed: u64,
        mut sink: F,
    ) -> Result<()>
    where
        F: FnMut(&Metrics) -> Result<()>,
    {
        while (self.steps as usize) < self.config.max_steps {
            let mut m = self.train_step(dataset)?;
            if m.step % self.config.eval_interval as u64 == 0 {
                m.eval = Some(self.evaluate(env, eval_episodes, eval_seed)?);
            }
            sink(&m)?;
        }
        Ok(())
    }

    fn named_networks(&self) -> Vec<(&'static str, &DenseNet<T>)> {
        let mut nets = vec![("actor", &self.actor), ("actor_target", &self.actor_target)];
        match &self.critic {
            Critic::Quantile(q) => {
                let names = ["z_trunk", "z_embed", "z_head"];
                let tnames = ["z_trunk_target", "z_embed_target", "z_head_target"];
                nets.extend(names.into_iter().zip(q.online.nets()));
                nets.extend(tnames.into_iter().zip(q.target.nets()));
            }
            Critic::Twin(t) => {
                nets.extend([
                    ("q1", &t.q1),
                    ("q2", &t.q2),
                    ("q1_target", &t.target1),
                    ("q2_target", &t.target2),
                ]);
            }
        }
        if let Some(v) = &self.vae {
            nets.extend([("vae_encoder", &v.encoder), ("vae_decoder", &v.decoder)]);
        }
        nets
    }

    /// Serialized networks plus the configuration; optimizer state is not kept.
    pub fn checkpoint_bytes(&self, extra: serde_json::Value) -> Vec<u8> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            max_action: self.max_action,
            seed: self.seed,
            steps: self.steps,
            extra,
        };
        write_networks(
            &self.named_networks(),
            serde_json::to_value(meta).expect("meta serializes"),
        )
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes(extra))?;
        Ok(())
    }

    /// Rebuilds an agent from [`checkpoint_bytes`](Self::checkpoint_bytes);
    /// also returns the caller's `extra` blob.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let (nets, meta) = read_networks::<T>(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let mut agent = Agent::<T>::new(
            meta.config,
            meta.obs_dim,
            meta.act_dim,
            meta.max_action,
            meta.seed,
        )?;
        let take = |name: &str, slot: &mut DenseNet<T>| -> Result<()> {
            let net = nets
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, net)| net.clone())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks network {name}")))?;
            if net.shapes() != slot.shapes() {
                return Err(Error::Config(format!(
                    "checkpoint network {name} has the wrong shape"
                )));
            }
            *slot = net;
            Ok(())
        };
        take("actor", &mut agent.actor)?;
        take("actor_target", &mut agent.actor_target)?;
        match &mut agent.critic {
            Critic::Quantile(q) => {
                for (prefix, net) in [("", &mut q.online), ("_target", &mut q.target)] {
                    let [t, e, h] = net.nets_mut();
                    take(&format!("z_trunk{prefix}"), t)?;
                    take(&format!("z_embed{prefix}"), e)?;
                    take(&format!("z_head{prefix}"), h)?;
                }
            }
            Critic::Twin(t) => {
                take("q1", &mut t.q1)?;
                take("q2", &mut t.q2)?;
                take("q1_target", &mut t.target1)?;
                take("q2_target", &mut t.target2)?;
            }
        }
        if let Some(v) = agent.vae.as_mut() {
            take("vae_encoder", &mut v.encoder)?;
            take("vae_decoder", &mut v.decoder)?;
        }
        agent.steps = meta.steps;
        Ok((agent, meta.extra))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
