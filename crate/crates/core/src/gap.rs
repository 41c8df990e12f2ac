//! Exact estimation-gap analysis on finite MDPs.
//!
//! The gap between the true value `V^π` and the value `V^π_D` computed under
//! the count-based dataset model `p_D` is obtained two ways: directly as the
//! difference of two policy evaluations, and as the solution of the
//! Bellman-like recursion
//!
//! ```text
//! δ(s) = Σ_a π(a|s) Σ_{s',r} [p − p_D](s',r|s,a) (r + γ V_D(s'))
//!      + γ Σ_a π(a|s) Σ_{s',r} p(s',r|s,a) δ(s')
//! ```
//!
//! Both are nonsingular linear systems for `γ < 1`, solved with partially
//! pivoted Gaussian elimination.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GapError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("transition {index}: {reason}")]
    BadTransition { index: usize, reason: String },
    #[error("reward {reward} (transition {index}) is not in the declared support")]
    RewardNotInSupport { index: usize, reward: f64 },
    #[error("state-action pairs needed by the policy have no data: {pairs:?}")]
    Uncovered { pairs: Vec<(usize, usize)> },
    #[error("absorbing uncovered pairs needs reward 0 in the support")]
    NoZeroReward,
    #[error("linear system is singular")]
    Singular,
}

/// Finite MDP with a joint next-state/reward kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    pub reward_support: Vec<f64>,
    /// `p[s][a][s'][r]`
    pub p: Vec<Vec<Vec<Vec<f64>>>>,
    pub rho0: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<(), GapError> {
        let bad = |m: String| Err(GapError::InvalidMdp(m));
        if self.states == 0 || self.actions == 0 {
            return bad("S and A must be positive".into());
        }
        if self.reward_support.is_empty() {
            return bad("reward_support is empty".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.rho0.len() != self.states {
            return bad(format!(
                "rho0 has {} entries, expected {}",
                self.rho0.len(),
                self.states
            ));
        }
        if self.rho0.iter().any(|&x| !(x >= 0.0))
            || (self.rho0.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
        {
            return bad("rho0 is not a distribution".into());
        }
        let nr = self.reward_support.len();
        if self.p.len() != self.states {
            return bad(format!(
                "p has {} states, expected {}",
                self.p.len(),
                self.states
            ));
        }
        for (s, per_s) in self.p.iter().enumerate() {
            if per_s.len() != self.actions {
                return bad(format!(
                    "p[{s}] has {} actions, expected {}",
                    per_s.len(),
                    self.actions
                ));
            }
            for (a, per_a) in per_s.iter().enumerate() {
                if per_a.len() != self.states || per_a.iter().any(|row| row.len() != nr) {
                    return bad(format!("p[{s}][{a}] is not {}×{nr}", self.states));
                }
                let mut total = 0.0;
                for &x in per_a.iter().flatten() {
                    if !(x >= 0.0) {
                        return bad(format!("p[{s}][{a}] has a negative or NaN entry"));
                    }
                    total += x;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return bad(format!("p[{s}][{a}] sums to {total}"));
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize, r: usize) -> f64 {
        self.p[s][a][s_next][r]
    }

    pub fn reward_index(&self, reward: f64) -> Option<usize> {
        self.reward_support.iter().position(|&x| x == reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// `probs[s][a] = π(a|s)`
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(states: usize, actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / actions as f64; actions]; states],
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), GapError> {
        if self.probs.len() != mdp.states {
            return Err(GapError::InvalidPolicy(format!(
                "{} rows, expected {}",
                self.probs.len(),
                mdp.states
            )));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != mdp.actions {
                return Err(GapError::InvalidPolicy(format!(
                    "row {s} has {} entries",
                    row.len()
                )));
            }
            if row.iter().any(|&x| !(x >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
            {
                return Err(GapError::InvalidPolicy(format!(
                    "row {s} is not a distribution"
                )));
            }
        }
        Ok(())
    }
}

/// One observed tabular transition `(s, a, reward index, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct TabularTransition {
    pub s: usize,
    pub a: usize,
    pub r: usize,
    pub s_next: usize,
}

impl From<[usize; 4]> for TabularTransition {
    fn from(v: [usize; 4]) -> Self {
        Self {
            s: v[0],
            a: v[1],
            r: v[2],
            s_next: v[3],
        }
    }
}

impl From<TabularTransition> for [usize; 4] {
    fn from(t: TabularTransition) -> Self {
        [t.s, t.a, t.r, t.s_next]
    }
}

/// Count-based model `p_D(s',r|s,a) = N(s,a,s',r) / Σ_{s',r} N(s,a,s',r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    states: usize,
    actions: usize,
    rewards: usize,
    counts: Vec<u64>,
    totals: Vec<u64>,
    // uncovered pairs turned into zero-reward self-loops, with the reward index used
    absorbed: Vec<(usize, usize)>,
    zero_reward: Option<usize>,
}

impl EmpiricalModel {
    /// Counts transitions given by reward index.
    pub fn from_transitions(
        mdp: &TabularMdp,
        transitions: &[TabularTransition],
    ) -> Result<Self, GapError> {
        let (ns, na, nr) = (mdp.states, mdp.actions, mdp.reward_support.len());
        let mut counts = vec![0u64; ns * na * ns * nr];
        let mut totals = vec![0u64; ns * na];
        for (index, t) in transitions.iter().enumerate() {
            let oob = |what: &str, v: usize, n: usize| GapError::BadTransition {
                index,
                reason: format!("{what} {v} out of range 0..{n}"),
            };
            if t.s >= ns {
                return Err(oob("state", t.s, ns));
            }
            if t.a >= na {
                return Err(oob("action", t.a, na));
            }
            if t.s_next >= ns {
                return Err(oob("next state", t.s_next, ns));
            }
            if t.r >= nr {
                return Err(oob("reward index", t.r, nr));
            }
            counts[((t.s * na + t.a) * ns + t.s_next) * nr + t.r] += 1;
            totals[t.s * na + t.a] += 1;
        }
        Ok(Self {
            states: ns,
            actions: na,
            rewards: nr,
            counts,
            totals,
            absorbed: Vec::new(),
            zero_reward: None,
        })
    }

    /// Counts transitions given as `(s, a, reward value, s')`; the reward must
    /// be an exact member of the declared support.
    pub fn from_reward_values(
        mdp: &TabularMdp,
        transitions: &[(usize, usize, f64, usize)],
    ) -> Result<Self, GapError> {
        let indexed = transitions
            .iter()
            .enumerate()
            .map(|(index, &(s, a, reward, s_next))| {
                mdp.reward_index(reward)
                    .map(|r| TabularTransition { s, a, r, s_next })
                    .ok_or(GapError::RewardNotInSupport { index, reward })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_transitions(mdp, &indexed)
    }

    pub fn count(&self, s: usize, a: usize, s_next: usize, r: usize) -> u64 {
        self.counts[((s * self.actions + a) * self.states + s_next) * self.rewards + r]
    }

    pub fn total(&self, s: usize, a: usize) -> u64 {
        self.totals[s * self.actions + a]
    }

    pub fn is_covered(&self, s: usize, a: usize) -> bool {
        self.total(s, a) > 0
    }

    pub fn coverage(&self) -> Vec<Vec<bool>> {
        (0..self.states)
            .map(|s| (0..self.actions).map(|a| self.is_covered(s, a)).collect())
            .collect()
    }

    pub fn absorbed_pairs(&self) -> &[(usize, usize)] {
        &self.absorbed
    }

    fn is_absorbed(&self, s: usize, a: usize) -> bool {
        self.absorbed.contains(&(s, a))
    }

    /// Replaces every uncovered pair by a zero-reward self-loop. This is an
    /// extension; by default uncovered pairs are an error.
    pub fn absorb_uncovered(&mut self, mdp: &TabularMdp) -> Result<(), GapError> {
        let zero = mdp.reward_index(0.0).ok_or(GapError::NoZeroReward)?;
        self.zero_reward = Some(zero);
        self.absorbed = (0..self.states)
            .flat_map(|s| (0..self.actions).map(move |a| (s, a)))
            .filter(|&(s, a)| !self.is_covered(s, a))
            .collect();
        Ok(())
    }

    /// `p_D(s', r | s, a)`; `None` for uncovered, non-absorbed pairs.
    pub fn prob(&self, s: usize, a: usize, s_next: usize, r: usize) -> Option<f64> {
        let total = self.total(s, a);
        if total > 0 {
            return Some(self.count(s, a, s_next, r) as f64 / total as f64);
        }
        if self.is_absorbed(s, a) {
            return Some(if s_next == s && Some(r) == self.zero_reward {
                1.0
            } else {
                0.0
            });
        }
        None
    }

    fn check_coverage(&self, policy: &TabularPolicy) -> Result<(), GapError> {
        let pairs: Vec<(usize, usize)> = (0..self.states)
            .flat_map(|s| (0..self.actions).map(move |a| (s, a)))
            .filter(|&(s, a)| policy.probs[s][a] > 0.0 && self.prob(s, a, 0, 0).is_none())
            .collect();
        if pairs.is_empty() {
            Ok(())
        } else {
            Err(GapError::Uncovered { pairs })
        }
    }

    fn check_shape(&self, mdp: &TabularMdp) -> Result<(), GapError> {
        if (self.states, self.actions, self.rewards)
            != (mdp.states, mdp.actions, mdp.reward_support.len())
        {
            return Err(GapError::InvalidMdp(
                "empirical model shape differs from MDP".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub v_true: Vec<f64>,
    pub v_dataset: Vec<f64>,
    pub delta_direct: Vec<f64>,
    pub delta_recursive: Vec<f64>,
    pub max_abs_discrepancy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absorbed_pairs: Vec<(usize, usize)>,
}

/// Expected one-step reward and state-transition matrix under `policy` for
/// any kernel `prob(s, a, s', r)`.
fn policy_system(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    prob: impl Fn(usize, usize, usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = mdp.states;
    let mut r_pi = vec![0.0; n];
    let mut p_pi = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..mdp.actions {
            let w = policy.probs[s][a];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n {
                for (ri, &r) in mdp.reward_support.iter().enumerate() {
                    let p = prob(s, a, s2, ri);
                    r_pi[s] += w * p * r;
                    p_pi[s * n + s2] += w * p;
                }
            }
        }
    }
    (r_pi, p_pi)
}

/// Solves `(I − γ P) x = b`.
fn solve_discounted(p: &[f64], gamma: f64, b: &[f64]) -> Result<Vec<f64>, GapError> {
    let n = b.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j { 1.0 } else { 0.0 } - gamma * p[i * n + j];
        }
    }
    solve_linear(a, b.to_vec())
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
pub fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, GapError> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix must be n×n");
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(GapError::Singular);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// `V^π` from the linear Bellman system `V = r^π + γ P^π V`.
pub fn exact_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>, GapError> {
    mdp.validate()?;
    policy.validate(mdp)?;
    let (r, p) = policy_system(mdp, policy, |s, a, s2, ri| mdp.prob(s, a, s2, ri));
    solve_discounted(&p, mdp.gamma, &r)
}

/// `V^π_D`: policy evaluation under the dataset model.
pub fn dataset_value(
    mdp: &TabularMdp,
    model: &EmpiricalModel,
    policy: &TabularPolicy,
) -> Result<Vec<f64>, GapError> {
    mdp.validate()?;
    policy.validate(mdp)?;
    model.check_shape(mdp)?;
    model.check_coverage(policy)?;
    let (r, p) = policy_system(mdp, policy, |s, a, s2, ri| {
        model.prob(s, a, s2, ri).unwrap_or(0.0)
    });
    solve_discounted(&p, mdp.gamma, &r)
}

/// `δ = V^π − V^π_D`.
pub fn gap_direct(
    mdp: &TabularMdp,
    model: &EmpiricalModel,
    policy: &TabularPolicy,
) -> Result<Vec<f64>, GapError> {
    let v_data = dataset_value(mdp, model, policy)?;
    let v_true = exact_value(mdp, policy)?;
    Ok(v_true.iter().zip(&v_data).map(|(a, b)| a - b).collect())
}

/// `δ` from the gap recursion: `δ = b + γ P^π δ` with the true `P^π` and
/// `b(s) = Σ_a π Σ_{s',r} (p − p_D)(r + γ V_D(s'))`.
pub fn gap_recursive(
    mdp: &TabularMdp,
    model: &EmpiricalModel,
    policy: &TabularPolicy,
) -> Result<Vec<f64>, GapError> {
    let v_data = dataset_value(mdp, model, policy)?;
    let n = mdp.states;
    let mut b = vec![0.0; n];
    for (s, bs) in b.iter_mut().enumerate() {
        for a in 0..mdp.actions {
            let w = policy.probs[s][a];
            if w == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for (s2, &v2) in v_data.iter().enumerate() {
                for (ri, &r) in mdp.reward_support.iter().enumerate() {
                    let diff = mdp.prob(s, a, s2, ri) - model.prob(s, a, s2, ri).unwrap_or(0.0);
                    inner += diff * (r + mdp.gamma * v2);
                }
            }
            *bs += w * inner;
        }
    }
    let (_, p_true) = policy_system(mdp, policy, |s, a, s2, ri| mdp.prob(s, a, s2, ri));
    solve_discounted(&p_true, mdp.gamma, &b)
}

/// Runs both gap computations and reports their disagreement.
pub fn analyze(
    mdp: &TabularMdp,
    model: &EmpiricalModel,
    policy: &TabularPolicy,
) -> Result<GapReport, GapError> {
    let v_true = exact_value(mdp, policy)?;
    let v_dataset = dataset_value(mdp, model, policy)?;
    let delta_direct: Vec<f64> = v_true.iter().zip(&v_dataset).map(|(a, b)| a - b).collect();
    let delta_recursive = gap_recursive(mdp, model, policy)?;
    let max_abs_discrepancy = delta_direct
        .iter()
        .zip(&delta_recursive)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(GapReport {
        v_true,
        v_dataset,
        delta_direct,
        delta_recursive,
        max_abs_discrepancy,
        absorbed_pairs: model.absorbed_pairs().to_vec(),
    })
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Random MDP with dense kernels and rewards drawn from `[-1, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    states: usize,
    actions: usize,
    rewards: usize,
    gamma: f64,
) -> TabularMdp {
    let reward_support: Vec<f64> = (0..rewards).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    let flat = random_simplex(rng, states * rewards);
                    flat.chunks(rewards).map(|c| c.to_vec()).collect()
                })
                .collect()
        })
        .collect();
    let mut rho0 = random_simplex(rng, states);
    // renormalize once more so the sum is within rounding of 1
    let total: f64 = rho0.iter().sum();
    rho0.iter_mut().for_each(|x| *x /= total);
    TabularMdp {
        states,
        actions,
        reward_support,
        p,
        rho0,
        gamma,
    }
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, states: usize, actions: usize) -> TabularPolicy {
    TabularPolicy {
        probs: (0..states).map(|_| random_simplex(rng, actions)).collect(),
    }
}

/// Draws `per_pair` i.i.d. transitions from the true kernel at every `(s, a)`.
pub fn sample_transitions<R: Rng + ?Sized>(
    rng: &mut R,
    mdp: &TabularMdp,
    per_pair: usize,
) -> Vec<TabularTransition> {
    let nr = mdp.reward_support.len();
    let mut out = Vec::with_capacity(mdp.states * mdp.actions * per_pair);
    for s in 0..mdp.states {
        for a in 0..mdp.actions {
            let flat: Vec<f64> = mdp.p[s][a].iter().flatten().copied().collect();
            for _ in 0..per_pair {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = flat.len() - 1;
                for (i, &q) in flat.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                out.push(TabularTransition {
                    s,
                    a,
                    r: pick % nr,
                    s_next: pick / nr,
                });
            }
        }
    }
    out
}
