//! Implicit quantile critic `Z_τ(s, a)`.
//!
//! A state-action embedding ψ(s, a) and a cosine embedding φ(τ) of the
//! quantile level are multiplied elementwise and passed through a ReLU layer
//! and a linear head:
//!
//! ```text
//! ψ = relu(W_sa [s; a] + b)          φ = relu(W_τ [cos(iπτ)]_{i<64} + b)
//! Z_τ(s, a) = head(relu(W_h (ψ ⊙ φ) + b_h))
//! ```

use rand::Rng;

use super::distortion::DistortionMeasure;
use super::loss::{quantile_huber_rho, quantile_huber_rho_grad};
use super::CriticError;
use crate::nn::{zero_grads, Activation, AdamConfig, DenseNet, LayerShape, Optimizer, Real, Trace};

pub const COS_FEATURES: usize = 64;

// bounds peak memory of no-gradient evaluation
const EVAL_CHUNK_ROWS: usize = 8192;

/// The three networks of one quantile function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNet<T> {
    trunk: DenseNet<T>,
    embed: DenseNet<T>,
    head: DenseNet<T>,
}

pub struct QuantileTrace<T> {
    rows: usize,
    k: usize,
    trunk: Trace<T>,
    embed: Trace<T>,
    head: Trace<T>,
}

impl<T: Real> QuantileTrace<T> {
    /// `rows × k` quantile values.
    pub fn values(&self) -> &[T] {
        self.head.output()
    }
}

/// Writes `cos(iπτ)` for `i = 0..64` using the Chebyshev recurrence.
fn cos_features<T: Real>(tau: f64, out: &mut [T]) {
    let c1 = (std::f64::consts::PI * tau).cos();
    let (mut prev, mut cur) = (1.0f64, c1);
    out[0] = T::one();
    out[1] = T::of(c1);
    for slot in out.iter_mut().take(COS_FEATURES).skip(2) {
        let next = 2.0 * c1 * cur - prev;
        prev = cur;
        cur = next;
        *slot = T::of(next);
    }
}

impl<T: Real> QuantileNet<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, CriticError> {
        Ok(Self {
            trunk: DenseNet::init(
                vec![LayerShape::new(obs_dim + act_dim, hidden, Activation::Relu)],
                rng,
            )?,
            embed: DenseNet::init(
                vec![LayerShape::new(COS_FEATURES, hidden, Activation::Relu)],
                rng,
            )?,
            head: DenseNet::init(
                vec![
                    LayerShape::new(hidden, hidden, Activation::Relu),
                    LayerShape::new(hidden, 1, Activation::Identity),
                ],
                rng,
            )?,
        })
    }

    pub fn from_nets(
        trunk: DenseNet<T>,
        embed: DenseNet<T>,
        head: DenseNet<T>,
    ) -> Result<Self, CriticError> {
        if embed.input_dim() != COS_FEATURES
            || trunk.output_dim() != embed.output_dim()
            || head.input_dim() != trunk.output_dim()
            || head.output_dim() != 1
        {
            return Err(CriticError::Shape {
                what: "quantile network parts",
                expected: trunk.output_dim(),
                actual: head.input_dim(),
            });
        }
        Ok(Self { trunk, embed, head })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn nets(&self) -> [&DenseNet<T>; 3] {
        [&self.trunk, &self.embed, &self.head]
    }

    pub fn nets_mut(&mut self) -> [&mut DenseNet<T>; 3] {
        [&mut self.trunk, &mut self.embed, &mut self.head]
    }

    pub fn head_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.head
    }

    pub fn embed_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.embed
    }

    fn check(
        &self,
        sa_len: usize,
        rows: usize,
        taus: &[f64],
        k: usize,
        group: usize,
    ) -> Result<(), CriticError> {
        if sa_len != rows * self.input_dim() {
            return Err(CriticError::Shape {
                what: "state-action input",
                expected: rows * self.input_dim(),
                actual: sa_len,
            });
        }
        if taus.len() != rows / group * k {
            return Err(CriticError::Shape {
                what: "quantile levels",
                expected: rows / group * k,
                actual: taus.len(),
            });
        }
        if let Some(&t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CriticError::TauOutOfRange(t));
        }
        Ok(())
    }

    /// `h[r·k + j] = ψ[r] ⊙ φ[(r / group)·k + j]`.
    fn fuse(psi: &[T], phi: &[T], hidden: usize, k: usize, group: usize) -> Vec<T> {
        let rows = psi.len() / hidden;
        let mut h = Vec::with_capacity(rows * k * hidden);
        for r in 0..rows {
            let p = &psi[r * hidden..(r + 1) * hidden];
            let g = r / group;
            for row in phi[g * k * hidden..(g + 1) * k * hidden].chunks_exact(hidden) {
                h.extend(row.iter().zip(p).map(|(&f, &w)| f * w));
            }
        }
        h
    }

    fn features(taus: &[f64]) -> Vec<T> {
        let mut feats = vec![T::zero(); taus.len() * COS_FEATURES];
        for (row, &t) in feats.chunks_exact_mut(COS_FEATURES).zip(taus) {
            cos_features(t, row);
        }
        feats
    }

    /// `Z_{τ}(s, a)` for each of `rows` state-action inputs at its own `k`
    /// levels; returns `rows × k` values.
    pub fn eval(
        &self,
        sa: &[T],
        rows: usize,
        taus: &[f64],
        k: usize,
    ) -> Result<Vec<T>, CriticError> {
        self.eval_grouped(sa, rows, taus, k, 1)
    }

    /// Like [`eval`](Self::eval), but consecutive groups of `group` rows
    /// share one set of `k` levels, so `taus` holds `rows / group × k` values.
    pub fn eval_grouped(
        &self,
        sa: &[T],
        rows: usize,
        taus: &[f64],
        k: usize,
        group: usize,
    ) -> Result<Vec<T>, CriticError> {
        if group == 0 || rows % group != 0 {
            return Err(CriticError::Shape {
                what: "row groups",
                expected: group.max(1),
                actual: rows,
            });
        }
        self.check(sa.len(), rows, taus, k, group)?;
        let d = self.input_dim();
        let hidden = self.trunk.output_dim();
        let chunk = ((EVAL_CHUNK_ROWS / k.max(1)).max(group) / group) * group;
        let mut out = Vec::with_capacity(rows * k);
        let mut start = 0;
        while start < rows {
            let end = (start + chunk).min(rows);
            let psi = self
                .trunk
                .forward_batch(&sa[start * d..end * d], end - start)?;
            let (g0, g1) = (start / group, end / group);
            let phi = self
                .embed
                .forward_batch(&Self::features(&taus[g0 * k..g1 * k]), (g1 - g0) * k)?;
            let h = Self::fuse(&psi, &phi, hidden, k, group);
            out.extend(self.head.forward_batch(&h, (end - start) * k)?);
            start = end;
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        sa: Vec<T>,
        rows: usize,
        taus: &[f64],
        k: usize,
    ) -> Result<QuantileTrace<T>, CriticError> {
        self.check(sa.len(), rows, taus, k, 1)?;
        let hidden = self.trunk.output_dim();
        let trunk = self.trunk.forward_trace(sa, rows)?;
        let embed = self.embed.forward_trace(Self::features(taus), rows * k)?;
        let h = Self::fuse(trunk.output(), embed.output(), hidden, k, 1);
        let head = self.head.forward_trace(h, rows * k)?;
        Ok(QuantileTrace {
            rows,
            k,
            trunk,
            embed,
            head,
        })
    }

    /// Accumulates parameter gradients of `⟨dz, Z⟩` into `grads` (ordered as
    /// [`nets`](Self::nets)) and optionally returns the gradient with respect
    /// to the state-action input.
    pub fn backward(
        &self,
        trace: &QuantileTrace<T>,
        dz: &[T],
        grads: &mut [Vec<T>],
        want_input_grad: bool,
    ) -> Result<Option<Vec<T>>, CriticError> {
        let (rows, k) = (trace.rows, trace.k);
        let hidden = self.trunk.output_dim();
        let dh = self
            .head
            .backward(&trace.head, dz, &mut grads[2], true)?
            .expect("requested");
        let psi = trace.trunk.output();
        let phi = trace.embed.output();
        let mut dphi = vec![T::zero(); rows * k * hidden];
        let mut dpsi = vec![0.0f64; rows * hidden];
        for r in 0..rows {
            let p = &psi[r * hidden..(r + 1) * hidden];
            let acc = &mut dpsi[r * hidden..(r + 1) * hidden];
            for j in 0..k {
                let at = (r * k + j) * hidden;
                for u in 0..hidden {
                    let g = dh[at + u];
                    dphi[at + u] = g * p[u];
                    acc[u] += (g * phi[at + u]).f64();
                }
            }
        }
        let dpsi: Vec<T> = dpsi.into_iter().map(T::of).collect();
        self.embed
            .backward(&trace.embed, &dphi, &mut grads[1], false)?;
        Ok(self
            .trunk
            .backward(&trace.trunk, &dpsi, &mut grads[0], want_input_grad)?)
    }

    /// Quantile values of a single `(s, a)` at the given levels.
    pub fn z_values(&self, s: &[T], a: &[T], taus: &[f64]) -> Result<Vec<T>, CriticError> {
        let mut sa = s.to_vec();
        sa.extend_from_slice(a);
        self.eval(&sa, 1, taus, taus.len())
    }

    /// Distorted expectation `Q_β(s, a)`: mean of `Z` at `β(τ_k)` for `K`
    /// uniform draws from `rng`.
    pub fn q_beta<R: Rng + ?Sized>(
        &self,
        s: &[T],
        a: &[T],
        measure: &DistortionMeasure,
        k: usize,
        rng: &mut R,
    ) -> Result<f64, CriticError> {
        measure.validate()?;
        let taus = sample_levels(measure, k, rng);
        let z = self.z_values(s, a, &taus)?;
        Ok(z.iter().map(|v| v.f64()).sum::<f64>() / k as f64)
    }

    /// Row means of [`eval`](Self::eval): a Q_β estimate per input row.
    pub fn mean_values(
        &self,
        sa: &[T],
        rows: usize,
        taus: &[f64],
        k: usize,
    ) -> Result<Vec<f64>, CriticError> {
        let z = self.eval(sa, rows, taus, k)?;
        Ok(z.chunks_exact(k)
            .map(|c| c.iter().map(|v| v.f64()).sum::<f64>() / k as f64)
            .collect())
    }

    pub fn soft_update_from(&mut self, online: &Self, eta: f64) -> Result<(), CriticError> {
        self.trunk.soft_update_from(&online.trunk, eta)?;
        self.embed.soft_update_from(&online.embed, eta)?;
        self.head.soft_update_from(&online.head, eta)?;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> QuantileNet<U> {
        QuantileNet {
            trunk: self.trunk.cast(),
            embed: self.embed.cast(),
            head: self.head.cast(),
        }
    }
}

/// `k` levels `β(τ)`, `τ ~ U(0, 1)`.
pub fn sample_levels<R: Rng + ?Sized>(
    measure: &DistortionMeasure,
    k: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..k).map(|_| measure.apply(rng.random::<f64>())).collect()
}

/// Quantile regression loss and its gradient with respect to the online
/// quantile values.
///
/// `z` is `rows × n` (online values at `taus`), `targets` is `rows × n′`.
/// Returns the batch-mean loss and `∂loss/∂z`.
pub fn quantile_regression<T: Real>(
    z: &[T],
    taus: &[f64],
    n: usize,
    targets: &[T],
    n_prime: usize,
    kappa: f64,
) -> Result<(f64, Vec<T>), CriticError> {
    let rows = taus.len() / n;
    let mut loss = 0.0f64;
    let mut dz = vec![T::zero(); rows * n];
    let scale = 1.0 / (n_prime as f64 * rows as f64);
    for r in 0..rows {
        let tgt = &targets[r * n_prime..(r + 1) * n_prime];
        for i in 0..n {
            let zi = z[r * n + i].f64();
            let tau = taus[r * n + i];
            let mut g = 0.0;
            for t in tgt {
                let delta = t.f64() - zi;
                loss += quantile_huber_rho(delta, tau, kappa);
                g -= quantile_huber_rho_grad(delta, tau, kappa);
            }
            dz[r * n + i] = T::of(g * scale);
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(CriticError::NonFinite("critic loss"));
    }
    Ok((loss, dz))
}

/// Online and target quantile networks with their optimizer.
#[derive(Debug, Clone)]
pub struct QuantileCritic<T> {
    pub online: QuantileNet<T>,
    pub target: QuantileNet<T>,
    optim: Optimizer<T>,
}

impl<T: Real> QuantileCritic<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self, CriticError> {
        Ok(Self::from_online(
            QuantileNet::new(obs_dim, act_dim, hidden, rng)?,
            adam,
        ))
    }

    pub fn from_online(online: QuantileNet<T>, adam: AdamConfig) -> Self {
        let optim = Optimizer::new(adam, &online.nets());
        Self {
            target: online.clone(),
            online,
            optim,
        }
    }

    /// Loss and parameter gradients for regressing `Z_{τ_i}(s, a)` toward
    /// the fixed target samples.
    pub fn loss_and_grads(
        &self,
        sa: &[T],
        rows: usize,
        taus: &[f64],
        n: usize,
        targets: &[T],
        n_prime: usize,
        kappa: f64,
    ) -> Result<(f64, Vec<Vec<T>>), CriticError> {
        if targets.len() != rows * n_prime {
            return Err(CriticError::Shape {
                what: "target samples",
                expected: rows * n_prime,
                actual: targets.len(),
            });
        }
        let trace = self.online.forward(sa.to_vec(), rows, taus, n)?;
        let (loss, dz) = quantile_regression(trace.values(), taus, n, targets, n_prime, kappa)?;
        let mut grads = zero_grads(&self.online.nets());
        self.online.backward(&trace, &dz, &mut grads, false)?;
        Ok((loss, grads))
    }

    /// One Adam step on the quantile Huber loss; returns the pre-step loss.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        &mut self,
        sa: &[T],
        rows: usize,
        taus: &[f64],
        n: usize,
        targets: &[T],
        n_prime: usize,
        kappa: f64,
    ) -> Result<f64, CriticError> {
        let (loss, grads) = self.loss_and_grads(sa, rows, taus, n, targets, n_prime, kappa)?;
        let nets: Vec<&mut DenseNet<T>> = self.online.nets_mut().into_iter().collect();
        self.optim.step(nets, &grads)?;
        Ok(loss)
    }

    pub fn soft_update(&mut self, eta: f64) -> Result<(), CriticError> {
        self.target.soft_update_from(&self.online, eta)
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optim.steps()
    }
}
