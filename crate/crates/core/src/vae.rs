//! Conditional VAE over actions: the encoder maps `(s, a)` to a diagonal
//! Gaussian over a latent of width `2 × act_dim`; the decoder maps `(s, z)`
//! back to an action in `[−max_action, max_action]`.
//!
//! Training minimizes `E[(a − â)² + ½ KL(N(μ, σ²) ‖ N(0, I))]` with the
//! reparameterized latent `z = μ + σ ⊙ ε`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{zero_grads, Activation, AdamConfig, DenseNet, Optimizer, Real};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLosses {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct ConditionalVae<T> {
    pub encoder: DenseNet<T>,
    pub decoder: DenseNet<T>,
    obs_dim: usize,
    act_dim: usize,
    latent_dim: usize,
    max_action: f64,
    latent_clip: f64,
    optim: Optimizer<T>,
}

impl<T: Real> ConditionalVae<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        max_action: f64,
        latent_clip: f64,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let latent_dim = 2 * act_dim;
        let encoder = DenseNet::mlp(
            obs_dim + act_dim,
            &[hidden, hidden],
            2 * latent_dim,
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let decoder = DenseNet::mlp(
            obs_dim + latent_dim,
            &[hidden, hidden],
            act_dim,
            Activation::Relu,
            Activation::Tanh,
            rng,
        )?;
        Self::from_nets(
            encoder,
            decoder,
            obs_dim,
            act_dim,
            max_action,
            latent_clip,
            adam,
        )
    }

    pub fn from_nets(
        encoder: DenseNet<T>,
        decoder: DenseNet<T>,
        obs_dim: usize,
        act_dim: usize,
        max_action: f64,
        latent_clip: f64,
        adam: AdamConfig,
    ) -> Result<Self> {
        let latent_dim = 2 * act_dim;
        if encoder.input_dim() != obs_dim + act_dim
            || encoder.output_dim() != 2 * latent_dim
            || decoder.input_dim() != obs_dim + latent_dim
            || decoder.output_dim() != act_dim
        {
            return Err(Error::Config(
                "VAE network shapes do not match dimensions".into(),
            ));
        }
        if !(max_action > 0.0) || !(latent_clip > 0.0) {
            return Err(Error::Config(
                "max_action and latent_clip must be positive".into(),
            ));
        }
        let optim = Optimizer::new(adam, &[&encoder, &decoder]);
        Ok(Self {
            encoder,
            decoder,
            obs_dim,
            act_dim,
            latent_dim,
            max_action,
            latent_clip,
            optim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn max_action(&self) -> f64 {
        self.max_action
    }

    pub fn latent_clip(&self) -> f64 {
        self.latent_clip
    }

    fn concat(a: &[T], wa: usize, b: &[T], wb: usize, rows: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
        }
        out
    }

    fn split_encoding(&self, out: &[T], rows: usize) -> (Vec<T>, Vec<T>) {
        let l = self.latent_dim;
        let mut mu = Vec::with_capacity(rows * l);
        let mut log_std = Vec::with_capacity(rows * l);
        for row in out.chunks_exact(2 * l) {
            mu.extend_from_slice(&row[..l]);
            log_std.extend(
                row[l..]
                    .iter()
                    .map(|&v| v.max(T::of(LOG_STD_MIN)).min(T::of(LOG_STD_MAX))),
            );
        }
        (mu, log_std)
    }

    /// `(μ, σ)` for `rows` state-action pairs.
    pub fn encode_batch(&self, obs: &[T], act: &[T], rows: usize) -> Result<(Vec<T>, Vec<T>)> {
        let out = self.encoder.forward_batch(
            &Self::concat(obs, self.obs_dim, act, self.act_dim, rows),
            rows,
        )?;
        let (mu, log_std) = self.split_encoding(&out, rows);
        Ok((mu, log_std.into_iter().map(|v| v.exp()).collect()))
    }

    pub fn encode(&self, obs: &[T], act: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.encode_batch(obs, act, 1)
    }

    /// Decoded actions for given latents.
    pub fn decode_batch(&self, obs: &[T], z: &[T], rows: usize) -> Result<Vec<T>> {
        if z.len() != rows * self.latent_dim {
            return Err(Error::Config(format!(
                "latent has {} values, expected {}",
                z.len(),
                rows * self.latent_dim
            )));
        }
        let out = self.decoder.forward_batch(
            &Self::concat(obs, self.obs_dim, z, self.latent_dim, rows),
            rows,
        )?;
        let scale = T::of(self.max_action);
        Ok(out.into_iter().map(|v| v * scale).collect())
    }

    /// Standard-normal latents clipped to `±latent_clip`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<T> {
        let c = self.latent_clip;
        (0..rows * self.latent_dim)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                T::of(e.clamp(-c, c))
            })
            .collect()
    }

    /// Decodes with the given latent, or with a fresh clipped latent from
    /// `rng` when `z` is `None`.
    pub fn decode<R: Rng + ?Sized>(
        &self,
        obs: &[T],
        z: Option<&[T]>,
        rng: &mut R,
    ) -> Result<Vec<T>> {
        match z {
            Some(z) => self.decode_batch(obs, z, 1),
            None => {
                let z = self.sample_latent(1, rng);
                self.decode_batch(obs, &z, 1)
            }
        }
    }

    /// Losses and `[encoder, decoder]` gradients with the latent noise `eps`
    /// (`rows × latent_dim`) held fixed.
    pub fn loss_and_grads(
        &self,
        obs: &[T],
        act: &[T],
        rows: usize,
        eps: &[T],
    ) -> Result<(VaeLosses, Vec<Vec<T>>)> {
        if rows == 0 {
            return Err(Error::Config("VAE batch is empty".into()));
        }
        let (l, ad) = (self.latent_dim, self.act_dim);
        let enc = self
            .encoder
            .forward_trace(Self::concat(obs, self.obs_dim, act, ad, rows), rows)?;
        let raw = enc.output();
        let (mu, log_std) = self.split_encoding(raw, rows);
        let std: Vec<T> = log_std.iter().map(|v| v.exp()).collect();
        let z: Vec<T> = mu
            .iter()
            .zip(&std)
            .zip(eps)
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let dec = self
            .decoder
            .forward_trace(Self::concat(obs, self.obs_dim, &z, l, rows), rows)?;
        let scale = self.max_action;

        let n_elem = (rows * ad) as f64;
        let mut recon = 0.0;
        let mut dy = Vec::with_capacity(rows * ad);
        for (&y, &a) in dec.output().iter().zip(act) {
            let diff = y.f64() * scale - a.f64();
            recon += diff * diff;
            dy.push(T::of(2.0 * diff / n_elem * scale));
        }
        recon /= n_elem;

        let mut kl = 0.0;
        for ((&m, &s), &ls) in mu.iter().zip(&std).zip(&log_std) {
            let (m, s, ls) = (m.f64(), s.f64(), ls.f64());
            kl += 0.5 * (s * s + m * m - 1.0 - 2.0 * ls);
        }
        kl /= rows as f64;
        let total = recon + 0.5 * kl;
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite VAE loss".into()));
        }

        let mut grads = zero_grads(&[&self.encoder, &self.decoder]);
        let d_in = self
            .decoder
            .backward(&dec, &dy, &mut grads[1], true)?
            .expect("requested");
        let w = self.obs_dim + l;
        let mut d_enc = Vec::with_capacity(rows * 2 * l);
        for r in 0..rows {
            let dz = &d_in[r * w + self.obs_dim..(r + 1) * w];
            let at = r * l;
            for j in 0..l {
                let m = mu[at + j].f64();
                d_enc.push(T::of(dz[j].f64() + 0.5 * m / rows as f64));
            }
            for j in 0..l {
                let raw_v = raw[r * 2 * l + l + j].f64();
                let g = if raw_v > LOG_STD_MIN && raw_v < LOG_STD_MAX {
                    let s = std[at + j].f64();
                    dz[j].f64() * s * eps[at + j].f64() + 0.5 * (s * s - 1.0) / rows as f64
                } else {
                    0.0
                };
                d_enc.push(T::of(g));
            }
        }
        self.encoder.backward(&enc, &d_enc, &mut grads[0], false)?;
        Ok((
            VaeLosses {
                total,
                reconstruction: recon,
                kl,
            },
            grads,
        ))
    }

    /// Losses for a batch with latent noise drawn from `rng`.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        obs: &[T],
        act: &[T],
        rows: usize,
        rng: &mut R,
    ) -> Result<VaeLosses> {
        let eps = self.draw_noise(rows, rng);
        Ok(self.loss_and_grads(obs, act, rows, &eps)?.0)
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<T> {
        (0..rows * self.latent_dim)
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    /// One Adam step on the VAE loss; returns the pre-step losses.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        obs: &[T],
        act: &[T],
        rows: usize,
        rng: &mut R,
    ) -> Result<VaeLosses> {
        let eps = self.draw_noise(rows, rng);
        let (losses, grads) = self.loss_and_grads(obs, act, rows, &eps)?;
        self.optim
            .step(vec![&mut self.encoder, &mut self.decoder], &grads)
            .map_err(|e| Error::Numerical(format!("VAE update: {e}")))?;
        Ok(losses)
    }
}
