//! Clipped double-Q critic for the non-distributional ablations.

use rand::Rng;

use super::CriticError;
use crate::nn::{zero_grads, Activation, AdamConfig, DenseNet, Optimizer, Real, Trace};

#[derive(Debug, Clone)]
pub struct TwinQCritic<T> {
    pub q1: DenseNet<T>,
    pub q2: DenseNet<T>,
    pub target1: DenseNet<T>,
    pub target2: DenseNet<T>,
    optim: Optimizer<T>,
}

fn q_net<T: Real, R: Rng + ?Sized>(
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<DenseNet<T>, CriticError> {
    Ok(DenseNet::mlp(
        input,
        &[hidden, hidden],
        1,
        Activation::Relu,
        Activation::Identity,
        rng,
    )?)
}

impl<T: Real> TwinQCritic<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self, CriticError> {
        let q1 = q_net(obs_dim + act_dim, hidden, rng)?;
        let q2 = q_net(obs_dim + act_dim, hidden, rng)?;
        Ok(Self::from_nets(q1, q2, adam))
    }

    pub fn from_nets(q1: DenseNet<T>, q2: DenseNet<T>, adam: AdamConfig) -> Self {
        let optim = Optimizer::new(adam, &[&q1, &q2]);
        Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
            optim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    /// `min(Q1′, Q2′)` per row.
    pub fn target_min(&self, sa: &[T], rows: usize) -> Result<Vec<T>, CriticError> {
        let a = self.target1.forward_batch(sa, rows)?;
        let b = self.target2.forward_batch(sa, rows)?;
        Ok(a.into_iter().zip(b).map(|(x, y)| x.min(y)).collect())
    }

    /// Online `Q1`, the value the actor ascends.
    pub fn q1_values(&self, sa: &[T], rows: usize) -> Result<Vec<T>, CriticError> {
        Ok(self.q1.forward_batch(sa, rows)?)
    }

    pub fn target_q1_values(&self, sa: &[T], rows: usize) -> Result<Vec<T>, CriticError> {
        Ok(self.target1.forward_batch(sa, rows)?)
    }

    pub fn q1_trace(&self, sa: Vec<T>, rows: usize) -> Result<Trace<T>, CriticError> {
        Ok(self.q1.forward_trace(sa, rows)?)
    }

    /// `mean (Q1 − y)² + mean (Q2 − y)²` and gradients for `[q1, q2]`.
    pub fn loss_and_grads(
        &self,
        sa: &[T],
        rows: usize,
        targets: &[T],
    ) -> Result<(f64, Vec<Vec<T>>), CriticError> {
        if targets.len() != rows {
            return Err(CriticError::Shape {
                what: "targets",
                expected: rows,
                actual: targets.len(),
            });
        }
        let mut grads = zero_grads(&[&self.q1, &self.q2]);
        let mut loss = 0.0;
        for (net, g) in [&self.q1, &self.q2].into_iter().zip(grads.iter_mut()) {
            let trace = net.forward_trace(sa.to_vec(), rows)?;
            let mut dq = Vec::with_capacity(rows);
            for (q, y) in trace.output().iter().zip(targets) {
                let diff = q.f64() - y.f64();
                loss += diff * diff / rows as f64;
                dq.push(T::of(2.0 * diff / rows as f64));
            }
            net.backward(&trace, &dq, g, false)?;
        }
        if !loss.is_finite() {
            return Err(CriticError::NonFinite("twin-Q loss"));
        }
        Ok((loss, grads))
    }

    pub fn fit(&mut self, sa: &[T], rows: usize, targets: &[T]) -> Result<f64, CriticError> {
        let (loss, grads) = self.loss_and_grads(sa, rows, targets)?;
        self.optim.step(vec![&mut self.q1, &mut self.q2], &grads)?;
        Ok(loss)
    }

    pub fn soft_update(&mut self, eta: f64) -> Result<(), CriticError> {
        self.target1.soft_update_from(&self.q1, eta)?;
        self.target2.soft_update_from(&self.q2, eta)?;
        Ok(())
    }
}
