use serde::{Deserialize, Serialize};

use super::scalar::Real;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment accumulators for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }
}

/// One bias-corrected Adam descent step. Gradients are checked for
/// finiteness before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::ParamCount {
            expected: state.m.len(),
            actual: grads.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient { index });
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::of(c.beta1);
    let b2 = T::of(c.beta2);
    let one = T::one();
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    // lr·m̂/(√v̂ + ε) with the corrections folded into two scalars
    let step_size = T::of(c.lr / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
    let eps = T::of(c.eps);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p = *p - step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![0.3f64, -1.2, 4.0];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), 3);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(AdamConfig::default(), 1);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        let want = -3e-4 / (1.0 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut p = vec![0.7f32, 0.7];
        let mut st = AdamState::new(AdamConfig::default(), 2);
        for k in 0..5 {
            let g = 0.1 * k as f32 - 0.2;
            adam_step(&mut p, &[g, g], &mut st).unwrap();
            assert_eq!(p[0].to_bits(), p[1].to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut p = vec![1.0f64, 2.0];
        let mut st = AdamState::new(AdamConfig::default(), 2);
        let err = adam_step(&mut p, &[0.5, f64::NAN], &mut st).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { index: 1 }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.step(), 0);
    }
}

/// Adam state for a group of networks updated together.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    states: Vec<AdamState<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: AdamConfig, nets: &[&super::DenseNet<T>]) -> Self {
        Self {
            states: nets
                .iter()
                .map(|n| AdamState::new(config, n.num_params()))
                .collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.states[0].config
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, AdamState::step)
    }

    /// One Adam step on every network; nothing is modified unless every
    /// gradient is finite.
    pub fn step(
        &mut self,
        nets: Vec<&mut super::DenseNet<T>>,
        grads: &[Vec<T>],
    ) -> Result<(), NnError> {
        assert_eq!(
            nets.len(),
            self.states.len(),
            "optimizer/network count mismatch"
        );
        assert_eq!(
            grads.len(),
            self.states.len(),
            "optimizer/gradient count mismatch"
        );
        let mut offset = 0;
        for g in grads {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { index: offset + i });
            }
            offset += g.len();
        }
        for ((net, g), st) in nets.into_iter().zip(grads).zip(self.states.iter_mut()) {
            adam_step(net.params_mut(), g, st)?;
        }
        Ok(())
    }
}

pub fn zero_grads<T: Real>(nets: &[&super::DenseNet<T>]) -> Vec<Vec<T>> {
    nets.iter()
        .map(|n| vec![T::zero(); n.num_params()])
        .collect()
}
