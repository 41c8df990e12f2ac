//! Action-value interface used for candidate selection and actor gradients.

use crate::critic::QuantileNet;
use crate::error::Result;
use crate::nn::{zero_grads, DenseNet, Real};

/// Something that scores state-action rows.
///
/// `levels` carries `k` quantile levels per row; scalar critics ignore it.
pub trait ActionCritic<T: Real> {
    fn values(&self, sa: &[T], rows: usize, levels: &[f64], k: usize) -> Result<Vec<f64>>;

    /// [`values`](Self::values) where consecutive groups of `group` rows
    /// share one set of `k` levels.
    fn values_grouped(
        &self,
        sa: &[T],
        rows: usize,
        levels: &[f64],
        k: usize,
        group: usize,
    ) -> Result<Vec<f64>> {
        let mut full = Vec::with_capacity(rows * k);
        for g in levels.chunks_exact(k) {
            for _ in 0..group {
                full.extend_from_slice(g);
            }
        }
        self.values(sa, rows, &full, k)
    }

    /// Values and the gradient of each row's value with respect to that
    /// row's state-action input.
    fn values_and_input_grads(
        &self,
        sa: &[T],
        rows: usize,
        levels: &[f64],
        k: usize,
    ) -> Result<(Vec<f64>, Vec<T>)>;
}

impl<T: Real> ActionCritic<T> for QuantileNet<T> {
    fn values(&self, sa: &[T], rows: usize, levels: &[f64], k: usize) -> Result<Vec<f64>> {
        Ok(self.mean_values(sa, rows, levels, k)?)
    }

    fn values_grouped(
        &self,
        sa: &[T],
        rows: usize,
        levels: &[f64],
        k: usize,
        group: usize,
    ) -> Result<Vec<f64>> {
        let z = self.eval_grouped(sa, rows, levels, k, group)?;
        Ok(z.chunks_exact(k)
            .map(|c| c.iter().map(|v| v.f64()).sum::<f64>() / k as f64)
            .collect())
    }

    fn values_and_input_grads(
        &self,
        sa: &[T],
        rows: usize,
        levels: &[f64],
        k: usize,
    ) -> Result<(Vec<f64>, Vec<T>)> {
        let trace = self.forward(sa.to_vec(), rows, levels, k)?;
        let values = trace
            .values()
            .chunks_exact(k)
            .map(|c| c.iter().map(|v| v.f64()).sum::<f64>() / k as f64)
            .collect();
        let dz = vec![T::of(1.0 / k as f64); rows * k];
        let mut grads = zero_grads(&self.nets());
        let d_in = self
            .backward(&trace, &dz, &mut grads, true)?
            .expect("input gradient requested");
        Ok((values, d_in))
    }
}

impl<T: Real> ActionCritic<T> for DenseNet<T> {
    fn values(&self, sa: &[T], rows: usize, _levels: &[f64], _k: usize) -> Result<Vec<f64>> {
        Ok(self
            .forward_batch(sa, rows)?
            .into_iter()
            .map(|v| v.f64())
            .collect())
    }

    fn values_and_input_grads(
        &self,
        sa: &[T],
        rows: usize,
        _levels: &[f64],
        _k: usize,
    ) -> Result<(Vec<f64>, Vec<T>)> {
        let trace = self.forward_trace(sa.to_vec(), rows)?;
        let values = trace.output().iter().map(|v| v.f64()).collect();
        let mut grads = vec![T::zero(); self.num_params()];
        let d_in = self
            .backward(&trace, &vec![T::one(); rows], &mut grads, true)?
            .expect("input gradient requested");
        Ok((values, d_in))
    }
}
