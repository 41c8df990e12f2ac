use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::vae::VaeLosses;

/// Column order of `metrics.csv`.
pub const CSV_HEADER: &str =
    "step,critic_loss,actor_objective,vae_total,vae_reconstruction,vae_kl,\
eval_return_mean,eval_return_std,q_beta_mean,mc_return";

/// Outcome of evaluating a frozen agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    /// Undiscounted return of each episode.
    pub returns: Vec<f64>,
    /// Discounted return from the first state of each episode.
    pub mc_returns: Vec<f64>,
    /// Critic estimate at the first state-action of each episode.
    pub q_estimates: Vec<f64>,
    pub q_beta_mean: f64,
    pub mc_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub vae_losses: Option<VaeLosses>,
    pub eval: Option<EvalReport>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metrics {
    pub fn csv_row(&self) -> String {
        let vae = self.vae_losses;
        let ev = self.eval.as_ref();
        [
            self.step.to_string(),
            self.critic_loss.to_string(),
            self.actor_objective.to_string(),
            cell(vae.map(|v| v.total)),
            cell(vae.map(|v| v.reconstruction)),
            cell(vae.map(|v| v.kl)),
            cell(ev.map(|e| e.return_mean)),
            cell(ev.map(|e| e.return_std)),
            cell(ev.map(|e| e.q_beta_mean)),
            cell(ev.map(|e| e.mc_return)),
        ]
        .join(",")
    }

    pub fn write_csv_row<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.csv_row())
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_have_same_width() {
        let m = Metrics {
            step: 3,
            critic_loss: 0.5,
            actor_objective: -1.0,
            vae_losses: None,
            eval: None,
        };
        let row = m.csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert_eq!(row, "3,0.5,-1,,,,,,,");
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[4.0; 5]), (4.0, 0.0));
    }
}
