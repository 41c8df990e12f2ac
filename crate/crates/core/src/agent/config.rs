use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::DistortionMeasure;
use crate::error::{Error, Result};

/// Which components of the full agent are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Quantile critic with VAE-anchored residual actions.
    Popo,
    /// Twin-Q critic with VAE-anchored residual actions.
    Opo,
    /// Quantile critic, actor acts on the state alone.
    Td4,
    /// Twin-Q critic, actor acts on the state alone.
    Td3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Popo, Variant::Opo, Variant::Td4, Variant::Td3];

    pub fn uses_vae(self) -> bool {
        matches!(self, Variant::Popo | Variant::Opo)
    }

    pub fn uses_quantile_critic(self) -> bool {
        matches!(self, Variant::Popo | Variant::Td4)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Popo => "popo",
            Variant::Opo => "opo",
            Variant::Td4 => "td4",
            Variant::Td3 => "td3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected popo, opo, td4 or td3)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Residual scale ξ.
    pub xi: f64,
    /// Soft target rate η.
    pub eta: f64,
    /// Candidate actions per state.
    pub n_candidates: usize,
    pub batch_size: usize,
    pub lr_vae: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    /// Online quantile levels per sample (N).
    pub n_quantiles: usize,
    /// Target quantile levels per sample (N′).
    pub n_target_quantiles: usize,
    /// Levels used to estimate Q_β (K).
    pub k_quantiles: usize,
    pub kappa: f64,
    pub distortion: DistortionMeasure,
    pub variant: Variant,
    /// Apply the distortion to the levels used in the TD regression.
    pub distort_td: bool,
    pub eval_interval: usize,
    pub max_steps: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub vae_hidden: usize,
    pub latent_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            xi: 0.05,
            eta: 5e-3,
            n_candidates: 10,
            batch_size: 256,
            lr_vae: 3e-4,
            lr_critic: 3e-4,
            lr_actor: 3e-4,
            n_quantiles: 32,
            n_target_quantiles: 32,
            k_quantiles: 32,
            kappa: 1.0,
            distortion: DistortionMeasure::default(),
            variant: Variant::Popo,
            distort_td: true,
            eval_interval: 5000,
            max_steps: 100_000,
            actor_hidden: 256,
            critic_hidden: 256,
            vae_hidden: 750,
            latent_clip: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return bad("xi must be finite and non-negative");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if self.n_candidates == 0 || self.batch_size == 0 {
            return bad("n_candidates and batch_size must be at least 1");
        }
        if self.n_quantiles == 0 || self.n_target_quantiles == 0 || self.k_quantiles == 0 {
            return bad("quantile counts must be at least 1");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        for lr in [self.lr_vae, self.lr_critic, self.lr_actor] {
            if !(lr > 0.0) || !lr.is_finite() {
                return bad("learning rates must be positive");
            }
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1");
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 || self.vae_hidden == 0 {
            return bad("hidden widths must be at least 1");
        }
        if !(self.latent_clip > 0.0) {
            return bad("latent_clip must be positive");
        }
        self.distortion.validate()?;
        Ok(())
    }

    /// Candidates actually generated per state: the state-only actor has one.
    pub fn candidates(&self) -> usize {
        if self.variant.uses_vae() {
            self.n_candidates
        } else {
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.distortion, DistortionMeasure::wang(-0.75));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"gama": 0.9}"#).unwrap_err();
        assert!(err.to_string().contains("gama"));
        let c: TrainConfig = serde_json::from_str(r#"{"gamma": 0.9, "variant": "td3"}"#).unwrap();
        assert_eq!((c.gamma, c.variant), (0.9, Variant::Td3));
    }

    #[test]
    fn invalid_values_rejected() {
        for patch in [
            r#"{"gamma": 1.0}"#,
            r#"{"eta": 0.0}"#,
            r#"{"xi": -0.1}"#,
            r#"{"n_candidates": 0}"#,
            r#"{"distortion": {"kind": "cvar", "zeta": 0.0}}"#,
        ] {
            let c: TrainConfig = serde_json::from_str(patch).unwrap();
            assert!(c.validate().is_err(), "{patch}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bcq".parse::<Variant>().is_err());
    }
}
