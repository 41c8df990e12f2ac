//! Distortion risk measures β: [0, 1] → [0, 1] applied to quantile levels.
//!
//! | kind     | β(τ)                                   |
//! |----------|----------------------------------------|
//! | wang     | Φ(Φ⁻¹(τ) + ζ)                          |
//! | cpw      | τ^ζ / (τ^ζ + (1 − τ)^ζ)^(1/ζ)          |
//! | cvar     | ζ·τ                                    |
//! | identity | τ                                      |
//!
//! Wang with ζ < 0 and CVaR with ζ < 1 weight low quantiles more heavily and
//! so give pessimistic expectations.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::normal::{std_normal_cdf, std_normal_quantile};
use super::CriticError;

/// Wang's Φ⁻¹ is evaluated on τ clamped to this distance from the endpoints.
const WANG_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Wang,
    Cpw,
    Cvar,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionMeasure {
    pub kind: DistortionKind,
    #[serde(default)]
    pub zeta: f64,
}

impl Default for DistortionMeasure {
    fn default() -> Self {
        Self::wang(-0.75)
    }
}

impl fmt::Display for DistortionMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DistortionKind::Wang => write!(f, "Wang({})", self.zeta),
            DistortionKind::Cpw => write!(f, "CPW({})", self.zeta),
            DistortionKind::Cvar => write!(f, "CVaR({})", self.zeta),
            DistortionKind::Identity => write!(f, "identity"),
        }
    }
}

impl DistortionMeasure {
    pub fn wang(zeta: f64) -> Self {
        Self {
            kind: DistortionKind::Wang,
            zeta,
        }
    }

    pub fn cpw(zeta: f64) -> Self {
        Self {
            kind: DistortionKind::Cpw,
            zeta,
        }
    }

    pub fn cvar(zeta: f64) -> Self {
        Self {
            kind: DistortionKind::Cvar,
            zeta,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: DistortionKind::Identity,
            zeta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CriticError> {
        let ok = match self.kind {
            DistortionKind::Wang => self.zeta.is_finite(),
            DistortionKind::Cpw => self.zeta > 0.0 && self.zeta.is_finite(),
            DistortionKind::Cvar => self.zeta > 0.0 && self.zeta <= 1.0,
            DistortionKind::Identity => true,
        };
        if ok {
            Ok(())
        } else {
            Err(CriticError::InvalidDistortion(*self))
        }
    }

    pub fn distort(&self, tau: f64) -> Result<f64, CriticError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(CriticError::TauOutOfRange(tau));
        }
        self.validate()?;
        Ok(self.apply(tau))
    }

    /// [`distort`](Self::distort) without argument checks, for hot loops that
    /// validated the measure once and draw τ from U(0, 1).
    pub(crate) fn apply(&self, tau: f64) -> f64 {
        let v = match self.kind {
            DistortionKind::Identity => tau,
            DistortionKind::Cvar => self.zeta * tau,
            DistortionKind::Wang if tau <= 0.0 || tau >= 1.0 => tau,
            DistortionKind::Wang => {
                let t = tau.clamp(WANG_CLAMP, 1.0 - WANG_CLAMP);
                std_normal_cdf(std_normal_quantile(t) + self.zeta)
            }
            DistortionKind::Cpw => {
                let a = tau.powf(self.zeta);
                let b = (1.0 - tau).powf(self.zeta);
                a / (a + b).powf(1.0 / self.zeta)
            }
        };
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn identities_on_grid() {
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            assert!((DistortionMeasure::cpw(1.0).distort(t).unwrap() - t).abs() < 1e-9);
            assert!((DistortionMeasure::cvar(1.0).distort(t).unwrap() - t).abs() < 1e-9);
            assert!((DistortionMeasure::wang(0.0).distort(t).unwrap() - t).abs() < 1e-9);
            assert_eq!(DistortionMeasure::identity().distort(t).unwrap(), t);
        }
    }

    #[test]
    fn cvar_scales() {
        assert!((DistortionMeasure::cvar(0.1).distort(0.5).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn wang_pessimistic_at_median() {
        let want = Normal::standard().cdf(-0.75);
        let got = DistortionMeasure::wang(-0.75).distort(0.5).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!((got - 0.226627).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            DistortionMeasure::wang(0.3).distort(1.5),
            Err(CriticError::TauOutOfRange(_))
        ));
        assert!(DistortionMeasure::cvar(0.0).distort(0.5).is_err());
        assert!(DistortionMeasure::cvar(1.5).distort(0.5).is_err());
        assert!(DistortionMeasure::cpw(-1.0).distort(0.5).is_err());
    }

    #[test]
    fn endpoints() {
        for m in [
            DistortionMeasure::wang(-0.75),
            DistortionMeasure::wang(0.75),
            DistortionMeasure::cpw(0.71),
        ] {
            assert!(m.distort(0.0).unwrap() < 1e-6, "{m}");
            assert!(m.distort(1.0).unwrap() > 1.0 - 1e-6, "{m}");
        }
    }

    #[test]
    fn config_json() {
        let m: DistortionMeasure = serde_json::from_str(r#"{"kind":"cvar","zeta":0.25}"#).unwrap();
        assert_eq!(m, DistortionMeasure::cvar(0.25));
        let m: DistortionMeasure = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(m.kind, DistortionKind::Identity);
        assert_eq!(DistortionMeasure::default(), DistortionMeasure::wang(-0.75));
    }

    proptest! {
        #[test]
        fn maps_unit_interval_into_itself(tau in 0.0f64..=1.0, zeta in -3.0f64..3.0, c in 0.01f64..=1.0, w in 0.2f64..3.0) {
            for m in [DistortionMeasure::wang(zeta), DistortionMeasure::cvar(c), DistortionMeasure::cpw(w)] {
                let v = m.distort(tau).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn wang_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, zeta in -2.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m = DistortionMeasure::wang(zeta);
            prop_assert!(m.distort(lo).unwrap() <= m.distort(hi).unwrap() + 1e-15);
        }
    }
}
