use super::CriticError;

/// Huber function `L_κ`.
#[inline]
pub fn huber(x: f64, kappa: f64) -> f64 {
    if x.abs() <= kappa {
        0.5 * x * x
    } else {
        kappa * (x.abs() - 0.5 * kappa)
    }
}

/// Asymmetric quantile Huber penalty `ρ^κ_τ(x) = |τ − 1{x<0}| · L_κ(x)/κ`.
#[inline]
pub fn quantile_huber_rho(x: f64, tau: f64, kappa: f64) -> f64 {
    let weight = (tau - if x < 0.0 { 1.0 } else { 0.0 }).abs();
    weight * huber(x, kappa) / kappa
}

/// dρ^κ_τ/dx.
#[inline]
pub fn quantile_huber_rho_grad(x: f64, tau: f64, kappa: f64) -> f64 {
    let weight = (tau - if x < 0.0 { 1.0 } else { 0.0 }).abs();
    let dl = if x.abs() <= kappa {
        x
    } else {
        kappa * x.signum()
    };
    weight * dl / kappa
}

/// Loss for one transition from its N×N′ TD-error matrix
/// `deltas[i][j] = target_j − Z_{τ_i}`:
/// `(1/N′) Σ_i Σ_j ρ^κ_{τ_i}(Δ_ij)`.
pub fn quantile_huber(deltas: &[f64], taus: &[f64], kappa: f64) -> Result<f64, CriticError> {
    if !(kappa > 0.0) {
        return Err(CriticError::InvalidKappa(kappa));
    }
    let n = taus.len();
    if n == 0 || deltas.len() % n != 0 {
        return Err(CriticError::Shape {
            what: "delta matrix",
            expected: n,
            actual: deltas.len(),
        });
    }
    if let Some(&t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CriticError::TauOutOfRange(t));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(CriticError::NonFinite("TD error"));
    }
    let n_prime = deltas.len() / n;
    let total: f64 = deltas
        .chunks_exact(n_prime)
        .zip(taus)
        .map(|(row, &tau)| {
            row.iter()
                .map(|&d| quantile_huber_rho(d, tau, kappa))
                .sum::<f64>()
        })
        .sum();
    Ok(total / n_prime as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert!((quantile_huber(&[2.0], &[0.5], 1.0).unwrap() - 0.75).abs() < 1e-12);
        assert!((quantile_huber(&[-2.0], &[0.9], 1.0).unwrap() - 0.15).abs() < 1e-12);
        assert!((quantile_huber(&[0.5], &[0.5], 1.0).unwrap() - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn zero_deltas_zero_loss() {
        assert_eq!(
            quantile_huber(&[0.0; 6], &[0.1, 0.5, 0.9], 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn divides_by_n_prime_only() {
        // 2×2 with identical entries: (1/2)·4·ρ
        let rho = quantile_huber_rho(0.3, 0.5, 1.0);
        let got = quantile_huber(&[0.3; 4], &[0.5, 0.5], 1.0).unwrap();
        assert!((got - 2.0 * rho).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_kappa() {
        for kappa in [0.5, 1.0, 2.0] {
            for tau in [0.1, 0.5, 0.9] {
                for sign in [-1.0, 1.0] {
                    let at = sign * kappa;
                    let left = quantile_huber_rho(at - 1e-12 * sign, tau, kappa);
                    let right = quantile_huber_rho(at + 1e-12 * sign, tau, kappa);
                    assert!((left - right).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            quantile_huber(&[f64::NAN], &[0.5], 1.0),
            Err(CriticError::NonFinite(_))
        ));
        assert!(matches!(
            quantile_huber(&[1.0], &[0.5], 0.0),
            Err(CriticError::InvalidKappa(_))
        ));
        assert!(matches!(
            quantile_huber(&[1.0], &[1.5], 1.0),
            Err(CriticError::TauOutOfRange(_))
        ));
        assert!(quantile_huber(&[1.0, 2.0, 3.0], &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, -0.01, 0.2, 0.99, 1.7] {
            for &tau in &[0.05, 0.5, 0.8] {
                let h = 1e-6;
                let num = (quantile_huber_rho(x + h, tau, 1.0)
                    - quantile_huber_rho(x - h, tau, 1.0))
                    / (2.0 * h);
                assert!((num - quantile_huber_rho_grad(x, tau, 1.0)).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_only_at_zero(
            deltas in proptest::collection::vec(-5.0f64..5.0, 1..16),
            tau in 0.01f64..0.99,
        ) {
            let n = deltas.len();
            let loss = quantile_huber(&deltas, &[tau], 1.0).unwrap();
            prop_assert!(loss >= 0.0);
            let all_zero = deltas.iter().all(|&d| d == 0.0);
            prop_assert_eq!(loss == 0.0, all_zero, "n={}", n);
        }
    }
}
