//! Beta density, its shape-parameter gradient, and Gamma-ratio sampling.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::autodiff::special::{digamma, ln_gamma};
use crate::error::{Error, Result};
use crate::types::DURATION_EPS;

fn check(g: f64, alpha: f64, beta: f64) -> Result<()> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::OutOfRange {
            what: "g",
            detail: format!("{g} is outside (0, 1)"),
        });
    }
    check_shape(alpha, beta)
}

fn check_shape(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::OutOfRange {
            what: "beta shape",
            detail: format!("alpha={alpha}, beta={beta}"),
        });
    }
    Ok(())
}

/// `ln p(g | α, β)` with the standard normalizer `Γ(α+β) / (Γ(α)Γ(β))`.
pub fn beta_log_pdf(g: f64, alpha: f64, beta: f64) -> Result<f64> {
    check(g, alpha, beta)?;
    Ok((alpha - 1.0) * g.ln() + (beta - 1.0) * (-g).ln_1p() + ln_gamma(alpha + beta)
        - ln_gamma(alpha)
        - ln_gamma(beta))
}

/// `(∂/∂α, ∂/∂β)` of [`beta_log_pdf`].
pub fn beta_ll_grad(g: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    check(g, alpha, beta)?;
    let common = digamma(alpha + beta);
    Ok((g.ln() + common - digamma(alpha), (-g).ln_1p() + common - digamma(beta)))
}

/// Draws `X / (X + Y)` with `X ~ Gamma(α)`, `Y ~ Gamma(β)`, clamped to `[ε, 1−ε]`.
pub fn sample_constraint(alpha: f64, beta: f64, rng: &mut impl Rng) -> Result<f64> {
    check_shape(alpha, beta)?;
    let x = Gamma::new(alpha, 1.0).map_err(|e| Error::NonFinite(e.to_string()))?.sample(rng);
    let y = Gamma::new(beta, 1.0).map_err(|e| Error::NonFinite(e.to_string()))?.sample(rng);
    let g = if x + y > 0.0 { x / (x + y) } else { 0.5 };
    Ok(g.clamp(DURATION_EPS, 1.0 - DURATION_EPS))
}

pub fn beta_mean(alpha: f64, beta: f64) -> f64 {
    alpha / (alpha + beta)
}

pub fn beta_variance(alpha: f64, beta: f64) -> f64 {
    let s = alpha + beta;
    alpha * beta / (s * s * (s + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Midpoint rule after the substitution g = sin²(u/2), which removes the
    /// endpoint singularities for shapes below 1.
    fn integral(alpha: f64, beta: f64) -> f64 {
        let n = 20_000;
        let h = std::f64::consts::PI / n as f64;
        (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) * h;
                let g = (u / 2.0).sin().powi(2);
                beta_log_pdf(g, alpha, beta).unwrap().exp() * u.sin() / 2.0
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn closed_form_values() {
        assert!(beta_log_pdf(0.3, 1.0, 1.0).unwrap().abs() < 1e-14);
        assert!((beta_log_pdf(0.5, 2.0, 2.0).unwrap() - 1.5f64.ln()).abs() < 1e-12);
        assert!(beta_log_pdf(0.0, 1.0, 1.0).is_err());
        assert!(beta_log_pdf(0.5, -1.0, 1.0).is_err());
        assert!(beta_ll_grad(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn density_normalizes() {
        assert!((integral(3.0, 2.0) - 1.0).abs() < 1e-6);
        for &a in &[0.5, 1.0, 2.0, 5.0] {
            for &b in &[0.5, 1.0, 2.0, 5.0] {
                let z = integral(a, b);
                assert!((z - 1.0).abs() < 1e-6, "({a},{b}) integrates to {z}");
            }
        }
    }

    #[test]
    fn product_normalizer_does_not_integrate_to_one() {
        let wrong = |g: f64, a: f64, b: f64| {
            ((a - 1.0) * g.ln() + (b - 1.0) * (1.0 - g).ln() + ln_gamma(a * b) - ln_gamma(a) - ln_gamma(b)).exp()
        };
        let n = 10_000;
        let z: f64 = (0..n).map(|i| wrong((i as f64 + 0.5) / n as f64, 3.0, 2.0)).sum::<f64>() / n as f64;
        assert!((z - 1.0).abs() > 0.1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let g = rng.random_range(0.02..0.98);
            let a = rng.random_range(0.3..8.0);
            let b = rng.random_range(0.3..8.0);
            let (da, db) = beta_ll_grad(g, a, b).unwrap();
            let h = 1e-5;
            let fa = (beta_log_pdf(g, a + h, b).unwrap() - beta_log_pdf(g, a - h, b).unwrap()) / (2.0 * h);
            let fb = (beta_log_pdf(g, a, b + h).unwrap() - beta_log_pdf(g, a, b - h).unwrap()) / (2.0 * h);
            assert!((da - fa).abs() < 1e-6, "{da} vs {fa}");
            assert!((db - fb).abs() < 1e-6, "{db} vs {fb}");
        }
        let (da, db) = beta_ll_grad(0.5, 2.5, 2.5).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mean = |a, b, rng: &mut ChaCha8Rng| (0..n).map(|_| sample_constraint(a, b, rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean(1.0, 1.0, &mut rng) - 0.5).abs() < 0.01);
        assert!((mean(2.0, 5.0, &mut rng) - 2.0 / 7.0).abs() < 0.01);
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..10).map(|_| sample_constraint(0.7, 3.0, &mut r).unwrap()).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..10).map(|_| sample_constraint(0.7, 3.0, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|&g| g > 0.0 && g < 1.0));
    }
}
