//! Monte Carlo lower-bound machinery: `h_λ`, the score-function gradient
//! estimator and the plain LB estimator.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::families::{Family, Prepared};
use crate::models::Model;

/// Monte Carlo estimate of `∇_λ LB` (ascent convention).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: DVector<f64>,
    pub samples: usize,
}

/// Estimate together with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    pub mean: DVector<f64>,
    pub std_err: DVector<f64>,
    pub samples: usize,
}

/// `h_λ(θ) = log p(θ) + log p(y|θ) − log q_λ(θ)`.
pub fn h_lambda(model: &Model, family: Family, lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    let log_q = family.log_density(lambda, theta)?;
    Ok(model.log_joint(theta) - log_q)
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(())
}

/// One draw's contribution `score(θ) · h_λ(θ)`.
fn gradient_term<R: Rng + ?Sized>(model: &Model, q: &Prepared, rng: &mut R, index: usize) -> Result<DVector<f64>> {
    let theta = q.sample(rng);
    let h = model.log_joint(&theta) - q.log_density(&theta)?;
    let term = q.score(&theta)? * h;
    if !h.is_finite() || term.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric_at("non-finite gradient term", index));
    }
    Ok(term)
}

/// `(1/B) Σ ∇_λ log q_λ(θ_i) · h_λ(θ_i)` with `θ_i ~ q_λ`.
pub fn estimate_gradient<R: Rng + ?Sized>(
    model: &Model,
    family: Family,
    lambda: &DVector<f64>,
    batch: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_batch(batch)?;
    let q = family.prepare(lambda)?;
    let mut acc = DVector::zeros(family.dim());
    for i in 0..batch {
        acc += gradient_term(model, &q, rng, i)?;
    }
    Ok(GradientEstimate {
        grad: acc / batch as f64,
        samples: batch,
    })
}

/// Gradient estimate with standard errors from the sample variance of the
/// per-draw terms.
pub fn estimate_gradient_stats<R: Rng + ?Sized>(
    model: &Model,
    family: Family,
    lambda: &DVector<f64>,
    batch: usize,
    rng: &mut R,
) -> Result<GradientStats> {
    check_batch(batch)?;
    let dim = family.dim();
    let q = family.prepare(lambda)?;
    let mut sum = DVector::zeros(dim);
    let mut sum_sq = DVector::zeros(dim);
    for i in 0..batch {
        let t = gradient_term(model, &q, rng, i)?;
        sum_sq += t.component_mul(&t);
        sum += t;
    }
    let n = batch as f64;
    let mean = &sum / n;
    let var = (sum_sq / n - mean.component_mul(&mean)) * (n / (n - 1.0).max(1.0));
    let std_err = var.map(|v| (v.max(0.0) / n).sqrt());
    Ok(GradientStats {
        mean,
        std_err,
        samples: batch,
    })
}

/// `(1/B) Σ h_λ(θ_i)` with `θ_i ~ q_λ`.
pub fn estimate_lb<R: Rng + ?Sized>(
    model: &Model,
    family: Family,
    lambda: &DVector<f64>,
    batch: usize,
    rng: &mut R,
) -> Result<f64> {
    estimate_lb_stats(model, family, lambda, batch, rng).map(|(m, _)| m)
}

/// LB estimate and its standard error.
pub fn estimate_lb_stats<R: Rng + ?Sized>(
    model: &Model,
    family: Family,
    lambda: &DVector<f64>,
    batch: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_batch(batch)?;
    let q = family.prepare(lambda)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..batch {
        let theta = q.sample(rng);
        let h = model.log_joint(&theta) - q.log_density(&theta)?;
        if !h.is_finite() {
            return Err(Error::numeric_at("non-finite h value", i));
        }
        sum += h;
        sum_sq += h * h;
    }
    let n = batch as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * (n / (n - 1.0).max(1.0));
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{generate_synthetic, BernoulliModel, NormalModel, SyntheticSpec, NORMAL_EXAMPLE_DATA};
    use crate::specfun::lgamma;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example1() -> (Model, BernoulliModel) {
        let data = generate_synthetic(
            &SyntheticSpec::Bernoulli {
                n: 200,
                p: 0.3,
                fix_successes: Some(57),
            },
            0,
        )
        .unwrap();
        let m = BernoulliModel::from_dataset(&data).unwrap();
        (Model::Bernoulli(m.clone()), m)
    }

    #[test]
    fn h_plus_log_q_is_log_joint() {
        let (model, _) = example1();
        let lambda = dvector![3.0, 7.0];
        let theta = dvector![0.27];
        let h = h_lambda(&model, Family::Beta, &lambda, &theta).unwrap();
        let lq = Family::Beta.log_density(&lambda, &theta).unwrap();
        assert_eq!(h + lq, model.log_joint(&theta));
    }

    #[test]
    fn h_constant_at_conjugate_posterior() {
        let (model, _) = example1();
        let lambda = dvector![58.0, 144.0];
        let a = h_lambda(&model, Family::Beta, &lambda, &dvector![0.2]).unwrap();
        let b = h_lambda(&model, Family::Beta, &lambda, &dvector![0.4]).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn h_example5_matches_transcription() {
        let y = NORMAL_EXAMPLE_DATA.to_vec();
        let ybar = y.iter().sum::<f64>() / 10.0;
        let model = Model::Normal(NormalModel::example(y.clone()));
        let lambda = dvector![ybar, 0.5, 1.0, 1.0];
        let (mu, s2) = (9.7, 4.0);
        let theta = dvector![mu, s2];

        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let sq: f64 = y.iter().map(|v| (v - mu) * (v - mu)).sum();
        let h_joint = -5.5 * ln2pi - 0.5 * 100f64.ln() - mu * mu / 200.0 + 0.0 - lgamma(1.0)
            - 7.0 * s2.ln()
            - 1.0 / s2
            - sq / (2.0 * s2);
        let log_q = 1.0 * 1f64.ln() - lgamma(1.0) - 2.0 * s2.ln() - 1.0 / s2 - 0.5 * ln2pi - 0.5 * 0.5f64.ln()
            - (mu - ybar).powi(2) / (2.0 * 0.5);
        let h = h_lambda(&model, Family::GaussianInvGamma, &lambda, &theta).unwrap();
        assert!((h - (h_joint - log_q)).abs() < 1e-10);
    }

    #[test]
    fn lb_at_posterior_has_zero_variance() {
        let (model, inner) = example1();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lb, se) = estimate_lb_stats(&model, Family::Beta, &dvector![58.0, 144.0], 1000, &mut rng).unwrap();
        assert!(se < 1e-6);
        assert!((lb - inner.log_evidence()).abs() < 1e-8);
    }

    #[test]
    fn single_sample_estimate_is_reproducible() {
        let (model, _) = example1();
        let lambda = dvector![5.0, 45.0];
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            estimate_gradient(&model, Family::Beta, &lambda, 1, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
        assert_eq!(run().samples, 1);
    }

    #[test]
    fn zero_batch_rejected() {
        let (model, _) = example1();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(estimate_gradient(&model, Family::Beta, &dvector![1.0, 1.0], 0, &mut rng).is_err());
    }
}
