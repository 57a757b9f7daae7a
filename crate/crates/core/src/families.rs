//! Variational families `q_λ(θ)`: sampling, log-density, score and the
//! analytic Fisher information where one exists.
//!
//! Parameter layouts:
//!
//! * `Beta`: `λ = (α, β)`, `θ ∈ (0, 1)`.
//! * `GaussianFull { d }`: `λ = (μ, vec(Σ))` with `vec` column-major, so
//!   `D = d + d²`. Σ is read through its symmetric part `(Σ + Σᵀ)/2`.
//! * `GaussianInvGamma`: `λ = (μ_μ, σ²_μ, α, β)` for `q(μ) = N(μ_μ, σ²_μ)`
//!   and `q(σ²) = Inverse-Gamma(α, β)`; `θ = (μ, σ²)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::specfun::{lgamma, psi, psi1};

/// Lower bound applied to positivity-constrained coordinates by
/// [`Family::project_to_domain`].
pub const POSITIVITY_FLOOR: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Beta,
    GaussianFull { d: usize },
    GaussianInvGamma,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Beta => f.write_str("beta"),
            Family::GaussianFull { d } => write!(f, "gaussian{d}"),
            Family::GaussianInvGamma => f.write_str("gaussian-invgamma"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    /// Accepts `beta`, `gaussian-invgamma` and `gaussian<d>` (e.g. `gaussian3`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Family::Beta),
            "gaussian-invgamma" | "gig" => Ok(Family::GaussianInvGamma),
            _ => {
                if let Some(d) = s.strip_prefix("gaussian") {
                    if let Ok(d) = d.parse::<usize>() {
                        if d > 0 {
                            return Ok(Family::GaussianFull { d });
                        }
                    }
                }
                Err(Error::Config(format!("unknown family `{s}`")))
            }
        }
    }
}

/// Mean and symmetrized covariance of a `GaussianFull` parameter vector.
pub fn split_gaussian(lambda: &DVector<f64>, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mu = lambda.rows(0, d).into_owned();
    let sigma = DMatrix::from_column_slice(d, d, &lambda.as_slice()[d..d + d * d]);
    let sym = (&sigma + sigma.transpose()) * 0.5;
    (mu, sym)
}

pub fn gaussian_lambda(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    let d = mu.len();
    let mut out = DVector::zeros(d + d * d);
    out.rows_mut(0, d).copy_from(mu);
    out.rows_mut(d, d * d).copy_from_slice(sigma.as_slice());
    out
}

pub(crate) fn cholesky(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Domain("covariance matrix is not positive definite".into()))
}

impl Family {
    /// Length `D` of the variational parameter.
    pub fn dim(&self) -> usize {
        match self {
            Family::Beta => 2,
            Family::GaussianFull { d } => d + d * d,
            Family::GaussianInvGamma => 4,
        }
    }

    /// Length of a model-parameter draw `θ`.
    pub fn theta_dim(&self) -> usize {
        match self {
            Family::Beta => 1,
            Family::GaussianFull { d } => *d,
            Family::GaussianInvGamma => 2,
        }
    }

    pub fn has_exact_fisher(&self) -> bool {
        !matches!(self, Family::GaussianFull { .. })
    }

    pub fn check_domain(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: lambda.len(),
            });
        }
        if let Some(i) = lambda.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter at index {i}")));
        }
        let positive = |idx: &[usize]| -> Result<()> {
            for &i in idx {
                if !(lambda[i] > 0.0) {
                    return Err(Error::Domain(format!(
                        "{self} parameter {i} must be positive, got {}",
                        lambda[i]
                    )));
                }
            }
            Ok(())
        };
        match self {
            Family::Beta => positive(&[0, 1]),
            Family::GaussianInvGamma => positive(&[1, 2, 3]),
            Family::GaussianFull { d } => {
                let (_, sigma) = split_gaussian(lambda, *d);
                cholesky(&sigma).map(|_| ())
            }
        }
    }

    pub fn in_domain(&self, lambda: &DVector<f64>) -> bool {
        self.check_domain(lambda).is_ok()
    }

    /// Clamps positivity-constrained coordinates to at least
    /// [`POSITIVITY_FLOOR`]. Gaussian covariances are left untouched.
    pub fn project_to_domain(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut out = lambda.clone();
        let idx: &[usize] = match self {
            Family::Beta => &[0, 1],
            Family::GaussianInvGamma => &[1, 2, 3],
            Family::GaussianFull { .. } => &[],
        };
        for &i in idx {
            if out[i] < POSITIVITY_FLOOR {
                out[i] = POSITIVITY_FLOOR;
            }
        }
        out
    }

    /// Evaluates the λ-dependent constants of `q_λ` once, for repeated
    /// sampling and scoring at the same λ.
    pub fn prepare(&self, lambda: &DVector<f64>) -> Result<Prepared> {
        self.check_domain(lambda)?;
        let inner = match *self {
            Family::Beta => {
                let (a, b) = (lambda[0], lambda[1]);
                let common = psi(a + b);
                Inner::Beta {
                    log_norm: lgamma(a + b) - lgamma(a) - lgamma(b),
                    a,
                    b,
                    score_a: common - psi(a),
                    score_b: common - psi(b),
                    gamma_a: gamma(a)?,
                    gamma_b: gamma(b)?,
                }
            }
            Family::GaussianFull { d } => {
                let (mu, sigma) = split_gaussian(lambda, d);
                let chol = cholesky(&sigma)?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                Inner::Gaussian {
                    mu,
                    l: chol.l(),
                    prec: chol.inverse(),
                    log_norm: -0.5 * d as f64 * LN_2PI - 0.5 * log_det,
                }
            }
            Family::GaussianInvGamma => {
                let (m, v, a, b) = (lambda[0], lambda[1], lambda[2], lambda[3]);
                Inner::GaussianInvGamma {
                    m,
                    v,
                    a,
                    b,
                    log_norm: a * b.ln() - lgamma(a) - 0.5 * LN_2PI - 0.5 * v.ln(),
                    score_a: b.ln() - psi(a),
                    gamma_a: gamma(a)?,
                }
            }
        };
        Ok(Prepared { family: *self, inner })
    }

    /// Draws `θ ~ q_λ`.
    pub fn sample<R: Rng + ?Sized>(&self, lambda: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.prepare(lambda)?.sample(rng))
    }

    /// `log q_λ(θ)`; `-∞` when `θ` is outside the support.
    pub fn log_density(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        self.prepare(lambda)?.log_density(theta)
    }

    /// Score `∇_λ log q_λ(θ)`, a vector of length [`Family::dim`].
    pub fn score(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.prepare(lambda)?.score(theta)
    }

    /// Analytic Fisher information `I_F(λ)`; `None` for `GaussianFull`.
    pub fn exact_fisher(&self, lambda: &DVector<f64>) -> Result<Option<DMatrix<f64>>> {
        self.check_domain(lambda)?;
        Ok(match self {
            Family::Beta => {
                let (a, b) = (lambda[0], lambda[1]);
                let common = psi1(a + b);
                Some(DMatrix::from_row_slice(
                    2,
                    2,
                    &[psi1(a) - common, -common, -common, psi1(b) - common],
                ))
            }
            Family::GaussianFull { .. } => None,
            Family::GaussianInvGamma => {
                let (v, a, b) = (lambda[1], lambda[2], lambda[3]);
                let mut f = DMatrix::zeros(4, 4);
                f[(0, 0)] = 1.0 / v;
                f[(1, 1)] = 1.0 / (2.0 * v * v);
                f[(2, 2)] = psi1(a);
                f[(2, 3)] = -1.0 / b;
                f[(3, 2)] = -1.0 / b;
                f[(3, 3)] = a / (b * b);
                Some(f)
            }
        })
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.theta_dim() {
            return Err(Error::Shape {
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

fn gamma(shape: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, 1.0).map_err(|e| Error::Domain(format!("gamma shape {shape}: {e}")))
}

#[derive(Debug, Clone)]
enum Inner {
    Beta {
        a: f64,
        b: f64,
        log_norm: f64,
        score_a: f64,
        score_b: f64,
        gamma_a: Gamma<f64>,
        gamma_b: Gamma<f64>,
    },
    Gaussian {
        mu: DVector<f64>,
        l: DMatrix<f64>,
        prec: DMatrix<f64>,
        log_norm: f64,
    },
    GaussianInvGamma {
        m: f64,
        v: f64,
        a: f64,
        b: f64,
        log_norm: f64,
        score_a: f64,
        gamma_a: Gamma<f64>,
    },
}

/// `q_λ` at a fixed λ; see [`Family::prepare`].
#[derive(Debug, Clone)]
pub struct Prepared {
    family: Family,
    inner: Inner,
}

impl Prepared {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.inner {
            Inner::Beta { gamma_a, gamma_b, .. } => {
                let x = gamma_a.sample(rng);
                let y = gamma_b.sample(rng);
                let theta = x / (x + y);
                // keep draws strictly inside (0, 1) when a shape is tiny
                let theta = if theta.is_nan() { 0.5 } else { theta };
                let theta = theta.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                DVector::from_element(1, theta)
            }
            Inner::Gaussian { mu, l, .. } => {
                let z = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                mu + l * z
            }
            Inner::GaussianInvGamma { m, v, b, gamma_a, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                let mu = m + v.sqrt() * z;
                let g = gamma_a.sample(rng);
                let sigma2 = (b / g).max(f64::MIN_POSITIVE);
                DVector::from_vec(vec![mu, sigma2])
            }
        }
    }

    /// `log q_λ(θ)`; `-∞` when `θ` is outside the support.
    pub fn log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        self.family.check_theta(theta)?;
        Ok(match &self.inner {
            Inner::Beta { a, b, log_norm, .. } => {
                let t = theta[0];
                if !(t > 0.0 && t < 1.0) {
                    return Ok(f64::NEG_INFINITY);
                }
                log_norm + (a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln()
            }
            Inner::Gaussian { mu, prec, log_norm, .. } => {
                let r = theta - mu;
                log_norm - 0.5 * r.dot(&(prec * &r))
            }
            Inner::GaussianInvGamma { m, v, a, b, log_norm, .. } => {
                let (mu, s2) = (theta[0], theta[1]);
                if !(s2 > 0.0) {
                    return Ok(f64::NEG_INFINITY);
                }
                log_norm - (a + 1.0) * s2.ln() - b / s2 - (mu - m).powi(2) / (2.0 * v)
            }
        })
    }

    /// Score `∇_λ log q_λ(θ)`.
    pub fn score(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.family.check_theta(theta)?;
        match &self.inner {
            Inner::Beta { score_a, score_b, .. } => {
                let t = theta[0];
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::Domain(format!("beta draw {t} outside (0, 1)")));
                }
                Ok(DVector::from_vec(vec![score_a + t.ln(), score_b + (1.0 - t).ln()]))
            }
            Inner::Gaussian { mu, prec, .. } => {
                let pr = prec * (theta - mu);
                let block = (&pr * pr.transpose() - prec) * 0.5;
                Ok(gaussian_lambda(&pr, &block))
            }
            Inner::GaussianInvGamma { m, v, a, b, score_a, .. } => {
                let (mu, s2) = (theta[0], theta[1]);
                if !(s2 > 0.0) {
                    return Err(Error::Domain(format!("variance draw {s2} is not positive")));
                }
                let r = mu - m;
                Ok(DVector::from_vec(vec![
                    r / v,
                    -0.5 / v + r * r / (2.0 * v * v),
                    score_a - s2.ln(),
                    a / b - 1.0 / s2,
                ]))
            }
        }
    }
}
