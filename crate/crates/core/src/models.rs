//! Target posteriors: log-joint evaluation, closed-form lower bounds where
//! available, and seeded synthetic data.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::families::{cholesky, gaussian_lambda, split_gaussian, Family};
use crate::rng::{stream, Stream};
use crate::specfun::{lgamma, log_beta, psi, psi1};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The fixed observations of the normal / inverse-gamma example.
pub const NORMAL_EXAMPLE_DATA: [f64; 10] = [11.0, 12.0, 8.0, 10.0, 9.0, 8.0, 9.0, 10.0, 13.0, 7.0];

/// Observations `y` with optional covariates `X` (`n × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Option<DMatrix<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// CSV with a header row; covariate columns `x1..xd` precede `y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.x.as_ref().map_or(0, |x| x.ncols());
        let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut row: Vec<String> = Vec::with_capacity(d + 1);
            if let Some(x) = &self.x {
                row.extend(x.row(i).iter().map(|v| format!("{v:?}")));
            }
            row.push(format!("{:?}", self.y[i]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() && !line.starts_with('#') {
                        break line;
                    }
                }
                None => return Err(Error::Io("empty dataset file".into())),
            }
        };
        let ncols = header.split(',').count();
        let d = ncols - 1;
        let mut xs = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Io(format!("dataset line {}: {e}", lineno + 2)))?;
            if vals.len() != ncols {
                return Err(Error::Io(format!(
                    "dataset line {}: expected {ncols} fields, got {}",
                    lineno + 2,
                    vals.len()
                )));
            }
            xs.extend_from_slice(&vals[..d]);
            y.push(vals[d]);
        }
        let x = (d > 0).then(|| DMatrix::from_row_slice(y.len(), d, &xs));
        Ok(Dataset { x, y })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Bernoulli observations under a uniform prior on the success probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliModel {
    pub n: usize,
    pub successes: usize,
}

/// Poisson log-linear regression with a `N(0, σ₀² I)` prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonModel {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub prior_var: f64,
    log_fact_sum: f64,
}

/// Normal observations with `N(μ₀, σ₀²)` prior on the mean and
/// `Inverse-Gamma(α₀, β₀)` prior on the variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalModel {
    pub y: Vec<f64>,
    pub mu0: f64,
    /// Prior standard deviation σ₀ of the mean.
    pub sigma0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Bernoulli(BernoulliModel),
    Poisson(PoissonModel),
    Normal(NormalModel),
}

impl BernoulliModel {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let mut successes = 0;
        for &v in &data.y {
            if v == 1.0 {
                successes += 1;
            } else if v != 0.0 {
                return Err(Error::Domain(format!("bernoulli observation {v} not in {{0,1}}")));
            }
        }
        Ok(Self {
            n: data.n(),
            successes,
        })
    }

    /// Exact posterior `Beta(κ + 1, n − κ + 1)`.
    pub fn posterior(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.successes as f64 + 1.0,
            (self.n - self.successes) as f64 + 1.0,
        ])
    }

    /// `log p(y) = ln B(κ + 1, n − κ + 1)`.
    pub fn log_evidence(&self) -> f64 {
        let p = self.posterior();
        log_beta(p[0], p[1])
    }
}

impl PoissonModel {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, prior_var: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if !(prior_var > 0.0) {
            return Err(Error::Config(format!("prior variance must be positive, got {prior_var}")));
        }
        let mut log_fact_sum = 0.0;
        for &v in &y {
            if !(v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::Domain(format!("poisson count {v} is not a non-negative integer")));
            }
            log_fact_sum += lgamma(v + 1.0);
        }
        Ok(Self {
            x,
            y,
            prior_var,
            log_fact_sum,
        })
    }

    pub fn from_dataset(data: &Dataset, prior_var: f64) -> Result<Self> {
        let x = data
            .x
            .clone()
            .ok_or_else(|| Error::Config("poisson regression needs covariates".into()))?;
        Self::new(x, data.y.clone(), prior_var)
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    fn log_likelihood(&self, theta: &DVector<f64>) -> f64 {
        let eta = &self.x * theta;
        let mut acc = -self.log_fact_sum;
        for (e, y) in eta.iter().zip(&self.y) {
            acc += y * e - e.exp();
        }
        acc
    }

    /// `w_i = exp(x_iᵀμ + ½ x_iᵀΣx_i)`
    fn weights(&self, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
        let eta = &self.x * mu;
        let xs = &self.x * sigma;
        DVector::from_fn(self.x.nrows(), |i, _| {
            (eta[i] + 0.5 * xs.row(i).dot(&self.x.row(i))).exp()
        })
    }

    pub fn exact_lb(&self, lambda: &DVector<f64>) -> Result<f64> {
        let d = self.d();
        let (mu, sigma) = split_gaussian(lambda, d);
        let chol = cholesky(&sigma)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let w = self.weights(&mu, &sigma);
        let y = DVector::from_column_slice(&self.y);
        let s2 = self.prior_var;
        Ok(y.dot(&(&self.x * &mu)) - w.sum() - self.log_fact_sum
            - (mu.dot(&mu) + sigma.trace()) / (2.0 * s2)
            + 0.5 * log_det
            + 0.5 * d as f64 * (1.0 - s2.ln()))
    }

    /// `(∇_μ LB, ∇_Σ LB)` at `λ`.
    pub fn exact_lb_gradient_parts(&self, lambda: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.d();
        let (mu, sigma) = split_gaussian(lambda, d);
        let prec = cholesky(&sigma)?.inverse();
        let w = self.weights(&mu, &sigma);
        let y = DVector::from_column_slice(&self.y);
        let grad_mu = self.x.transpose() * (y - &w) - &mu / self.prior_var;
        let xtwx = self.x.transpose() * DMatrix::from_diagonal(&w) * &self.x;
        let grad_sigma = (prec - DMatrix::identity(d, d) / self.prior_var - xtwx) * 0.5;
        Ok((grad_mu, grad_sigma))
    }
}

impl NormalModel {
    pub fn example(y: Vec<f64>) -> Self {
        Self {
            y,
            mu0: 0.0,
            sigma0: 10.0,
            alpha0: 1.0,
            beta0: 1.0,
        }
    }

    fn sum_sq(&self, m: f64) -> f64 {
        self.y.iter().map(|y| (y - m).powi(2)).sum()
    }

    /// Closed-form `LB(λ)` for the mean-field Gaussian × Inverse-Gamma family.
    pub fn exact_lb(&self, lambda: &DVector<f64>) -> Result<f64> {
        Family::GaussianInvGamma.check_domain(lambda)?;
        let (m, v, a, b) = (lambda[0], lambda[1], lambda[2], lambda[3]);
        let n = self.y.len() as f64;
        let var0 = self.sigma0 * self.sigma0;
        let k = n / 2.0 + self.alpha0 + 1.0;
        let c = self.beta0 + 0.5 * (self.sum_sq(m) + n * v);
        let e_log_s2 = b.ln() - psi(a);
        let e_inv_s2 = a / b;
        let expected_joint = -(n + 1.0) / 2.0 * LN_2PI - 0.5 * var0.ln()
            - ((m - self.mu0).powi(2) + v) / (2.0 * var0)
            + self.alpha0 * self.beta0.ln()
            - lgamma(self.alpha0)
            - k * e_log_s2
            - c * e_inv_s2;
        let entropy = 0.5 * (LN_2PI + 1.0 + v.ln()) + a + b.ln() + lgamma(a) - (1.0 + a) * psi(a);
        Ok(expected_joint + entropy)
    }

    /// Closed-form `∇_λ LB(λ)`.
    pub fn exact_lb_gradient(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        Family::GaussianInvGamma.check_domain(lambda)?;
        let (m, v, a, b) = (lambda[0], lambda[1], lambda[2], lambda[3]);
        let n = self.y.len() as f64;
        let var0 = self.sigma0 * self.sigma0;
        let k = n / 2.0 + self.alpha0 + 1.0;
        let c = self.beta0 + 0.5 * (self.sum_sq(m) + n * v);
        let resid: f64 = self.y.iter().map(|y| y - m).sum();
        Ok(DVector::from_vec(vec![
            -(m - self.mu0) / var0 + a / b * resid,
            -0.5 / var0 - 0.5 * n * a / b + 0.5 / v,
            (k - 1.0 - a) * psi1(a) - c / b + 1.0,
            (1.0 - k) / b + c * a / (b * b),
        ]))
    }

    /// Mean-field optimum by coordinate ascent to a fixed point.
    pub fn optimum(&self) -> DVector<f64> {
        let n = self.y.len() as f64;
        let var0 = self.sigma0 * self.sigma0;
        let ybar = self.y.iter().sum::<f64>() / n;
        let a = self.alpha0 + n / 2.0;
        let (mut m, mut v, mut b) = (ybar, 1.0, 1.0);
        for _ in 0..1000 {
            let prec = 1.0 / var0 + n * a / b;
            let m_new = (self.mu0 / var0 + n * ybar * a / b) / prec;
            let v_new = 1.0 / prec;
            let b_new = self.beta0 + 0.5 * (self.sum_sq(m_new) + n * v_new);
            let change = (m_new - m).abs() + (v_new - v).abs() + (b_new - b).abs();
            (m, v, b) = (m_new, v_new, b_new);
            if change < 1e-15 {
                break;
            }
        }
        DVector::from_vec(vec![m, v, a, b])
    }

    fn log_joint(&self, theta: &DVector<f64>) -> f64 {
        let (mu, s2) = (theta[0], theta[1]);
        if !(s2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        let n = self.y.len() as f64;
        let sq: f64 = self.y.iter().map(|y| (y - mu).powi(2)).sum();
        let var0 = self.sigma0 * self.sigma0;
        -(n + 1.0) / 2.0 * LN_2PI - 0.5 * var0.ln() - (mu - self.mu0).powi(2) / (2.0 * var0)
            + self.alpha0 * self.beta0.ln()
            - lgamma(self.alpha0)
            - (n / 2.0 + self.alpha0 + 1.0) * s2.ln()
            - self.beta0 / s2
            - sq / (2.0 * s2)
    }
}

impl Model {
    /// The variational family this model is paired with.
    pub fn family(&self) -> Family {
        match self {
            Model::Bernoulli(_) => Family::Beta,
            Model::Poisson(m) => Family::GaussianFull { d: m.d() },
            Model::Normal(_) => Family::GaussianInvGamma,
        }
    }

    pub fn check_family(&self, family: Family) -> Result<()> {
        if family != self.family() {
            return Err(Error::Unsupported(format!(
                "family {family} cannot be paired with this model (expected {})",
                self.family()
            )));
        }
        Ok(())
    }

    /// `log p(θ) + log p(y | θ)`; `-∞` outside the parameter support.
    pub fn log_joint(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Model::Bernoulli(m) => {
                let t = theta[0];
                if !(t > 0.0 && t < 1.0) {
                    return f64::NEG_INFINITY;
                }
                m.successes as f64 * t.ln() + (m.n - m.successes) as f64 * (1.0 - t).ln()
            }
            Model::Poisson(m) => {
                let d = m.d() as f64;
                -0.5 * d * (LN_2PI + m.prior_var.ln()) - theta.dot(theta) / (2.0 * m.prior_var)
                    + m.log_likelihood(theta)
            }
            Model::Normal(m) => m.log_joint(theta),
        }
    }

    /// Closed-form `LB(λ)` where available.
    pub fn exact_lb(&self, family: Family, lambda: &DVector<f64>) -> Result<Option<f64>> {
        match (self, family) {
            (Model::Poisson(m), Family::GaussianFull { d }) if d == m.d() => m.exact_lb(lambda).map(Some),
            (Model::Normal(m), Family::GaussianInvGamma) => m.exact_lb(lambda).map(Some),
            _ => Ok(None),
        }
    }

    /// Closed-form Euclidean gradient `∇_λ LB(λ)` where available.
    pub fn exact_lb_gradient(&self, family: Family, lambda: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        match (self, family) {
            (Model::Bernoulli(m), Family::Beta) => {
                family.check_domain(lambda)?;
                let (a, b) = (lambda[0], lambda[1]);
                let p = m.posterior();
                let (ra, rb) = (p[0] - a, p[1] - b);
                let common = psi1(a + b);
                Ok(Some(DVector::from_vec(vec![
                    ra * (psi1(a) - common) - rb * common,
                    rb * (psi1(b) - common) - ra * common,
                ])))
            }
            (Model::Poisson(m), Family::GaussianFull { d }) if d == m.d() => {
                let (gm, gs) = m.exact_lb_gradient_parts(lambda)?;
                Ok(Some(gaussian_lambda(&gm, &gs)))
            }
            (Model::Normal(m), Family::GaussianInvGamma) => m.exact_lb_gradient(lambda).map(Some),
            _ => Ok(None),
        }
    }

    /// The exact optimum `λ*` when it is known in closed form.
    pub fn optimum(&self) -> Option<DVector<f64>> {
        match self {
            Model::Bernoulli(m) => Some(m.posterior()),
            Model::Normal(m) => Some(m.optimum()),
            Model::Poisson(_) => None,
        }
    }
}

/// Recipes for synthetic datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticSpec {
    /// `n` Bernoulli(`p`) draws; with `fix_successes` the dataset instead
    /// contains exactly that many ones at seeded random positions.
    Bernoulli {
        n: usize,
        p: f64,
        fix_successes: Option<usize>,
    },
    /// Standard-normal covariates and `y_i ~ Poisson(exp(x_iᵀθ))`.
    Poisson { n: usize, theta: Vec<f64> },
    /// The fixed ten-point normal dataset.
    NormalFixed,
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, Stream::Data);
    match spec {
        SyntheticSpec::Bernoulli { n, p, fix_successes } => {
            let y = match fix_successes {
                Some(k) => {
                    if k > n {
                        return Err(Error::Config(format!("cannot place {k} successes in {n} trials")));
                    }
                    let mut y: Vec<f64> = (0..*n).map(|i| if i < *k { 1.0 } else { 0.0 }).collect();
                    y.shuffle(&mut rng);
                    y
                }
                None => {
                    let dist = Bernoulli::new(*p).map_err(|e| Error::Config(e.to_string()))?;
                    (0..*n).map(|_| if dist.sample(&mut rng) { 1.0 } else { 0.0 }).collect()
                }
            };
            Ok(Dataset { x: None, y })
        }
        SyntheticSpec::Poisson { n, theta } => {
            let d = theta.len();
            let x = DMatrix::from_fn(*n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let eta = &x * DVector::from_column_slice(theta);
            let mut y = Vec::with_capacity(*n);
            for e in eta.iter() {
                let rate = e.exp();
                let v = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|err| Error::numeric(format!("poisson rate {rate}: {err}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                y.push(v);
            }
            Ok(Dataset { x: Some(x), y })
        }
        SyntheticSpec::NormalFixed => Ok(Dataset {
            x: None,
            y: NORMAL_EXAMPLE_DATA.to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Family;
    use nalgebra::dvector;

    fn example1() -> Model {
        let data = generate_synthetic(
            &SyntheticSpec::Bernoulli {
                n: 200,
                p: 0.3,
                fix_successes: Some(57),
            },
            1,
        )
        .unwrap();
        Model::Bernoulli(BernoulliModel::from_dataset(&data).unwrap())
    }

    // Closed-form LB of the Beta / Bernoulli pair, written out independently:
    // LB = κ E[ln θ] + (n-κ) E[ln(1-θ)] + entropy(Beta(a, b)).
    fn beta_bernoulli_lb(kappa: f64, n: f64, a: f64, b: f64) -> f64 {
        use crate::specfun::psi;
        let e_ln = psi(a) - psi(a + b);
        let e_ln1m = psi(b) - psi(a + b);
        let entropy = log_beta(a, b) - (a - 1.0) * psi(a) - (b - 1.0) * psi(b) + (a + b - 2.0) * psi(a + b);
        kappa * e_ln + (n - kappa) * e_ln1m + entropy
    }

    #[test]
    fn fixed_kappa_dataset() {
        let data = generate_synthetic(
            &SyntheticSpec::Bernoulli {
                n: 200,
                p: 0.3,
                fix_successes: Some(57),
            },
            5,
        )
        .unwrap();
        assert_eq!(data.y.iter().sum::<f64>(), 57.0);
        assert_eq!(data.n(), 200);
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticSpec::Poisson {
            n: 30,
            theta: vec![1.0, 1.0],
        };
        assert_eq!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&spec, 4).unwrap());
        assert_ne!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&spec, 5).unwrap());
        let normal = generate_synthetic(&SyntheticSpec::NormalFixed, 0).unwrap();
        assert_eq!(normal.y, vec![11.0, 12.0, 8.0, 10.0, 9.0, 8.0, 9.0, 10.0, 13.0, 7.0]);
    }

    #[test]
    fn bernoulli_log_joint() {
        let m = example1();
        let v = m.log_joint(&dvector![0.5]);
        assert!((v + 200.0 * 2f64.ln()).abs() < 1e-10);
        assert_eq!(m.log_joint(&dvector![1.5]), f64::NEG_INFINITY);
    }

    #[test]
    fn normal_log_joint_matches_transcription() {
        let m = Model::Normal(NormalModel::example(NORMAL_EXAMPLE_DATA.to_vec()));
        // h(0, 1) with n = 10, Σ y² = 973, μ₀ = 0, σ₀ = 10, α₀ = β₀ = 1:
        // ln σ² = 0 and ln β₀ = ln Γ(α₀) = 0 drop out.
        let expected = -5.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * 100f64.ln() - 1.0 - 973.0 / 2.0;
        assert!((m.log_joint(&dvector![0.0, 1.0]) - expected).abs() < 1e-10);
        assert_eq!(m.log_joint(&dvector![0.0, -1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn poisson_log_likelihood_matches_naive_sum() {
        let data = generate_synthetic(
            &SyntheticSpec::Poisson {
                n: 8,
                theta: vec![0.5, -0.2],
            },
            2,
        )
        .unwrap();
        let m = PoissonModel::from_dataset(&data, 100.0).unwrap();
        let theta = dvector![0.3, 0.1];
        let x = data.x.as_ref().unwrap();
        let mut naive = 0.0;
        for i in 0..8 {
            let rate = (x[(i, 0)] * 0.3 + x[(i, 1)] * 0.1).exp();
            let mut log_fact = 0.0;
            for k in 1..=(data.y[i] as u64) {
                log_fact += (k as f64).ln();
            }
            naive += data.y[i] * rate.ln() - rate - log_fact;
        }
        assert!((m.log_likelihood(&theta) - naive).abs() < 1e-10);
    }

    #[test]
    fn exact_posterior_makes_h_constant() {
        let m = example1();
        let Model::Bernoulli(inner) = &m else { unreachable!() };
        let lambda = dvector![58.0, 144.0];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 1..=100 {
            let t = dvector![i as f64 / 101.0];
            let h = m.log_joint(&t) - Family::Beta.log_density(&lambda, &t).unwrap();
            lo = lo.min(h);
            hi = hi.max(h);
        }
        assert!(hi - lo <= 1e-8);
        assert!((hi - inner.log_evidence()).abs() < 1e-8);
    }

    #[test]
    fn beta_gradient_vanishes_at_posterior() {
        let m = example1();
        let g = m.exact_lb_gradient(Family::Beta, &dvector![58.0, 144.0]).unwrap().unwrap();
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn beta_gradient_matches_finite_differences() {
        let m = example1();
        let (a, b) = (5.0, 45.0);
        let g = m.exact_lb_gradient(Family::Beta, &dvector![a, b]).unwrap().unwrap();
        let h = 1e-5;
        let fd_a = (beta_bernoulli_lb(57.0, 200.0, a + h, b) - beta_bernoulli_lb(57.0, 200.0, a - h, b)) / (2.0 * h);
        let fd_b = (beta_bernoulli_lb(57.0, 200.0, a, b + h) - beta_bernoulli_lb(57.0, 200.0, a, b - h)) / (2.0 * h);
        assert!((g[0] - fd_a).abs() <= 1e-6, "{} vs {}", g[0], fd_a);
        assert!((g[1] - fd_b).abs() <= 1e-6, "{} vs {}", g[1], fd_b);
    }

    #[test]
    fn poisson_gradient_matches_finite_differences() {
        let data = generate_synthetic(
            &SyntheticSpec::Poisson {
                n: 20,
                theta: vec![1.0, 1.0],
            },
            3,
        )
        .unwrap();
        let m = Model::Poisson(PoissonModel::from_dataset(&data, 100.0).unwrap());
        let family = Family::GaussianFull { d: 2 };
        let lambda = dvector![0.2, 0.4, 0.05, 0.01, 0.01, 0.03];
        let g = m.exact_lb_gradient(family, &lambda).unwrap().unwrap();
        let h = 1e-6;
        for i in 0..lambda.len() {
            let mut up = lambda.clone();
            let mut dn = lambda.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (m.exact_lb(family, &up).unwrap().unwrap() - m.exact_lb(family, &dn).unwrap().unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(1.0);
            assert!(rel <= 1e-5, "coord {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn normal_gradient_matches_finite_differences() {
        let m = Model::Normal(NormalModel::example(NORMAL_EXAMPLE_DATA.to_vec()));
        let family = Family::GaussianInvGamma;
        let lambda = dvector![9.0, 0.4, 2.5, 7.0];
        let g = m.exact_lb_gradient(family, &lambda).unwrap().unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut up = lambda.clone();
            let mut dn = lambda.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (m.exact_lb(family, &up).unwrap().unwrap() - m.exact_lb(family, &dn).unwrap().unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(1.0);
            assert!(rel <= 1e-5, "coord {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn normal_exact_lb_matches_monte_carlo() {
        let m = Model::Normal(NormalModel::example(NORMAL_EXAMPLE_DATA.to_vec()));
        let family = Family::GaussianInvGamma;
        let lambda = dvector![9.7, 0.5, 3.0, 8.0];
        let exact = m.exact_lb(family, &lambda).unwrap().unwrap();
        let mut rng = stream(11, Stream::Evaluation);
        let (mc, se) = crate::elbo::estimate_lb_stats(&m, family, &lambda, 100_000, &mut rng).unwrap();
        assert!((mc - exact).abs() <= 3.0 * se, "{mc} ± {se} vs {exact}");
    }

    #[test]
    fn normal_gradient_vanishes_at_optimum() {
        let m = Model::Normal(NormalModel::example(NORMAL_EXAMPLE_DATA.to_vec()));
        let opt = m.optimum().unwrap();
        assert_eq!(opt[2], 6.0);
        let g = m.exact_lb_gradient(Family::GaussianInvGamma, &opt).unwrap().unwrap();
        assert!(g.amax() < 1e-10, "{g}");
    }

    #[test]
    fn exact_lb_dispatch() {
        let m = example1();
        assert_eq!(m.exact_lb(Family::Beta, &dvector![2.0, 3.0]).unwrap(), None);
        assert!(m.check_family(Family::GaussianInvGamma).is_err());
    }

    #[test]
    fn exact_lb_prefers_shrunk_mean_far_from_optimum() {
        // With a tiny covariance and a mean far along the positive direction,
        // halving the mean raises the bound.
        let data = generate_synthetic(
            &SyntheticSpec::Poisson {
                n: 50,
                theta: vec![0.1, 0.1],
            },
            8,
        )
        .unwrap();
        let m = Model::Poisson(PoissonModel::from_dataset(&data, 100.0).unwrap());
        let family = Family::GaussianFull { d: 2 };
        let far = dvector![4.0, 4.0, 1e-4, 0.0, 0.0, 1e-4];
        let half = dvector![2.0, 2.0, 1e-4, 0.0, 0.0, 1e-4];
        assert!(m.exact_lb(family, &half).unwrap().unwrap() > m.exact_lb(family, &far).unwrap().unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let data = generate_synthetic(
            &SyntheticSpec::Poisson {
                n: 5,
                theta: vec![1.0, 1.0, 1.0],
            },
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,y\n"));
        let back = Dataset::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, data);
    }
}
