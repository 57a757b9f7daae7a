//! Experiment specs, seeded runs, trace files and Fisher diagnostics.
//!
//! A spec is flat `key=value` text. Tokens are separated by whitespace and
//! `#` starts a comment running to the end of the line:
//!
//! ```text
//! experiment=example1   # example1 | example2 | example5 | custom
//! optimizer=ifvb,aifvb
//! seed=42
//! ```
//!
//! See [`KEYS`] for the full key list.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::families::{gaussian_lambda, Family};
use crate::fisher::{Capacity, DenseFisherInverse, FisherConfig, FisherMode};
use crate::models::{generate_synthetic, BernoulliModel, Dataset, Model, NormalModel, PoissonModel, SyntheticSpec};
use crate::optim::{run, GradientSource, OptimizerConfig, OptimizerKind, RunOutcome};
use crate::rng::{stream, Stream};
use crate::trace::{emit_trace, TraceStatus};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "IFVB_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "traces";

/// Recognised spec keys.
pub const KEYS: &[&str] = &[
    "experiment",
    "model",
    "optimizer",
    "seed",
    "lambda0",
    "c_alpha",
    "c_alpha_prime",
    "alpha",
    "epsilon",
    "c_beta",
    "beta",
    "capacity",
    "fisher_mode",
    "batch",
    "gradient",
    "w",
    "clip",
    "tol",
    "max_iters",
    "fisher_samples",
    "eval_samples",
    "strict_rates",
    "prior_var",
    "data",
    "output",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Bernoulli data with a uniform prior, Beta approximation.
    Example1,
    /// Poisson regression, full-covariance Gaussian approximation.
    Example2,
    /// Normal data, Gaussian × inverse-gamma mean-field approximation.
    Example5,
    Custom,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example5 => "example5",
            Self::Custom => "custom",
        }
    }

    fn default_model(self) -> Option<ModelKind> {
        match self {
            Self::Example1 => Some(ModelKind::Bernoulli),
            Self::Example2 => Some(ModelKind::Poisson),
            Self::Example5 => Some(ModelKind::Normal),
            Self::Custom => None,
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(Self::Example1),
            "example2" => Ok(Self::Example2),
            "example5" => Ok(Self::Example5),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::parse("experiment", format!("unknown experiment `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bernoulli,
    Poisson,
    Normal,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bernoulli => "bernoulli",
            Self::Poisson => "poisson",
            Self::Normal => "normal",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Self::Bernoulli),
            "poisson" => Ok(Self::Poisson),
            "normal" => Ok(Self::Normal),
            _ => Err(Error::parse("model", format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// The experiment's standard dataset (simulated from the run seed where
    /// the experiment calls for simulation).
    Builtin,
    Simulate(u64),
    Csv(PathBuf),
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Builtin => f.write_str("builtin"),
            Self::Simulate(seed) => write!(f, "simulate:{seed}"),
            Self::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(Self::Builtin)
        } else if let Some(seed) = s.strip_prefix("simulate:") {
            seed.parse()
                .map(Self::Simulate)
                .map_err(|_| Error::parse("data", format!("bad simulation seed `{seed}`")))
        } else if s.is_empty() {
            Err(Error::parse("data", "empty data source"))
        } else {
            Ok(Self::Csv(PathBuf::from(s.strip_prefix("csv:").unwrap_or(s))))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub model: ModelKind,
    pub optimizers: Vec<OptimizerKind>,
    /// Starting point; `None` uses the family's default for the loaded data.
    pub lambda0: Option<Vec<f64>>,
    pub config: OptimizerConfig,
    /// Prior variance of the regression coefficients (Poisson model).
    pub prior_var: f64,
    pub data: DataSource,
    pub output: PathBuf,
}

/// Output directory used when a spec does not name one.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

impl ExperimentSpec {
    /// The preset for an experiment, before any keys are applied.
    pub fn preset(experiment: Experiment, model: ModelKind) -> Self {
        let mut config = OptimizerConfig::default();
        let mut lambda0 = None;
        match experiment {
            Experiment::Example1 => {
                config.c_alpha = 10.0;
                config.c_alpha_prime = 1.0;
                config.alpha = 0.6;
                config.fisher.c_beta = 0.0;
                config.gradient = GradientSource::Exact;
                lambda0 = Some(vec![5.0, 45.0]);
            }
            Experiment::Example2 => {
                config.c_alpha = 1.0;
                config.c_alpha_prime = 1000.0;
                config.alpha = 0.75;
                config.fisher.beta = 0.2;
                config.gradient = GradientSource::Exact;
                config.fisher_samples = 100;
                config.max_iters = 3000;
                let d = EXAMPLE2_THETA.len();
                lambda0 = Some(
                    gaussian_lambda(&DVector::zeros(d), &(DMatrix::identity(d, d) * 1e-2))
                        .as_slice()
                        .to_vec(),
                );
            }
            Experiment::Example5 => {
                config.c_alpha = 2.0;
                config.c_alpha_prime = 10.0;
                config.alpha = 0.75;
                config.fisher.c_beta = 0.0;
                config.fisher.beta = 0.2;
                config.gradient = GradientSource::Exact;
                let ybar = crate::models::NORMAL_EXAMPLE_DATA.iter().sum::<f64>()
                    / crate::models::NORMAL_EXAMPLE_DATA.len() as f64;
                lambda0 = Some(vec![ybar, 0.5, 1.0, 1.0]);
            }
            Experiment::Custom => {}
        }
        Self {
            experiment,
            model,
            optimizers: vec![OptimizerKind::Ifvb],
            lambda0,
            config,
            prior_var: 100.0,
            data: DataSource::Builtin,
            output: default_output_dir(),
        }
    }

    /// Key/value pairs covering every setting, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.config;
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("experiment", self.experiment.to_string()),
            ("model", self.model.as_str().to_string()),
            (
                "optimizer",
                self.optimizers.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","),
            ),
            ("seed", c.seed.to_string()),
        ];
        if let Some(l) = &self.lambda0 {
            out.push(("lambda0", list(l)));
        }
        out.extend([
            ("c_alpha", format!("{:?}", c.c_alpha)),
            ("c_alpha_prime", format!("{:?}", c.c_alpha_prime)),
            ("alpha", format!("{:?}", c.alpha)),
            ("epsilon", format!("{:?}", c.fisher.epsilon)),
            ("c_beta", format!("{:?}", c.fisher.c_beta)),
            ("beta", format!("{:?}", c.fisher.beta)),
            (
                "capacity",
                match c.fisher.capacity {
                    Capacity::Bounded(k) => k.to_string(),
                    Capacity::Unbounded => "unbounded".into(),
                },
            ),
            ("fisher_mode", c.fisher.mode.to_string()),
            ("batch", c.batch.to_string()),
            ("gradient", c.gradient.to_string()),
            ("w", format!("{:?}", c.w)),
            ("clip", c.clip_threshold.map_or("none".into(), |v| format!("{v:?}"))),
            ("tol", format!("{:?}", c.tol)),
            ("max_iters", c.max_iters.to_string()),
            ("fisher_samples", c.fisher_samples.to_string()),
            ("eval_samples", c.eval_samples.to_string()),
            ("strict_rates", c.strict_rates.to_string()),
            ("prior_var", format!("{:?}", self.prior_var)),
            ("data", self.data.to_string()),
            ("output", self.output.display().to_string()),
        ]);
        out
    }

    pub fn family_if_known(&self) -> Option<Family> {
        match self.model {
            ModelKind::Bernoulli => Some(Family::Beta),
            ModelKind::Normal => Some(Family::GaussianInvGamma),
            ModelKind::Poisson => match self.data {
                DataSource::Csv(_) => None,
                _ => Some(Family::GaussianFull { d: EXAMPLE2_THETA.len() }),
            },
        }
    }
}

/// Regression coefficients used to simulate the Poisson dataset.
pub const EXAMPLE2_THETA: [f64; 3] = [1.0, 1.0, 1.0];
pub const EXAMPLE2_N: usize = 200;
pub const EXAMPLE1_N: usize = 200;
pub const EXAMPLE1_SUCCESSES: usize = 57;

/// Splits spec text into `key=value` tokens, dropping comments.
fn tokens(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(tok, "expected key=value"))?;
            if !KEYS.contains(&k) {
                return Err(Error::parse(k, "unknown key"));
            }
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(key, format!("cannot parse `{v}`")))
}

fn real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(Error::parse(key, format!("`{v}` is not finite")));
    }
    Ok(x)
}

/// Parses and validates spec text, filling unset keys from the experiment
/// preset.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let toks = tokens(text)?;
    let get = |key: &str| toks.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

    let experiment: Experiment = get("experiment")
        .ok_or_else(|| Error::parse("experiment", "missing required key"))?
        .parse()?;
    let model = match (get("model"), experiment.default_model()) {
        (Some(m), None) => m.parse()?,
        (Some(m), Some(def)) => {
            let m: ModelKind = m.parse()?;
            if m != def {
                return Err(Error::parse("model", format!("{experiment} uses the {} model", def.as_str())));
            }
            m
        }
        (None, Some(def)) => def,
        (None, None) => return Err(Error::parse("model", "custom experiments need a model")),
    };
    let mut spec = ExperimentSpec::preset(experiment, model);

    for (key, v) in &toks {
        let (key, v) = (key.as_str(), v.as_str());
        let c = &mut spec.config;
        match key {
            "experiment" | "model" => {}
            "optimizer" => {
                spec.optimizers = v
                    .split(',')
                    .map(|s| s.parse::<OptimizerKind>().map_err(|e| Error::parse(key, e.to_string())))
                    .collect::<Result<_>>()?;
                if spec.optimizers.is_empty() {
                    return Err(Error::parse(key, "no optimizer given"));
                }
            }
            "seed" => c.seed = num(key, v)?,
            "lambda0" => {
                spec.lambda0 = Some(v.split(',').map(|t| real(key, t)).collect::<Result<_>>()?);
            }
            "c_alpha" => c.c_alpha = real(key, v)?,
            "c_alpha_prime" => c.c_alpha_prime = real(key, v)?,
            "alpha" => c.alpha = real(key, v)?,
            "epsilon" => c.fisher.epsilon = real(key, v)?,
            "c_beta" => c.fisher.c_beta = real(key, v)?,
            "beta" => c.fisher.beta = real(key, v)?,
            "capacity" => {
                c.fisher.capacity = if v == "unbounded" {
                    Capacity::Unbounded
                } else {
                    Capacity::Bounded(num(key, v)?)
                }
            }
            "fisher_mode" => c.fisher.mode = v.parse::<FisherMode>().map_err(|e| Error::parse(key, e.to_string()))?,
            "batch" => c.batch = num(key, v)?,
            "gradient" => c.gradient = v.parse().map_err(|e: Error| Error::parse(key, e.to_string()))?,
            "w" => c.w = real(key, v)?,
            "clip" => c.clip_threshold = if v == "none" { None } else { Some(real(key, v)?) },
            "tol" => c.tol = real(key, v)?,
            "max_iters" => c.max_iters = num(key, v)?,
            "fisher_samples" => c.fisher_samples = num(key, v)?,
            "eval_samples" => c.eval_samples = num(key, v)?,
            "strict_rates" => c.strict_rates = num(key, v)?,
            "prior_var" => spec.prior_var = real(key, v)?,
            "data" => spec.data = v.parse()?,
            "output" => spec.output = PathBuf::from(v),
            _ => unreachable!("key list checked in tokens()"),
        }
    }
    validate_spec(&spec)?;
    Ok(spec)
}

/// Range and compatibility checks, reported against the offending key.
pub fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    let c = &spec.config;
    let f = &c.fisher;
    let check = |ok: bool, key: &str, msg: String| if ok { Ok(()) } else { Err(Error::parse(key, msg)) };
    check(c.c_alpha > 0.0, "c_alpha", format!("must be positive, got {}", c.c_alpha))?;
    check(c.c_alpha_prime >= 0.0, "c_alpha_prime", format!("must be non-negative, got {}", c.c_alpha_prime))?;
    check(c.alpha > 0.0, "alpha", format!("must be positive, got {}", c.alpha))?;
    check(
        !c.strict_rates || (c.alpha > 0.5 && c.alpha < 1.0),
        "alpha",
        format!("must lie in (1/2, 1) with strict_rates, got {}", c.alpha),
    )?;
    check(f.epsilon > 0.0, "epsilon", format!("must be positive, got {}", f.epsilon))?;
    check(f.c_beta >= 0.0, "c_beta", format!("must be non-negative, got {}", f.c_beta))?;
    check(
        f.c_beta == 0.0 || (f.beta > 0.0 && f.beta < c.alpha - 0.5),
        "beta",
        format!("must lie in (0, alpha - 1/2) = (0, {}) when c_beta > 0, got {}", c.alpha - 0.5, f.beta),
    )?;
    check(f.capacity != Capacity::Bounded(0), "capacity", "must be at least 1".into())?;
    check(c.batch >= 1, "batch", "must be at least 1".into())?;
    check(c.w >= 0.0, "w", format!("must be non-negative, got {}", c.w))?;
    check(c.clip_threshold.is_none_or(|v| v > 0.0), "clip", "must be positive or `none`".into())?;
    check(c.tol > 0.0, "tol", format!("must be positive, got {}", c.tol))?;
    check(c.fisher_samples >= 1, "fisher_samples", "must be at least 1".into())?;
    check(c.eval_samples >= 1, "eval_samples", "must be at least 1".into())?;
    check(spec.prior_var > 0.0, "prior_var", format!("must be positive, got {}", spec.prior_var))?;
    c.validate().map_err(|e| Error::parse("config", e.to_string()))?;

    for &kind in &spec.optimizers {
        check_compatible(spec.model, kind)?;
    }
    if let (Some(l), Some(family)) = (&spec.lambda0, spec.family_if_known()) {
        let v = DVector::from_column_slice(l);
        family
            .check_domain(&v)
            .map_err(|e| Error::parse("lambda0", e.to_string()))?;
    }
    Ok(())
}

/// NGVB needs the analytic Fisher of the family, or the closed-form
/// Gaussian update that the Poisson model provides.
fn check_compatible(model: ModelKind, kind: OptimizerKind) -> Result<()> {
    let ok = match (kind, model) {
        (OptimizerKind::Ngvb, ModelKind::Bernoulli) => Family::Beta.has_exact_fisher(),
        (OptimizerKind::Ngvb, ModelKind::Normal) => Family::GaussianInvGamma.has_exact_fisher(),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::parse("optimizer", format!("{kind} is not available for the {} model", model.as_str())))
    }
}

/// Renders a spec as text that [`parse_spec`] reads back to an equal spec.
pub fn render(spec: &ExperimentSpec) -> String {
    let mut s = String::new();
    for (k, v) in spec.entries() {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s
}

/// Model, family and starting point resolved from a spec.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub family: Family,
    pub lambda0: DVector<f64>,
    pub data: Dataset,
}

fn synthetic_recipe(model: ModelKind) -> SyntheticSpec {
    match model {
        ModelKind::Bernoulli => SyntheticSpec::Bernoulli {
            n: EXAMPLE1_N,
            p: EXAMPLE1_SUCCESSES as f64 / EXAMPLE1_N as f64,
            fix_successes: Some(EXAMPLE1_SUCCESSES),
        },
        ModelKind::Poisson => SyntheticSpec::Poisson {
            n: EXAMPLE2_N,
            theta: EXAMPLE2_THETA.to_vec(),
        },
        ModelKind::Normal => SyntheticSpec::NormalFixed,
    }
}

/// Loads data and builds the model for a spec.
pub fn build_problem(spec: &ExperimentSpec) -> Result<Problem> {
    let data = match &spec.data {
        DataSource::Builtin => generate_synthetic(&synthetic_recipe(spec.model), spec.config.seed)?,
        DataSource::Simulate(seed) => generate_synthetic(&synthetic_recipe(spec.model), *seed)?,
        DataSource::Csv(path) => Dataset::load_csv(path)?,
    };
    let model = match spec.model {
        ModelKind::Bernoulli => Model::Bernoulli(BernoulliModel::from_dataset(&data)?),
        ModelKind::Poisson => Model::Poisson(PoissonModel::from_dataset(&data, spec.prior_var)?),
        ModelKind::Normal => {
            if data.y.is_empty() {
                return Err(Error::Config("normal model needs at least one observation".into()));
            }
            Model::Normal(NormalModel::example(data.y.clone()))
        }
    };
    let family = model.family();
    let lambda0 = match &spec.lambda0 {
        Some(l) => {
            if l.len() != family.dim() {
                return Err(Error::Shape {
                    expected: family.dim(),
                    got: l.len(),
                });
            }
            DVector::from_column_slice(l)
        }
        None => default_lambda0(family, &data),
    };
    family.check_domain(&lambda0)?;
    Ok(Problem {
        model,
        family,
        lambda0,
        data,
    })
}

fn default_lambda0(family: Family, data: &Dataset) -> DVector<f64> {
    match family {
        Family::Beta => DVector::from_vec(vec![1.0, 1.0]),
        Family::GaussianFull { d } => gaussian_lambda(&DVector::zeros(d), &DMatrix::identity(d, d)),
        Family::GaussianInvGamma => {
            let ybar = data.y.iter().sum::<f64>() / data.n().max(1) as f64;
            DVector::from_vec(vec![ybar, 1.0, 1.0, 1.0])
        }
    }
}

/// One optimizer's result within an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub kind: OptimizerKind,
    pub path: PathBuf,
    pub outcome: RunOutcome,
}

pub fn trace_path(spec: &ExperimentSpec, kind: OptimizerKind) -> PathBuf {
    spec.output.join(format!("{}_{}.csv", spec.experiment, kind))
}

fn metadata(spec: &ExperimentSpec, problem: &Problem, kind: OptimizerKind) -> Vec<(String, String)> {
    let mut meta = vec![
        ("library".to_string(), format!("ifvb {}", env!("CARGO_PKG_VERSION"))),
        ("run_optimizer".to_string(), kind.to_string()),
        ("family".to_string(), problem.family.to_string()),
        ("n_obs".to_string(), problem.data.n().to_string()),
    ];
    meta.extend(spec.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    meta.push((
        "lambda_start".to_string(),
        problem
            .lambda0
            .iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(","),
    ));
    meta
}

fn run_one(spec: &ExperimentSpec, problem: &Problem, kind: OptimizerKind) -> Result<ExperimentRun> {
    let outcome = run(kind, &problem.model, problem.family, &problem.lambda0, &spec.config)?;
    let status = match &outcome.status {
        Ok(()) => TraceStatus::Ok,
        Err(e) => TraceStatus::Error(e.to_string()),
    };
    let path = trace_path(spec, kind);
    emit_trace(&path, &metadata(spec, problem, kind), &outcome.trace, &status)?;
    Ok(ExperimentRun { kind, path, outcome })
}

/// Runs every optimizer of the spec in turn and writes one trace per optimizer.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRun>> {
    validate_spec(spec)?;
    let problem = build_problem(spec)?;
    spec.optimizers.iter().map(|&k| run_one(spec, &problem, k)).collect()
}

/// Like [`run_experiment`], with one worker thread per optimizer. All
/// optimizers share the dataset and the seed.
pub fn compare(spec: &ExperimentSpec) -> Result<Vec<ExperimentRun>> {
    validate_spec(spec)?;
    let problem = build_problem(spec)?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .optimizers
            .iter()
            .map(|&k| {
                let problem = &problem;
                scope.spawn(move || run_one(spec, problem, k))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("worker panicked".into()))))
            .collect()
    })
}

/// Writes the standard dataset of `experiment` simulated with `seed`.
pub fn simulate(experiment: Experiment, seed: u64, out: &Path) -> Result<Dataset> {
    let model = experiment
        .default_model()
        .ok_or_else(|| Error::Config("custom experiments have no standard dataset".into()))?;
    let data = generate_synthetic(&synthetic_recipe(model), seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    data.save_csv(out)?;
    Ok(data)
}

/// One checkpoint of [`fisher_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub s: usize,
    /// Relative Frobenius error of `A_s / s` without regularizer draws.
    pub plain: f64,
    /// The same with regularizer draws.
    pub regularized: f64,
}

/// `0`, then roughly four checkpoints per decade, then `s_max`.
pub fn checkpoints(s_max: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut i = 0;
    loop {
        let s = 10f64.powf(i as f64 / 4.0).round() as usize;
        if s > s_max {
            break;
        }
        if out.last() != Some(&s) {
            out.push(s);
        }
        i += 1;
    }
    if out.last() != Some(&s_max) {
        out.push(s_max);
    }
    out
}

fn relative_error(state: &DenseFisherInverse, exact: &DMatrix<f64>) -> f64 {
    let s = state.count();
    let estimate = if s == 0 {
        DMatrix::identity(exact.nrows(), exact.ncols())
    } else {
        let a = match nalgebra::Cholesky::new(state.matrix().clone()) {
            Some(c) => c.inverse(),
            None => match state.matrix().clone().try_inverse() {
                Some(m) => m,
                None => return f64::NAN,
            },
        };
        a / s as f64
    };
    (estimate - exact).norm() / exact.norm()
}

/// Tracks `(1/s) A_s`, the inverse of the recursively updated inverse, against
/// the analytic Fisher at `lambda`. The plain variant forces `c_β = 0`; the
/// regularized one uses `config.c_beta`, or 1 when that is zero. Both
/// variants see the same score draws.
pub fn fisher_diagnostic(
    family: Family,
    lambda: &DVector<f64>,
    s_max: usize,
    config: FisherConfig,
    seed: u64,
) -> Result<Vec<DiagnosticRow>> {
    family.check_domain(lambda)?;
    let exact = family
        .exact_fisher(lambda)?
        .ok_or_else(|| Error::Unsupported(format!("no analytic Fisher information for {family}")))?;
    let base = FisherConfig {
        mode: FisherMode::Dense,
        capacity: Capacity::Unbounded,
        ..config
    };
    let mut plain = DenseFisherInverse::new(family.dim(), FisherConfig { c_beta: 0.0, ..base })?;
    let c_beta = if config.c_beta > 0.0 { config.c_beta } else { 1.0 };
    let mut reg = DenseFisherInverse::new(family.dim(), FisherConfig { c_beta, ..base })?;

    let mut theta_rng = stream(seed, Stream::Diagnostic);
    let mut z_rng = stream(seed, Stream::Regularizer);
    let marks = checkpoints(s_max);
    let mut rows = Vec::with_capacity(marks.len());
    let mut next = 0;
    for s in 0..=s_max {
        if s > 0 {
            let theta = family.sample(lambda, &mut theta_rng)?;
            let phi = family.score(lambda, &theta)?;
            plain.absorb_score(&phi)?;
            reg.absorb_score(&phi)?;
            let z = DVector::from_fn(family.dim(), |_, _| z_rng.sample::<f64, _>(StandardNormal));
            reg.absorb_regularizer(&z)?;
        }
        if marks.get(next) == Some(&s) {
            rows.push(DiagnosticRow {
                s,
                plain: relative_error(&plain, &exact),
                regularized: relative_error(&reg, &exact),
            });
            next += 1;
        }
    }
    Ok(rows)
}

pub fn write_diagnostic<W: std::io::Write>(mut w: W, rows: &[DiagnosticRow]) -> Result<()> {
    writeln!(w, "s,rel_error_plain,rel_error_regularized")?;
    for r in rows {
        writeln!(w, "{},{:.16e},{:.16e}", r.s, r.plain, r.regularized)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_gets_defaults() {
        let spec = parse_spec("experiment=example1 optimizer=ifvb seed=42").unwrap();
        assert_eq!(spec.config.seed, 42);
        assert_eq!(spec.optimizers, vec![OptimizerKind::Ifvb]);
        assert_eq!(spec.config.fisher.epsilon, 1.0);
        assert_eq!(spec.config.fisher.capacity, Capacity::Bounded(100));
        assert_eq!(spec.config.w, 2.0);
        assert_eq!(spec.config.batch, 20);
        assert_eq!(spec.config.tol, 1e-5);
        assert_eq!(spec.lambda0, Some(vec![5.0, 45.0]));
        let custom = parse_spec("experiment=custom model=normal").unwrap();
        assert_eq!(custom.config.fisher.c_beta, 1.0);
        assert_eq!(custom.config.fisher.beta, 0.3);
    }

    #[test]
    fn render_round_trips() {
        let text = "experiment=example2 optimizer=ngvb,ifvb,aifvb seed=7 clip=none capacity=unbounded \
                    c_alpha=0.3 data=simulate:11 output=/tmp/x";
        let spec = parse_spec(text).unwrap();
        assert_eq!(parse_spec(&render(&spec)).unwrap(), spec);
    }

    #[test]
    fn comments_and_newlines() {
        let spec = parse_spec("# header\nexperiment=example5 # trailing\n\n  batch=7\n").unwrap();
        assert_eq!(spec.config.batch, 7);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("experiment=example1 bogus=1", "bogus"),
            ("optimizer=ifvb", "experiment"),
            ("experiment=example2 c_beta=1 beta=0.9 alpha=0.6", "beta"),
            ("experiment=example1 optimizer=adam", "optimizer"),
            ("experiment=example1 batch=x", "batch"),
            ("experiment=example1 lambda0=1,-1", "lambda0"),
            ("experiment=custom", "model"),
        ];
        for (text, key) in cases {
            match parse_spec(text) {
                Err(Error::Parse { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(checkpoints(0), vec![0]);
        assert_eq!(checkpoints(10), vec![0, 1, 2, 3, 6, 10]);
        let c = checkpoints(200_000);
        assert_eq!(*c.last().unwrap(), 200_000);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn diagnostic_start_row_is_finite() {
        let rows = fisher_diagnostic(Family::Beta, &DVector::from_vec(vec![1.0, 1.0]), 0, FisherConfig::default(), 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].plain.is_finite());
    }

    #[test]
    fn diagnostic_needs_exact_fisher() {
        let lambda = gaussian_lambda(&DVector::zeros(1), &DMatrix::identity(1, 1));
        let r = fisher_diagnostic(Family::GaussianFull { d: 1 }, &lambda, 10, FisherConfig::default(), 1);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn simulate_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let data = simulate(Experiment::Example2, 3, &p).unwrap();
        assert_eq!(Dataset::load_csv(&p).unwrap(), data);
        assert!(simulate(Experiment::Custom, 3, &p).is_err());
    }
}
