//! Recursive estimation of the inverse Fisher information.
//!
//! The estimate of the Fisher matrix after `s` score updates and `j`
//! regularizer updates is
//!
//! ```text
//! H = ε I + Σ_k φ_k φ_kᵀ + c_β Σ_j j^{-β} Z_j Z_jᵀ
//! ```
//!
//! and its inverse is maintained with Sherman–Morrison rank-one updates, so no
//! matrix is ever inverted. Two representations are provided:
//!
//! * [`DenseFisherInverse`] keeps `H⁻¹` as a `D×D` matrix and is exact.
//! * [`CompactFisherInverse`] keeps `H⁻¹ = (1/ε) I − Σ ψ_k ψ_kᵀ` as a list of
//!   vectors and can drop the oldest outer products once a capacity `K` is
//!   reached. Matrix-vector products cost `O(K·D)`.
//!
//! Multiplying `H⁻¹` by the number of absorbed scores gives the estimate of
//! `I_F⁻¹` used by the natural-gradient optimizers.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dimension at or below which [`FisherMode::Auto`] selects the dense representation.
pub const DENSE_DIM_LIMIT: usize = 512;

/// Number of retained outer products in compact mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Bounded(usize),
    Unbounded,
}

impl Capacity {
    fn limit(self) -> usize {
        match self {
            Capacity::Bounded(k) => k,
            Capacity::Unbounded => usize::MAX,
        }
    }
}

impl Default for Capacity {
    fn default() -> Self {
        Capacity::Bounded(100)
    }
}

impl std::fmt::Display for Capacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Capacity::Bounded(k) => write!(f, "{k}"),
            Capacity::Unbounded => write!(f, "unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FisherMode {
    Dense,
    Compact,
    /// Dense for `D <= DENSE_DIM_LIMIT`, compact above.
    #[default]
    Auto,
}

impl FisherMode {
    pub fn resolve(self, dim: usize) -> FisherMode {
        match self {
            FisherMode::Auto if dim <= DENSE_DIM_LIMIT => FisherMode::Dense,
            FisherMode::Auto => FisherMode::Compact,
            other => other,
        }
    }
}

impl std::fmt::Display for FisherMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FisherMode::Dense => "dense",
            FisherMode::Compact => "compact",
            FisherMode::Auto => "auto",
        })
    }
}

impl std::str::FromStr for FisherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(FisherMode::Dense),
            "compact" => Ok(FisherMode::Compact),
            "auto" => Ok(FisherMode::Auto),
            other => Err(Error::Config(format!("unknown fisher mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherConfig {
    /// `H₀ = ε I`.
    pub epsilon: f64,
    /// Regularizer weight; zero disables the Gaussian regularizer.
    pub c_beta: f64,
    /// Regularizer decay exponent.
    pub beta: f64,
    pub capacity: Capacity,
    pub mode: FisherMode,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            c_beta: 1.0,
            beta: 0.3,
            capacity: Capacity::default(),
            mode: FisherMode::Auto,
        }
    }
}

impl FisherConfig {
    /// Checks the parameters that do not depend on the step-size exponent.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.c_beta >= 0.0 && self.c_beta.is_finite()) {
            return Err(Error::Config(format!(
                "c_beta must be non-negative, got {}",
                self.c_beta
            )));
        }
        if self.c_beta > 0.0 && !(self.beta > 0.0) {
            return Err(Error::Config(format!(
                "beta must be positive when c_beta > 0, got {}",
                self.beta
            )));
        }
        if self.capacity == Capacity::Bounded(0) {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        Ok(())
    }

    /// Full check including `beta < alpha - 1/2` when the regularizer is on.
    pub fn validate_with_alpha(&self, alpha: f64) -> Result<()> {
        self.validate()?;
        if self.c_beta > 0.0 && !(self.beta < alpha - 0.5) {
            return Err(Error::Config(format!(
                "beta must lie in (0, alpha - 1/2) = (0, {}) when c_beta > 0, got {}",
                alpha - 0.5,
                self.beta
            )));
        }
        Ok(())
    }

    /// Weight `c_β j^{-β}` of the `j`-th regularizer update (1-based).
    pub fn regularizer_weight(&self, j: usize) -> f64 {
        self.c_beta * (j as f64).powf(-self.beta)
    }
}

fn check_len(v: &DVector<f64>, dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Shape {
            expected: dim,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric_at(format!("non-finite entry in {what}"), i));
    }
    Ok(())
}

/// Dense `H⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFisherInverse {
    dim: usize,
    count: usize,
    reg_count: usize,
    inv: DMatrix<f64>,
    config: FisherConfig,
    min_denominator: f64,
}

impl DenseFisherInverse {
    pub fn new(dim: usize, config: FisherConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        config.validate()?;
        Ok(Self {
            dim,
            count: 0,
            reg_count: 0,
            inv: DMatrix::identity(dim, dim) / config.epsilon,
            config,
            min_denominator: f64::INFINITY,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reg_count(&self) -> usize {
        self.reg_count
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn config(&self) -> &FisherConfig {
        &self.config
    }

    /// Smallest `1 + w vᵀH⁻¹v` seen so far (`+∞` before any update).
    pub fn min_denominator(&self) -> f64 {
        self.min_denominator
    }

    /// `H⁻¹ ← H⁻¹ − w (1 + w vᵀH⁻¹v)⁻¹ (H⁻¹v)(H⁻¹v)ᵀ`
    fn rank_one(&mut self, v: &DVector<f64>, weight: f64) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let hv = &self.inv * v;
        let denom = 1.0 + weight * v.dot(&hv);
        if !denom.is_finite() {
            return Err(Error::numeric("non-finite Sherman-Morrison denominator"));
        }
        debug_assert!(
            denom >= 1.0 - 1e-12,
            "denominator {denom} < 1 on a positive semidefinite inverse"
        );
        self.min_denominator = self.min_denominator.min(denom);
        let scale = weight / denom;
        // u uᵀ is symmetric entry by entry, so the update keeps `inv` exactly symmetric.
        self.inv.ger(-scale, &hv, &hv, 1.0);
        Ok(())
    }

    pub fn absorb_score(&mut self, phi: &DVector<f64>) -> Result<()> {
        check_len(phi, self.dim)?;
        check_finite(phi, "score vector")?;
        self.rank_one(phi, 1.0)?;
        self.count += 1;
        Ok(())
    }

    pub fn absorb_regularizer(&mut self, z: &DVector<f64>) -> Result<()> {
        check_len(z, self.dim)?;
        check_finite(z, "regularizer vector")?;
        let weight = self.config.regularizer_weight(self.reg_count + 1);
        self.rank_one(z, weight)?;
        self.reg_count += 1;
        Ok(())
    }

    pub fn apply_inverse(&self, v: &DVector<f64>, scaled: bool) -> Result<DVector<f64>> {
        check_len(v, self.dim)?;
        let out = &self.inv * v;
        if scaled {
            if self.count == 0 {
                return Err(Error::State(
                    "scaled inverse requested before any score update".into(),
                ));
            }
            Ok(out * self.count as f64)
        } else {
            Ok(out)
        }
    }
}

/// `H⁻¹ = (1/ε) I − Σ ψψᵀ − Σ ψ_reg ψ_regᵀ`, stored as vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactFisherInverse {
    dim: usize,
    count: usize,
    reg_count: usize,
    epsilon: f64,
    psis: VecDeque<DVector<f64>>,
    reg_psis: VecDeque<DVector<f64>>,
    config: FisherConfig,
    min_denominator: f64,
    fallback_count: usize,
    evicted: usize,
}

impl CompactFisherInverse {
    pub fn new(dim: usize, config: FisherConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        config.validate()?;
        Ok(Self {
            dim,
            count: 0,
            reg_count: 0,
            epsilon: config.epsilon,
            psis: VecDeque::new(),
            reg_psis: VecDeque::new(),
            config,
            min_denominator: f64::INFINITY,
            fallback_count: 0,
            evicted: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reg_count(&self) -> usize {
        self.reg_count
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn psis(&self) -> impl ExactSizeIterator<Item = &DVector<f64>> {
        self.psis.iter()
    }

    pub fn reg_psis(&self) -> impl ExactSizeIterator<Item = &DVector<f64>> {
        self.reg_psis.iter()
    }

    pub fn min_denominator(&self) -> f64 {
        self.min_denominator
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }

    /// Whether any outer product has been dropped.
    pub fn is_truncated(&self) -> bool {
        self.evicted > 0
    }

    /// `H⁻¹ v` from the stored outer products; no matrix is formed.
    fn raw_product(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v / self.epsilon;
        for psi in self.psis.iter().chain(self.reg_psis.iter()) {
            let c = psi.dot(v);
            out.axpy(-c, psi, 1.0);
        }
        out
    }

    /// `H⁻¹ v`, falling back to `(1/ε) v` if truncation has made the implicit
    /// matrix indefinite along `v`.
    fn guarded_product(&mut self, v: &DVector<f64>) -> DVector<f64> {
        let out = self.raw_product(v);
        if v.dot(&out) <= 0.0 && v.iter().any(|&x| x != 0.0) {
            self.fallback_count += 1;
            v / self.epsilon
        } else {
            out
        }
    }

    fn push(list: &mut VecDeque<DVector<f64>>, psi: DVector<f64>, limit: usize) -> bool {
        let mut evicted = false;
        if list.len() >= limit {
            list.pop_front();
            evicted = true;
        }
        list.push_back(psi);
        evicted
    }

    fn rank_one(&mut self, v: &DVector<f64>, weight: f64, regularizer: bool) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let hv = self.guarded_product(v);
        let denom = 1.0 + weight * v.dot(&hv);
        if !denom.is_finite() {
            return Err(Error::numeric("non-finite Sherman-Morrison denominator"));
        }
        self.min_denominator = self.min_denominator.min(denom);
        let psi = hv * (weight / denom).sqrt();
        let limit = self.config.capacity.limit();
        let list = if regularizer {
            &mut self.reg_psis
        } else {
            &mut self.psis
        };
        if Self::push(list, psi, limit) {
            self.evicted += 1;
        }
        Ok(())
    }

    pub fn absorb_score(&mut self, phi: &DVector<f64>) -> Result<()> {
        check_len(phi, self.dim)?;
        check_finite(phi, "score vector")?;
        self.rank_one(phi, 1.0, false)?;
        self.count += 1;
        Ok(())
    }

    pub fn absorb_regularizer(&mut self, z: &DVector<f64>) -> Result<()> {
        check_len(z, self.dim)?;
        check_finite(z, "regularizer vector")?;
        let weight = self.config.regularizer_weight(self.reg_count + 1);
        self.rank_one(z, weight, true)?;
        self.reg_count += 1;
        Ok(())
    }

    pub fn apply_inverse(&mut self, v: &DVector<f64>, scaled: bool) -> Result<DVector<f64>> {
        check_len(v, self.dim)?;
        if scaled && self.count == 0 {
            return Err(Error::State(
                "scaled inverse requested before any score update".into(),
            ));
        }
        let out = self.guarded_product(v);
        Ok(if scaled { out * self.count as f64 } else { out })
    }

    /// Materializes the implicit matrix.
    pub fn densify(&self) -> DenseFisherInverse {
        let mut inv = DMatrix::identity(self.dim, self.dim) / self.epsilon;
        for psi in self.psis.iter().chain(self.reg_psis.iter()) {
            inv.ger(-1.0, psi, psi, 1.0);
        }
        DenseFisherInverse {
            dim: self.dim,
            count: self.count,
            reg_count: self.reg_count,
            inv,
            config: self.config,
            min_denominator: self.min_denominator,
        }
    }
}

/// Either representation behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum FisherInverseState {
    Dense(DenseFisherInverse),
    Compact(CompactFisherInverse),
}

impl FisherInverseState {
    /// Fresh state with implicit inverse `(1/ε) I`. `FisherMode::Auto` is
    /// resolved against `dim`.
    pub fn init(dim: usize, config: FisherConfig) -> Result<Self> {
        match config.mode.resolve(dim) {
            FisherMode::Compact => Ok(Self::Compact(CompactFisherInverse::new(dim, config)?)),
            _ => Ok(Self::Dense(DenseFisherInverse::new(dim, config)?)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(s) => s.dim(),
            Self::Compact(s) => s.dim(),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Self::Dense(s) => s.count(),
            Self::Compact(s) => s.count(),
        }
    }

    pub fn reg_count(&self) -> usize {
        match self {
            Self::Dense(s) => s.reg_count(),
            Self::Compact(s) => s.reg_count(),
        }
    }

    pub fn config(&self) -> &FisherConfig {
        match self {
            Self::Dense(s) => &s.config,
            Self::Compact(s) => &s.config,
        }
    }

    pub fn min_denominator(&self) -> f64 {
        match self {
            Self::Dense(s) => s.min_denominator(),
            Self::Compact(s) => s.min_denominator(),
        }
    }

    pub fn fallback_count(&self) -> usize {
        match self {
            Self::Dense(_) => 0,
            Self::Compact(s) => s.fallback_count(),
        }
    }

    pub fn absorb_score(&mut self, phi: &DVector<f64>) -> Result<()> {
        match self {
            Self::Dense(s) => s.absorb_score(phi),
            Self::Compact(s) => s.absorb_score(phi),
        }
    }

    pub fn absorb_regularizer(&mut self, z: &DVector<f64>) -> Result<()> {
        match self {
            Self::Dense(s) => s.absorb_regularizer(z),
            Self::Compact(s) => s.absorb_regularizer(z),
        }
    }

    /// `H⁻¹ v`, or `count · H⁻¹ v` when `scaled`.
    pub fn apply_inverse(&mut self, v: &DVector<f64>, scaled: bool) -> Result<DVector<f64>> {
        match self {
            Self::Dense(s) => s.apply_inverse(v, scaled),
            Self::Compact(s) => s.apply_inverse(v, scaled),
        }
    }

    /// Dense copy of the current `H⁻¹`.
    pub fn to_dense(&self) -> DenseFisherInverse {
        match self {
            Self::Dense(s) => s.clone(),
            Self::Compact(s) => s.densify(),
        }
    }
}
