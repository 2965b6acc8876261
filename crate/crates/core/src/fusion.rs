//! Closed-form combination rules for per-feature class posteriors.
//!
//! Given two classifiers that report `alpha = P(A | x1)` and
//! `beta = P(A | x2)`, and the class prior `theta = P(A)`, the naive-Bayes
//! combiner is
//!
//! ```text
//!            alpha * beta / theta
//! ---------------------------------------------------------
//! alpha * beta / theta + (1 - alpha)(1 - beta) / (1 - theta)
//! ```
//!
//! The same rule generalizes to `L` classes and `K` features, and to the
//! exact posterior under a known correlation model `(J, Jbar)`. The baseline
//! combiners in [`CombinerId`] are the control group used by the harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of features above which [`naive_fuse_multi`] switches to log-space.
pub const LOG_SPACE_MIN_FEATURES: usize = 16;

const SIMPLEX_TOL: f64 = 1e-12;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct UnitProb(f64);

impl UnitProb {
    pub fn new(value: f64) -> Result<Self> {
        Self::named("probability", value)
    }

    /// Like [`UnitProb::new`] but names the offending quantity in the error.
    pub fn named(name: &'static str, value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidProbability { name, value })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Fails unless the value lies strictly inside `(0, 1)`.
    pub fn require_nondegenerate(self) -> Result<Self> {
        if self.0 > 0.0 && self.0 < 1.0 {
            Ok(self)
        } else {
            Err(Error::DegeneratePrior(self.0))
        }
    }
}

impl TryFrom<f64> for UnitProb {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<UnitProb> for f64 {
    fn from(p: UnitProb) -> f64 {
        p.0
    }
}

impl fmt::Display for UnitProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Class priors `theta_i` for `L` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorVector {
    thetas: Vec<f64>,
}

impl PriorVector {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidArgument("prior vector is empty".into()));
        }
        for &t in &thetas {
            UnitProb::named("prior", t)?;
        }
        let sum: f64 = thetas.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotSimplex {
                what: "class priors".into(),
                sum,
            });
        }
        Ok(Self { thetas })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.thetas
    }
}

/// Per-feature posteriors `alphas[i][j] = P(A = i | X_j = x_j)`, stored
/// row-major as `L` classes by `K` features. Every column is a distribution
/// over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PosteriorMatrixFile", into = "PosteriorMatrixFile")]
pub struct PosteriorMatrix {
    classes: usize,
    features: usize,
    alphas: Vec<f64>,
}

/// On-disk shape of a posterior matrix: one inner array per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorMatrixFile {
    pub alphas: Vec<Vec<f64>>,
}

impl PosteriorMatrix {
    /// Builds the matrix from one row per class.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.len();
        let features = rows.first().map_or(0, Vec::len);
        if classes == 0 || features == 0 {
            return Err(Error::InvalidArgument("posterior matrix is empty".into()));
        }
        if rows.iter().any(|r| r.len() != features) {
            return Err(Error::InvalidArgument(
                "posterior matrix rows have different lengths".into(),
            ));
        }
        let alphas: Vec<f64> = rows.into_iter().flatten().collect();
        for &a in &alphas {
            UnitProb::named("alpha", a)?;
        }
        for j in 0..features {
            let sum: f64 = (0..classes).map(|i| alphas[i * features + j]).sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::NotSimplex {
                    what: format!("posterior column {}", j + 1),
                    sum,
                });
            }
        }
        Ok(Self {
            classes,
            features,
            alphas,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn get(&self, class: usize, feature: usize) -> f64 {
        self.alphas[class * self.features + feature]
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.alphas[class * self.features..(class + 1) * self.features]
    }
}

impl TryFrom<PosteriorMatrixFile> for PosteriorMatrix {
    type Error = Error;

    fn try_from(file: PosteriorMatrixFile) -> Result<Self> {
        Self::from_rows(file.alphas)
    }
}

impl From<PosteriorMatrix> for PosteriorMatrixFile {
    fn from(m: PosteriorMatrix) -> Self {
        PosteriorMatrixFile {
            alphas: m.alphas.chunks(m.features).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// `num / (num + other)`, written so that it is monotone in floating point:
/// increasing in `num`, decreasing in `other`.
fn odds_ratio(num: f64, other: f64) -> Result<f64> {
    if num == 0.0 && other == 0.0 {
        return Err(Error::IndeterminateFusion);
    }
    Ok(1.0 / (1.0 + other / num))
}

/// Naive-Bayes fusion of two posteriors sharing the prior `theta`.
pub fn naive_fuse_two(alpha: UnitProb, beta: UnitProb, theta: UnitProb) -> Result<UnitProb> {
    let t = theta.require_nondegenerate()?.get();
    let (a, b) = (alpha.get(), beta.get());
    let p = odds_ratio(a * b / t, (1.0 - a) * (1.0 - b) / (1.0 - t))?;
    Ok(UnitProb(p))
}

/// Naive-Bayes fusion for every class: entry `i` of the result is the fused
/// posterior of class `i`. The entries sum to one.
pub fn naive_fuse_multi_all(
    posteriors: &PosteriorMatrix,
    priors: &PriorVector,
) -> Result<Vec<f64>> {
    if posteriors.classes() != priors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} classes in the posterior matrix but {} priors",
            posteriors.classes(),
            priors.len()
        )));
    }
    if let Some(&t) = priors.as_slice().iter().find(|&&t| t == 0.0) {
        return Err(Error::DegeneratePrior(t));
    }
    let k = posteriors.features();
    let shrink = (k - 1) as f64;

    if k >= LOG_SPACE_MIN_FEATURES {
        let logs: Vec<f64> = (0..posteriors.classes())
            .map(|i| {
                let ln_prod: f64 = posteriors.row(i).iter().map(|a| a.ln()).sum();
                ln_prod - shrink * priors.as_slice()[i].ln()
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::IndeterminateFusion);
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        return Ok(weights.into_iter().map(|w| w / total).collect());
    }

    let scores: Vec<f64> = (0..posteriors.classes())
        .map(|i| {
            let prod: f64 = posteriors.row(i).iter().product();
            prod / priors.as_slice()[i].powi(k as i32 - 1)
        })
        .collect();
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Err(Error::IndeterminateFusion);
    }
    Ok(scores.into_iter().map(|s| s / total).collect())
}

/// Naive-Bayes fused posterior of class `target` (0-based).
pub fn naive_fuse_multi(
    posteriors: &PosteriorMatrix,
    priors: &PriorVector,
    target: usize,
) -> Result<UnitProb> {
    if target >= posteriors.classes() {
        return Err(Error::InvalidArgument(format!(
            "class index {target} out of range for {} classes",
            posteriors.classes()
        )));
    }
    let all = naive_fuse_multi_all(posteriors, priors)?;
    Ok(UnitProb(all[target].clamp(0.0, 1.0)))
}

/// Exact posterior `P(A | x1, x2)` when the class-conditional correlation
/// factors `J` and `Jbar` at the observed point are known.
pub fn model_posterior(
    alpha: UnitProb,
    beta: UnitProb,
    theta: UnitProb,
    j_val: f64,
    jbar_val: f64,
) -> Result<UnitProb> {
    let t = theta.require_nondegenerate()?.get();
    if !(j_val >= 0.0 && jbar_val >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation factors must be nonnegative (J = {j_val}, Jbar = {jbar_val})"
        )));
    }
    let (a, b) = (alpha.get(), beta.get());
    let p = odds_ratio(
        j_val * a * b / t,
        jbar_val * (1.0 - a) * (1.0 - b) / (1.0 - t),
    )?;
    Ok(UnitProb(p))
}

/// The fixed set of combination rules compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerId {
    Naive,
    NoPriorProduct,
    LinearPool,
    LogPool,
    FirstOnly,
    SecondOnly,
}

/// A two-input combination rule.
pub type Combiner = fn(UnitProb, UnitProb, UnitProb) -> Result<UnitProb>;

impl CombinerId {
    pub const ALL: [CombinerId; 6] = [
        CombinerId::Naive,
        CombinerId::NoPriorProduct,
        CombinerId::LinearPool,
        CombinerId::LogPool,
        CombinerId::FirstOnly,
        CombinerId::SecondOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerId::Naive => "naive",
            CombinerId::NoPriorProduct => "no_prior_product",
            CombinerId::LinearPool => "linear_pool",
            CombinerId::LogPool => "log_pool",
            CombinerId::FirstOnly => "first_only",
            CombinerId::SecondOnly => "second_only",
        }
    }

    pub fn combine(self, alpha: UnitProb, beta: UnitProb, theta: UnitProb) -> Result<UnitProb> {
        baseline_combiner(self)(alpha, beta, theta)
    }

    /// True when this rule is the same function as the naive combiner at the
    /// given prior. `no_prior_product` drops the prior correction, which is
    /// the identity at `theta = 1/2`.
    pub fn coincides_with_naive(self, theta: f64) -> bool {
        match self {
            CombinerId::Naive => true,
            CombinerId::NoPriorProduct => theta == 0.5,
            _ => false,
        }
    }
}

impl fmt::Display for CombinerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CombinerId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCombiner(s.to_string()))
    }
}

fn no_prior_product(alpha: UnitProb, beta: UnitProb, _theta: UnitProb) -> Result<UnitProb> {
    let (a, b) = (alpha.get(), beta.get());
    odds_ratio(a * b, (1.0 - a) * (1.0 - b)).map(UnitProb)
}

fn linear_pool(alpha: UnitProb, beta: UnitProb, _theta: UnitProb) -> Result<UnitProb> {
    Ok(UnitProb(0.5 * (alpha.get() + beta.get())))
}

fn log_pool(alpha: UnitProb, beta: UnitProb, _theta: UnitProb) -> Result<UnitProb> {
    let (a, b) = (alpha.get(), beta.get());
    odds_ratio((a * b).sqrt(), ((1.0 - a) * (1.0 - b)).sqrt()).map(UnitProb)
}

fn first_only(alpha: UnitProb, _beta: UnitProb, _theta: UnitProb) -> Result<UnitProb> {
    Ok(alpha)
}

fn second_only(_alpha: UnitProb, beta: UnitProb, _theta: UnitProb) -> Result<UnitProb> {
    Ok(beta)
}

/// Returns the rule named by `id`.
pub fn baseline_combiner(id: CombinerId) -> Combiner {
    match id {
        CombinerId::Naive => naive_fuse_two,
        CombinerId::NoPriorProduct => no_prior_product,
        CombinerId::LinearPool => linear_pool,
        CombinerId::LogPool => log_pool,
        CombinerId::FirstOnly => first_only,
        CombinerId::SecondOnly => second_only,
    }
}
