//! Ground-truth worlds for the fusion experiments.
//!
//! Everything is expressed in the unconditional CDF coordinates `(F1, F2)`
//! of the two features. A classifier is an [`AlphaCurve`]: its output
//! `alpha(F1)` on each of `N` cells, constrained to `[0, 1]` with mean equal
//! to the prior `theta`. The class-conditional CDFs follow by integration,
//! `H(F) = (1/theta) * int_0^F alpha` and `Hbar = (F - theta H) / (1 - theta)`.
//!
//! A [`ScenarioBundle`] combines two curves with two correlation grids `J`
//! (class A) and `Jbar` (class not-A) and precomputes, for every cell
//! `(k, l)` of the `(F1, F2)` square,
//!
//! * `D = J* alpha_k beta_l / theta`
//! * `C = D + Jbar* (1 - alpha_k)(1 - beta_l) / (1 - theta)`
//! * `P = D / C`, the exact posterior,
//!
//! where `J*` is the average of `J` over the rectangle that cell `(k, l)`
//! occupies in `(H1, H2)` coordinates and `Jbar*` likewise in
//! `(Hbar1, Hbar2)`.
//!
//! The alpha-curve ensemble comes in two flavours. The microcanonical one is
//! uniform on `{alpha in [0,1]^N : mean = theta}`. The canonical one draws
//! each value i.i.d. from the truncated exponential `norm * exp(-K alpha)` on
//! `[0, 1]`, with `K` solving `Lambda(K) = theta` where
//! `Lambda(K) = 1/K - 1/(e^K - 1)` is that density's mean.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::{
    cell_overlaps, integrate_overlaps, sample_grid, CorrelationGrid, SamplerMethod, SamplerOptions,
};
use crate::error::{Error, Result};
use crate::fusion::UnitProb;
use crate::seed;

/// Below this `|K|` the mean `Lambda(K)` is evaluated by its Taylor series.
pub const LAMBDA_SERIES_CUTOFF: f64 = 1e-2;

const CURVE_MEAN_TOL: f64 = 1e-12;
const PROJECTION_PASSES: usize = 8;

/// Mean of the truncated exponential density on `[0, 1]` with rate `k`.
/// Accepts `k = +inf` (mean 0) and `k = -inf` (mean 1).
pub fn lambda_of_k(k: f64) -> f64 {
    if k == f64::INFINITY {
        return 0.0;
    }
    if k == f64::NEG_INFINITY {
        return 1.0;
    }
    if k.abs() < LAMBDA_SERIES_CUTOFF {
        let k2 = k * k;
        return 0.5 - k / 12.0 + k * k2 / 720.0 - k * k2 * k2 / 30240.0;
    }
    1.0 / k - 1.0 / k.exp_m1()
}

/// Solves `lambda_of_k(K) = theta` by bisection. `Lambda` is strictly
/// decreasing, so the bracket is grown until it straddles `theta` and then
/// halved down to adjacent floats.
pub fn solve_k(theta: UnitProb, tol: f64) -> Result<f64> {
    let t = theta.require_nondegenerate()?.get();
    if t == 0.5 {
        return Ok(0.0);
    }
    // Lambda(lo) > t > Lambda(hi)
    let (mut lo, mut hi) = if t < 0.5 { (0.0, 1.0) } else { (-1.0, 0.0) };
    while lambda_of_k(hi) > t {
        lo = hi;
        hi *= 2.0;
    }
    while lambda_of_k(lo) < t {
        hi = lo;
        lo *= 2.0;
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = lambda_of_k(mid);
        if v == t {
            return Ok(mid);
        }
        if v > t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = if (lambda_of_k(lo) - t).abs() <= (lambda_of_k(hi) - t).abs() {
        lo
    } else {
        hi
    };
    let residual = (lambda_of_k(k) - t).abs();
    if residual >= tol {
        return Err(Error::NonConvergence {
            iterations: 2_000,
            residual,
        });
    }
    Ok(k)
}

/// Truncated exponential `norm * exp(-k alpha)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaDistribution {
    pub theta: f64,
    pub k: f64,
    /// `k / (1 - e^-k)`; 1 at `k = 0`, infinite for the point masses.
    pub norm: f64,
}

impl AlphaDistribution {
    /// The distribution whose mean is `theta`.
    pub fn for_theta(theta: UnitProb) -> Result<Self> {
        let k = solve_k(theta, 1e-12)?;
        Ok(Self {
            theta: theta.get(),
            ..Self::from_k(k)
        })
    }

    pub fn from_k(k: f64) -> Self {
        let norm = if k.is_infinite() {
            f64::INFINITY
        } else if k == 0.0 {
            1.0
        } else {
            -k / (-k).exp_m1()
        };
        Self {
            theta: lambda_of_k(k),
            k,
            norm,
        }
    }

    pub fn density(&self, alpha: f64) -> f64 {
        if !(0.0..=1.0).contains(&alpha) || self.k.is_infinite() {
            return 0.0;
        }
        self.norm * (-self.k * alpha).exp()
    }

    pub fn cdf(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return 0.0;
        }
        if alpha >= 1.0 {
            return 1.0;
        }
        match self.k {
            k if k == f64::INFINITY => 1.0,
            k if k == f64::NEG_INFINITY => 0.0,
            0.0 => alpha,
            k => (-k * alpha).exp_m1() / (-k).exp_m1(),
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = self.k;
        if k == f64::INFINITY {
            return 0.0;
        }
        if k == f64::NEG_INFINITY {
            return 1.0;
        }
        let u: f64 = rng.random();
        if k == 0.0 {
            return u;
        }
        (-(u * (-k).exp_m1()).ln_1p() / k).clamp(0.0, 1.0)
    }
}

/// A single draw from `dist` for `seed`.
pub fn sample_alpha(dist: &AlphaDistribution, seed: u64) -> f64 {
    dist.sample(&mut seed::rng(seed))
}

/// How alpha curves are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Canonical,
    Microcanonical,
}

impl AlphaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AlphaMode::Canonical => "canonical",
            AlphaMode::Microcanonical => "microcanonical",
        }
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(AlphaMode::Canonical),
            "microcanonical" => Ok(AlphaMode::Microcanonical),
            other => Err(Error::InvalidArgument(format!(
                "unknown alpha mode '{other}' (expected canonical or microcanonical)"
            ))),
        }
    }
}

/// Classifier output on `N` equal cells of the CDF coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurve {
    theta: f64,
    values: Vec<f64>,
}

impl AlphaCurve {
    pub fn new(theta: UnitProb, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("alpha curve is empty".into()));
        }
        for &v in &values {
            UnitProb::named("alpha", v)?;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if (mean - theta.get()).abs() > CURVE_MEAN_TOL {
            return Err(Error::InvalidArgument(format!(
                "alpha curve mean {mean} differs from theta {}",
                theta.get()
            )));
        }
        Ok(Self {
            theta: theta.get(),
            values,
        })
    }

    /// The constant curve `alpha = theta`.
    pub fn constant(theta: UnitProb, n: usize) -> Self {
        Self {
            theta: theta.get(),
            values: vec![theta.get(); n],
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Default number of hit-and-run steps for a microcanonical curve.
pub fn default_curve_burn_in(n: usize) -> usize {
    100 * n * n
}

pub fn sample_alpha_curve(
    theta: UnitProb,
    n: usize,
    mode: AlphaMode,
    seed: u64,
) -> Result<AlphaCurve> {
    sample_alpha_curve_with(theta, n, mode, None, &mut seed::rng(seed))
}

/// Draws an alpha curve. `burn_in` only affects microcanonical mode and
/// defaults to [`default_curve_burn_in`].
pub fn sample_alpha_curve_with<R: Rng + ?Sized>(
    theta: UnitProb,
    n: usize,
    mode: AlphaMode,
    burn_in: Option<usize>,
    rng: &mut R,
) -> Result<AlphaCurve> {
    let t = theta.require_nondegenerate()?.get();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "alpha curve needs at least 2 cells, got {n}"
        )));
    }
    let values = match mode {
        AlphaMode::Canonical => {
            let dist = AlphaDistribution::for_theta(theta)?;
            let draws: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
            project_mean(draws, t)?
        }
        AlphaMode::Microcanonical => {
            let steps = burn_in.unwrap_or_else(|| default_curve_burn_in(n));
            if steps == 0 {
                return Err(Error::InvalidArgument("burn-in must be at least 1".into()));
            }
            slice_hit_and_run(n, t, steps, rng)
        }
    };
    AlphaCurve::new(theta, values)
}

/// Moves the mean of `values` onto `theta` while staying inside `[0, 1]`:
/// scale toward 0 when the mean is too high, toward 1 when too low.
fn project_mean(mut values: Vec<f64>, theta: f64) -> Result<Vec<f64>> {
    let n = values.len() as f64;
    let mut mean = values.iter().sum::<f64>() / n;
    for _ in 0..PROJECTION_PASSES {
        if (mean - theta).abs() <= CURVE_MEAN_TOL * 0.25 {
            return Ok(values);
        }
        if theta <= mean {
            let s = theta / mean;
            values.iter_mut().for_each(|v| *v *= s);
        } else {
            let s = (1.0 - theta) / (1.0 - mean);
            values.iter_mut().for_each(|v| *v = 1.0 - (1.0 - *v) * s);
        }
        mean = values.iter().sum::<f64>() / n;
    }
    if (mean - theta).abs() <= CURVE_MEAN_TOL {
        return Ok(values);
    }
    Err(Error::NonConvergence {
        iterations: PROJECTION_PASSES,
        residual: (mean - theta).abs(),
    })
}

/// Hit-and-run on `[0,1]^n` intersected with `{sum = n theta}`, started at
/// the constant curve. Directions are `e_i - e_j` for a uniform pair `i != j`.
fn slice_hit_and_run<R: Rng + ?Sized>(n: usize, theta: f64, steps: usize, rng: &mut R) -> Vec<f64> {
    let mut x = vec![theta; n];
    for _ in 0..steps {
        let (i, j) = crate::correlation::distinct_pair(n, rng);
        let lo = (-x[i]).max(x[j] - 1.0);
        let hi = (1.0 - x[i]).min(x[j]);
        if hi - lo <= 0.0 {
            continue;
        }
        let t = lo + (hi - lo) * rng.random::<f64>();
        x[i] = (x[i] + t).clamp(0.0, 1.0);
        x[j] = (x[j] - t).clamp(0.0, 1.0);
    }
    x
}

/// Class-conditional CDFs at the `N + 1` cell boundaries of the unconditional
/// CDF coordinate: `knots` for class A, `bar_knots` for not-A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCDF {
    pub knots: Vec<f64>,
    pub bar_knots: Vec<f64>,
}

pub fn build_marginals(curve: &AlphaCurve) -> Result<MarginalCDF> {
    let theta = UnitProb::new(curve.theta())?.require_nondegenerate()?.get();
    let n = curve.n();
    let total: f64 = curve.values().iter().sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePrior(theta));
    }
    let mut knots = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    knots.push(0.0);
    for &v in curve.values() {
        acc += v;
        knots.push((acc / total).min(1.0));
    }
    // Normalizing by the realized total makes the last knot exactly one.
    knots[n] = 1.0;

    let nf = n as f64;
    let mut bar_knots = Vec::with_capacity(n + 1);
    bar_knots.push(0.0);
    for k in 1..=n {
        let raw = ((k as f64 / nf - theta * knots[k]) / (1.0 - theta)).clamp(0.0, 1.0);
        bar_knots.push(raw.max(bar_knots[k - 1]));
    }
    bar_knots[n] = 1.0;
    Ok(MarginalCDF { knots, bar_knots })
}

/// Parameters of [`realize_scenario_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub theta: UnitProb,
    pub n: usize,
    pub sampler: SamplerMethod,
    pub mode: AlphaMode,
    pub sampler_options: SamplerOptions,
    pub curve_burn_in: Option<usize>,
}

impl ScenarioParams {
    pub fn new(theta: UnitProb, n: usize, sampler: SamplerMethod, mode: AlphaMode) -> Self {
        Self {
            theta,
            n,
            sampler,
            mode,
            sampler_options: SamplerOptions::default(),
            curve_burn_in: None,
        }
    }
}

/// One complete generative model with its exact posterior and quadrature
/// weights on the `N x N` cells of the `(F1, F2)` square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub theta: f64,
    pub n: usize,
    /// Seed the bundle was realized from, if it was sampled.
    pub seed: Option<u64>,
    pub alpha_curve: AlphaCurve,
    pub beta_curve: AlphaCurve,
    pub j_grid: CorrelationGrid,
    pub jbar_grid: CorrelationGrid,
    pub h1: MarginalCDF,
    pub h2: MarginalCDF,
    /// `P_kl`, row-major.
    pub posterior: Vec<f64>,
    /// `C_kl`, row-major.
    pub weight_c: Vec<f64>,
    /// `D_kl`, row-major.
    pub weight_d: Vec<f64>,
    /// Cells with `C_kl = 0`. Their posterior is set to 0; they carry no
    /// weight in any quadrature.
    pub zero_weight_cells: Vec<(usize, usize)>,
}

/// Per-cell rectangle overlaps with the grid, one list per curve cell.
fn knot_overlaps(grid_n: usize, knots: &[f64]) -> Vec<Vec<(usize, f64)>> {
    knots
        .windows(2)
        .map(|w| cell_overlaps(grid_n, w[0], w[1]))
        .collect()
}

/// Average of `grid` over the rectangle, or 0 when the rectangle is empty
/// (its weight factor then vanishes too).
fn rect_average(
    grid: &CorrelationGrid,
    rows: &[(usize, f64)],
    cols: &[(usize, f64)],
    width: f64,
    height: f64,
) -> f64 {
    let area = width * height;
    if area > 0.0 {
        integrate_overlaps(grid, rows, cols) / area
    } else {
        0.0
    }
}

impl ScenarioBundle {
    /// Assembles a bundle from explicit curves and grids.
    pub fn assemble(
        alpha_curve: AlphaCurve,
        beta_curve: AlphaCurve,
        j_grid: CorrelationGrid,
        jbar_grid: CorrelationGrid,
    ) -> Result<Self> {
        let theta = alpha_curve.theta();
        if beta_curve.theta() != theta {
            return Err(Error::InvalidArgument(format!(
                "alpha and beta curves disagree on theta ({theta} vs {})",
                beta_curve.theta()
            )));
        }
        let n = alpha_curve.n();
        if beta_curve.n() != n || j_grid.n() != n || jbar_grid.n() != n {
            return Err(Error::InvalidArgument(
                "curves and grids must share the same resolution".into(),
            ));
        }
        let h1 = build_marginals(&alpha_curve)?;
        let h2 = build_marginals(&beta_curve)?;

        let rows_j = knot_overlaps(n, &h1.knots);
        let cols_j = knot_overlaps(n, &h2.knots);
        let rows_jbar = knot_overlaps(n, &h1.bar_knots);
        let cols_jbar = knot_overlaps(n, &h2.bar_knots);

        let mut posterior = vec![0.0; n * n];
        let mut weight_c = vec![0.0; n * n];
        let mut weight_d = vec![0.0; n * n];
        let mut zero_weight_cells = Vec::new();
        let (a, b) = (alpha_curve.values(), beta_curve.values());
        for k in 0..n {
            let da = h1.knots[k + 1] - h1.knots[k];
            let dabar = h1.bar_knots[k + 1] - h1.bar_knots[k];
            for l in 0..n {
                let db = h2.knots[l + 1] - h2.knots[l];
                let dbbar = h2.bar_knots[l + 1] - h2.bar_knots[l];
                let j_star = rect_average(&j_grid, &rows_j[k], &cols_j[l], da, db);
                let jbar_star =
                    rect_average(&jbar_grid, &rows_jbar[k], &cols_jbar[l], dabar, dbbar);
                let d = j_star * a[k] * b[l] / theta;
                let c = d + jbar_star * (1.0 - a[k]) * (1.0 - b[l]) / (1.0 - theta);
                let idx = k * n + l;
                weight_d[idx] = d;
                weight_c[idx] = c;
                if c > 0.0 {
                    posterior[idx] = (d / c).min(1.0);
                } else {
                    zero_weight_cells.push((k, l));
                }
            }
        }
        Ok(Self {
            theta,
            n,
            seed: None,
            alpha_curve,
            beta_curve,
            j_grid,
            jbar_grid,
            h1,
            h2,
            posterior,
            weight_c,
            weight_d,
            zero_weight_cells,
        })
    }

    pub fn cell(&self, k: usize, l: usize) -> (f64, f64, f64) {
        let idx = k * self.n + l;
        (self.posterior[idx], self.weight_c[idx], self.weight_d[idx])
    }

    /// `(1/N^2) sum C`; one for every valid bundle.
    pub fn total_weight(&self) -> f64 {
        self.weight_c.iter().sum::<f64>() / (self.n * self.n) as f64
    }

    /// `(1/N^2) sum D`; equals theta for every valid bundle.
    pub fn class_weight(&self) -> f64 {
        self.weight_d.iter().sum::<f64>() / (self.n * self.n) as f64
    }
}

/// Samples a full scenario with default sampler tuning.
pub fn realize_scenario(
    theta: UnitProb,
    n: usize,
    sampler: SamplerMethod,
    mode: AlphaMode,
    seed: u64,
) -> Result<ScenarioBundle> {
    realize_scenario_with(&ScenarioParams::new(theta, n, sampler, mode), seed)
}

/// Samples two independent curves and two independent grids, each from its
/// own stream of `seed`, and assembles them.
pub fn realize_scenario_with(params: &ScenarioParams, seed: u64) -> Result<ScenarioBundle> {
    let mut alpha_rng = seed::stream_rng(seed, 0);
    let mut beta_rng = seed::stream_rng(seed, 1);
    let mut j_rng = seed::stream_rng(seed, 2);
    let mut jbar_rng = seed::stream_rng(seed, 3);
    let (theta, n) = (params.theta, params.n);
    let alpha =
        sample_alpha_curve_with(theta, n, params.mode, params.curve_burn_in, &mut alpha_rng)?;
    let beta = sample_alpha_curve_with(theta, n, params.mode, params.curve_burn_in, &mut beta_rng)?;
    let j = sample_grid(params.sampler, n, &params.sampler_options, &mut j_rng)?;
    let jbar = sample_grid(params.sampler, n, &params.sampler_options, &mut jbar_rng)?;
    let mut bundle = ScenarioBundle::assemble(alpha, beta, j, jbar)?;
    bundle.seed = Some(seed);
    Ok(bundle)
}
