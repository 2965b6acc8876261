//! Discretized correlation models.
//!
//! A correlation model `J(a, b)` on the unit square is stored as an `N x N`
//! piecewise-constant grid. Entry `(i, j)` is the value of `J` on the cell
//! `[i/N, (i+1)/N) x [j/N, (j+1)/N)`, with `a` indexing rows. Valid grids are
//! nonnegative with every row mean and every column mean equal to one, so
//! that `J` integrates to one along each axis. Note that the convention is
//! "mean one", not "sum one": a doubly-stochastic matrix times `N`.
//!
//! Three samplers are provided:
//!
//! * [`sample_sinkhorn`]: i.i.d. unit exponentials balanced by alternating
//!   row/column normalization. Its law is invariant under row and column
//!   permutations, which forces `E[J_ij] = 1` in every cell.
//! * [`sample_hit_and_run`]: a hit-and-run walk whose stationary law is the
//!   uniform measure on the polytope of valid grids.
//! * [`from_shift_density`]: circulant grids `J_ij = rho[(i - j) mod N]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Residual at which Sinkhorn balancing stops.
pub const SINKHORN_TOL: f64 = 1e-10;
/// Sweep budget for Sinkhorn balancing.
pub const SINKHORN_MAX_SWEEPS: usize = 10_000;

const NORMALIZATION_TAG: &str = "mean_one";

/// Piecewise-constant `N x N` grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFile", into = "GridFile")]
pub struct CorrelationGrid {
    n: usize,
    entries: Vec<f64>,
}

/// JSON layout of a grid file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFile {
    pub n: usize,
    pub normalization: String,
    pub entries: Vec<f64>,
}

impl TryFrom<GridFile> for CorrelationGrid {
    type Error = Error;

    fn try_from(file: GridFile) -> Result<Self> {
        if file.normalization != NORMALIZATION_TAG {
            return Err(Error::InvalidArgument(format!(
                "unsupported grid normalization '{}', expected '{NORMALIZATION_TAG}'",
                file.normalization
            )));
        }
        CorrelationGrid::from_entries(file.n, file.entries)
    }
}

impl From<CorrelationGrid> for GridFile {
    fn from(grid: CorrelationGrid) -> Self {
        GridFile {
            n: grid.n,
            normalization: NORMALIZATION_TAG.to_string(),
            entries: grid.entries,
        }
    }
}

/// Outcome of [`CorrelationGrid::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridValidation {
    /// Largest of `|row mean - 1|`, `|column mean - 1|` and `-min(entry)`.
    pub max_violation: f64,
    pub min_entry: f64,
    pub passed: bool,
}

impl CorrelationGrid {
    /// Wraps row-major entries. Only the shape and finiteness are checked;
    /// use [`CorrelationGrid::validate`] for the marginal constraints.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid size must be positive".into()));
        }
        if entries.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "grid of size {n} needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("grid entries must be finite".into()));
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("grid rows must be square".into()));
        }
        Self::from_entries(n, rows.concat())
    }

    /// The independence model `J = 1`.
    pub fn ones(n: usize) -> Self {
        Self {
            n,
            entries: vec![1.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.n..(row + 1) * self.n]
    }

    pub fn row_means(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.entries
            .chunks(self.n)
            .map(|r| r.iter().sum::<f64>() / n)
            .collect()
    }

    pub fn col_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for row in self.entries.chunks(self.n) {
            for (s, e) in sums.iter_mut().zip(row) {
                *s += e;
            }
        }
        let n = self.n as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Checks nonnegativity and unit row/column means.
    pub fn validate(&self, tol: f64) -> GridValidation {
        let min_entry = self.entries.iter().copied().fold(f64::INFINITY, f64::min);
        let worst_mean = self
            .row_means()
            .into_iter()
            .chain(self.col_means())
            .map(|m| (m - 1.0).abs())
            .fold(0.0, f64::max);
        let max_violation = worst_mean.max(-min_entry);
        GridValidation {
            max_violation,
            min_entry,
            passed: max_violation <= tol,
        }
    }

    /// Integral of the grid function over `[a_lo, a_hi] x [b_lo, b_hi]`.
    /// Degenerate (zero-width) rectangles integrate to zero.
    pub fn integrate_rect(&self, a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
        let rows = cell_overlaps(self.n, a_lo, a_hi);
        let cols = cell_overlaps(self.n, b_lo, b_hi);
        integrate_overlaps(self, &rows, &cols)
    }

    /// Average of the grid function over `[a_lo, a_hi] x [b_lo, b_hi]`.
    pub fn eval_cell_averaged(&self, a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> Result<f64> {
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && hi <= 1.0 && lo < hi;
        if !(ok(a_lo, a_hi) && ok(b_lo, b_hi)) {
            return Err(Error::InvalidRectangle {
                a_lo,
                a_hi,
                b_lo,
                b_hi,
            });
        }
        let area = (a_hi - a_lo) * (b_hi - b_lo);
        Ok(self.integrate_rect(a_lo, a_hi, b_lo, b_hi) / area)
    }
}

/// `(cell index, overlap length)` for every grid cell of `[0, 1]` split into
/// `n` pieces that meets `[lo, hi]` with positive length.
pub(crate) fn cell_overlaps(n: usize, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    let nf = n as f64;
    // One cell of slack below floor(lo * n) guards against rounding.
    let first = ((lo * nf).floor().max(0.0) as usize)
        .min(n - 1)
        .saturating_sub(1);
    let mut out = Vec::new();
    for i in first..n {
        let left = i as f64 / nf;
        if left >= hi {
            break;
        }
        let right = (i + 1) as f64 / nf;
        let w = right.min(hi) - left.max(lo);
        if w > 0.0 {
            out.push((i, w));
        }
    }
    out
}

pub(crate) fn integrate_overlaps(
    grid: &CorrelationGrid,
    rows: &[(usize, f64)],
    cols: &[(usize, f64)],
) -> f64 {
    rows.iter()
        .map(|&(i, w)| {
            let row = grid.row(i);
            w * cols.iter().map(|&(j, v)| v * row[j]).sum::<f64>()
        })
        .sum()
}

/// Which correlation-model sampler to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerMethod {
    #[serde(rename = "sinkhorn", alias = "sinkhorn_iid")]
    SinkhornIid,
    #[serde(rename = "hitrun", alias = "hit_and_run")]
    HitAndRun,
    #[serde(rename = "shift")]
    Shift,
}

impl SamplerMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMethod::SinkhornIid => "sinkhorn",
            SamplerMethod::HitAndRun => "hitrun",
            SamplerMethod::Shift => "shift",
        }
    }
}

impl fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinkhorn" | "sinkhorn_iid" => Ok(SamplerMethod::SinkhornIid),
            "hitrun" | "hit_and_run" => Ok(SamplerMethod::HitAndRun),
            "shift" => Ok(SamplerMethod::Shift),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampler '{other}' (expected sinkhorn, hitrun or shift)"
            ))),
        }
    }
}

/// Density used by the shift sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDensityKind {
    /// `rho = 1`, giving the independence grid.
    #[default]
    Uniform,
    /// `rho` drawn as normalized i.i.d. unit exponentials.
    Random,
}

impl FromStr for ShiftDensityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ShiftDensityKind::Uniform),
            "random" => Ok(ShiftDensityKind::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown shift density '{other}' (expected uniform or random)"
            ))),
        }
    }
}

/// Sampler tuning shared by the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Hit-and-run steps; `None` uses [`default_hitrun_burn_in`].
    pub hitrun_burn_in: Option<usize>,
    pub shift_density: ShiftDensityKind,
}

/// Default hit-and-run length for an `n x n` grid.
pub fn default_hitrun_burn_in(n: usize) -> usize {
    100 * n * n
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid size must be at least 2, got {n}"
        )));
    }
    Ok(())
}

/// Sinkhorn-balanced i.i.d. exponential grid for `seed`.
pub fn sample_sinkhorn(n: usize, seed: u64) -> Result<CorrelationGrid> {
    sample_sinkhorn_with(n, &mut seed::rng(seed))
}

pub fn sample_sinkhorn_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CorrelationGrid> {
    check_size(n)?;
    let mut entries: Vec<f64> = (0..n * n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let nf = n as f64;
    let mut col_sums = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..SINKHORN_MAX_SWEEPS {
        for row in entries.chunks_mut(n) {
            let scale = nf / row.iter().sum::<f64>();
            row.iter_mut().for_each(|e| *e *= scale);
        }
        col_sums.iter_mut().for_each(|s| *s = 0.0);
        for row in entries.chunks(n) {
            for (s, e) in col_sums.iter_mut().zip(row) {
                *s += e;
            }
        }
        for row in entries.chunks_mut(n) {
            for (e, s) in row.iter_mut().zip(&col_sums) {
                *e *= nf / s;
            }
        }
        residual = entries
            .chunks(n)
            .map(|r| (r.iter().sum::<f64>() / nf - 1.0).abs())
            .fold(0.0, f64::max);
        if residual < SINKHORN_TOL {
            return CorrelationGrid::from_entries(n, entries);
        }
    }
    Err(Error::NonConvergence {
        iterations: SINKHORN_MAX_SWEEPS,
        residual,
    })
}

/// Hit-and-run sample from the uniform measure on valid `n x n` grids,
/// started from the independence grid and run for `burn_in` steps.
pub fn sample_hit_and_run(n: usize, burn_in: usize, seed: u64) -> Result<CorrelationGrid> {
    sample_hit_and_run_with(n, burn_in, &mut seed::rng(seed))
}

/// Each step picks two distinct rows and two distinct columns uniformly and
/// moves along the direction `+1` at `(r1, c1), (r2, c2)` and `-1` at
/// `(r1, c2), (r2, c1)`, which keeps every row and column sum fixed. The
/// step length is uniform on the feasible segment. The direction set spans
/// the constraint null space and is symmetric, so the walk is reversible with
/// respect to the uniform measure.
pub fn sample_hit_and_run_with<R: Rng + ?Sized>(
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<CorrelationGrid> {
    check_size(n)?;
    if burn_in == 0 {
        return Err(Error::InvalidArgument("burn-in must be at least 1".into()));
    }
    let mut x: Vec<f64> = vec![1.0; n * n];
    for _ in 0..burn_in {
        let (r1, r2) = distinct_pair(n, rng);
        let (c1, c2) = distinct_pair(n, rng);
        let (p1, p2) = (r1 * n + c1, r2 * n + c2);
        let (m1, m2) = (r1 * n + c2, r2 * n + c1);
        let lo = -x[p1].min(x[p2]);
        let hi = x[m1].min(x[m2]);
        if hi - lo <= 0.0 {
            continue;
        }
        let t = lo + (hi - lo) * rng.random::<f64>();
        x[p1] = (x[p1] + t).max(0.0);
        x[p2] = (x[p2] + t).max(0.0);
        x[m1] = (x[m1] - t).max(0.0);
        x[m2] = (x[m2] - t).max(0.0);
    }
    CorrelationGrid::from_entries(n, x)
}

/// Uniform ordered pair of distinct indices below `n` (`n >= 2`).
pub(crate) fn distinct_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

/// Nonnegative density on `[0, 1]` discretized to `N` cells with mean one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftDensity {
    rho: Vec<f64>,
}

impl ShiftDensity {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::InvalidArgument("shift density is empty".into()));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument(
                "shift density values must be finite and nonnegative".into(),
            ));
        }
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        if (mean - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "shift density must have mean 1, got {mean}"
            )));
        }
        Ok(Self { rho })
    }

    pub fn uniform(n: usize) -> Self {
        Self { rho: vec![1.0; n] }
    }

    /// Normalized i.i.d. unit exponentials. Exchangeable, so `E[rho_k] = 1`.
    pub fn sample_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let scale = n as f64 / raw.iter().sum::<f64>();
        Self {
            rho: raw.into_iter().map(|r| r * scale).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

/// Circulant grid with `entries[i][j] = rho[(i - j) mod N]`.
pub fn from_shift_density(rho: &ShiftDensity) -> CorrelationGrid {
    let n = rho.len();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            entries.push(rho.rho[(i + n - j) % n]);
        }
    }
    CorrelationGrid { n, entries }
}

/// Draws one grid with the requested method.
pub fn sample_grid<R: Rng + ?Sized>(
    method: SamplerMethod,
    n: usize,
    options: &SamplerOptions,
    rng: &mut R,
) -> Result<CorrelationGrid> {
    match method {
        SamplerMethod::SinkhornIid => sample_sinkhorn_with(n, rng),
        SamplerMethod::HitAndRun => {
            let steps = options
                .hitrun_burn_in
                .unwrap_or_else(|| default_hitrun_burn_in(n));
            sample_hit_and_run_with(n, steps, rng)
        }
        SamplerMethod::Shift => {
            check_size(n)?;
            let rho = match options.shift_density {
                ShiftDensityKind::Uniform => ShiftDensity::uniform(n),
                ShiftDensityKind::Random => ShiftDensity::sample_random(n, rng),
            };
            Ok(from_shift_density(&rho))
        }
    }
}
