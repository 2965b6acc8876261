//! Distance between a combiner and the true posterior, and ensemble
//! statistics over many scenarios.
//!
//! For a bundle with cell weights `C`, `D` and posterior `P = D / C`, the
//! distance of a combiner `G` is the weighted squared discrepancy
//!
//! ```text
//! dist = (1/N^2) sum C (G - P)^2
//!      = (1/N^2) sum (G^2 C - 2 G D)  +  (1/N^2) sum D^2 / C
//!        \_______ cross term ______/     \___ const term __/
//! ```
//!
//! The const term does not depend on the combiner. It is not a metric (no
//! square root), but the name is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{naive_fuse_two, CombinerId, UnitProb};
use crate::scenario::ScenarioBundle;

/// Bins with fewer samples than this are excluded from acceptance.
pub const MIN_BIN_SAMPLES: u64 = 200;

/// Absolute slack added to the Const bounds.
pub const CONST_BOUND_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    pub cross_term: f64,
    pub const_term: f64,
}

/// Combiner output on every `(k, l)` cell of `bundle`, row-major. Cells with
/// zero weight are reported as `NaN` and must not be used.
fn combiner_grid(combiner: CombinerId, bundle: &ScenarioBundle) -> Result<Vec<f64>> {
    let theta = UnitProb::new(bundle.theta)?;
    let n = bundle.n;
    let (a, b) = (bundle.alpha_curve.values(), bundle.beta_curve.values());
    let mut out = vec![f64::NAN; n * n];
    for (k, &ak) in a.iter().enumerate() {
        let alpha = UnitProb::new(ak)?;
        for (l, &bl) in b.iter().enumerate() {
            let idx = k * n + l;
            if bundle.weight_c[idx] > 0.0 {
                out[idx] = combiner.combine(alpha, UnitProb::new(bl)?, theta)?.get();
            }
        }
    }
    Ok(out)
}

pub fn distance(combiner: CombinerId, bundle: &ScenarioBundle) -> Result<DistanceReport> {
    let gamma = combiner_grid(combiner, bundle)?;
    let (mut value, mut cross, mut konst) = (0.0, 0.0, 0.0);
    for (idx, &g) in gamma.iter().enumerate() {
        let c = bundle.weight_c[idx];
        if c <= 0.0 {
            continue;
        }
        let (p, d) = (bundle.posterior[idx], bundle.weight_d[idx]);
        value += c * (g - p) * (g - p);
        cross += g * g * c - 2.0 * g * d;
        konst += d * d / c;
    }
    let cells = (bundle.n * bundle.n) as f64;
    Ok(DistanceReport {
        value: value / cells,
        cross_term: cross / cells,
        const_term: konst / cells,
    })
}

/// `(1/N^2) sum C P^2`, the per-bundle estimate of the additive constant.
pub fn bundle_const(bundle: &ScenarioBundle) -> f64 {
    let total: f64 = bundle
        .weight_c
        .iter()
        .zip(&bundle.posterior)
        .map(|(c, p)| c * p * p)
        .sum();
    total / (bundle.n * bundle.n) as f64
}

/// Sample mean and standard error (unbiased variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl EnsembleStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let trials = values.len();
        if trials == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let mean = values.iter().sum::<f64>() / trials as f64;
        let stderr = if trials > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (trials - 1) as f64 / trials as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            stderr,
            trials,
        })
    }

    /// Standard error of the difference of two independent means.
    pub fn combined_stderr(&self, other: &EnsembleStats) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

fn check_ensemble(ensemble: &[ScenarioBundle]) -> Result<()> {
    let first = ensemble.first().ok_or(Error::EmptyEnsemble)?;
    if ensemble
        .iter()
        .any(|b| b.theta != first.theta || b.n != first.n)
    {
        return Err(Error::InvalidArgument(
            "ensemble members must share theta and n".into(),
        ));
    }
    Ok(())
}

pub fn mean_distance(combiner: CombinerId, ensemble: &[ScenarioBundle]) -> Result<EnsembleStats> {
    check_ensemble(ensemble)?;
    let values = ensemble
        .iter()
        .map(|b| distance(combiner, b).map(|d| d.value))
        .collect::<Result<Vec<_>>>()?;
    EnsembleStats::from_values(&values)
}

pub fn empirical_const(ensemble: &[ScenarioBundle]) -> Result<EnsembleStats> {
    check_ensemble(ensemble)?;
    let values: Vec<f64> = ensemble.iter().map(bundle_const).collect();
    EnsembleStats::from_values(&values)
}

/// Mean distance of a combiner together with the const estimate and its
/// `theta^2 <= Const <= theta` check, loosened by four standard errors (and
/// by [`CONST_BOUND_FLOOR`] for rounding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DISReport {
    pub combiner: CombinerId,
    pub theta: f64,
    pub dis_estimate: EnsembleStats,
    pub const_estimate: EnsembleStats,
    pub const_lower: f64,
    pub const_upper: f64,
    pub const_within_bounds: bool,
}

impl DISReport {
    pub fn new(
        combiner: CombinerId,
        theta: f64,
        dis_estimate: EnsembleStats,
        const_estimate: EnsembleStats,
    ) -> Self {
        let slack = 4.0 * const_estimate.stderr + CONST_BOUND_FLOOR;
        let (lower, upper) = (theta * theta, theta);
        let within = const_estimate.mean >= lower - slack && const_estimate.mean <= upper + slack;
        Self {
            combiner,
            theta,
            dis_estimate,
            const_estimate,
            const_lower: lower,
            const_upper: upper,
            const_within_bounds: within,
        }
    }
}

pub fn dis_report(combiner: CombinerId, ensemble: &[ScenarioBundle]) -> Result<DISReport> {
    let dis = mean_distance(combiner, ensemble)?;
    let konst = empirical_const(ensemble)?;
    Ok(DISReport::new(combiner, ensemble[0].theta, dis, konst))
}

/// Running sums of `C` and `D` per `(alpha, beta)` bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseAccumulator {
    bins: usize,
    theta: f64,
    samples: Vec<u64>,
    sum_c: Vec<f64>,
    sum_d: Vec<f64>,
}

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

impl PointwiseAccumulator {
    pub fn new(bins: usize, theta: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 bins per axis, got {bins}"
            )));
        }
        Ok(Self {
            bins,
            theta,
            samples: vec![0; bins * bins],
            sum_c: vec![0.0; bins * bins],
            sum_d: vec![0.0; bins * bins],
        })
    }

    /// Adds every positive-weight cell of `bundle`.
    pub fn add_bundle(&mut self, bundle: &ScenarioBundle) {
        let n = bundle.n;
        let (a, b) = (bundle.alpha_curve.values(), bundle.beta_curve.values());
        for (k, &ak) in a.iter().enumerate() {
            let row = bin_of(ak, self.bins) * self.bins;
            for (l, &bl) in b.iter().enumerate() {
                let idx = k * n + l;
                let c = bundle.weight_c[idx];
                if c <= 0.0 {
                    continue;
                }
                let bin = row + bin_of(bl, self.bins);
                self.samples[bin] += 1;
                self.sum_c[bin] += c;
                self.sum_d[bin] += bundle.weight_d[idx];
            }
        }
    }

    pub fn merge(&mut self, other: &PointwiseAccumulator) -> Result<()> {
        if other.bins != self.bins || other.theta != self.theta {
            return Err(Error::InvalidArgument(
                "cannot merge pointwise tables with different layouts".into(),
            ));
        }
        for i in 0..self.samples.len() {
            self.samples[i] += other.samples[i];
            self.sum_c[i] += other.sum_c[i];
            self.sum_d[i] += other.sum_d[i];
        }
        Ok(())
    }

    pub fn finish(&self, min_samples: u64) -> Result<PointwiseTable> {
        let theta = UnitProb::new(self.theta)?;
        let width = 1.0 / self.bins as f64;
        let mut cells = Vec::with_capacity(self.bins * self.bins);
        for i in 0..self.bins {
            for j in 0..self.bins {
                let idx = i * self.bins + j;
                let alpha_center = (i as f64 + 0.5) * width;
                let beta_center = (j as f64 + 0.5) * width;
                let naive = naive_fuse_two(
                    UnitProb::new(alpha_center)?,
                    UnitProb::new(beta_center)?,
                    theta,
                )?
                .get();
                let empirical = (self.sum_c[idx] > 0.0).then(|| self.sum_d[idx] / self.sum_c[idx]);
                let flagged = self.samples[idx] < min_samples || empirical.is_none();
                cells.push(PointwiseBin {
                    alpha_bin: i,
                    beta_bin: j,
                    alpha_center,
                    beta_center,
                    samples: self.samples[idx],
                    sum_c: self.sum_c[idx],
                    sum_d: self.sum_d[idx],
                    empirical,
                    naive_at_center: naive,
                    flagged,
                });
            }
        }
        Ok(PointwiseTable {
            bins: self.bins,
            theta: self.theta,
            min_samples,
            cells,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseBin {
    pub alpha_bin: usize,
    pub beta_bin: usize,
    pub alpha_center: f64,
    pub beta_center: f64,
    pub samples: u64,
    pub sum_c: f64,
    pub sum_d: f64,
    /// `sum D / sum C`, the empirical minimizer of the bin.
    pub empirical: Option<f64>,
    pub naive_at_center: f64,
    /// Too few samples to be trusted.
    pub flagged: bool,
}

impl PointwiseBin {
    pub fn deviation(&self) -> Option<f64> {
        self.empirical.map(|e| (e - self.naive_at_center).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseTable {
    pub bins: usize,
    pub theta: f64,
    pub min_samples: u64,
    pub cells: Vec<PointwiseBin>,
}

impl PointwiseTable {
    /// Largest `|empirical - naive|` over unflagged bins.
    pub fn max_deviation(&self) -> f64 {
        self.cells
            .iter()
            .filter(|c| !c.flagged)
            .filter_map(PointwiseBin::deviation)
            .fold(0.0, f64::max)
    }

    pub fn unflagged(&self) -> usize {
        self.cells.iter().filter(|c| !c.flagged).count()
    }
}

pub fn empirical_pointwise_optimum(
    ensemble: &[ScenarioBundle],
    bins: usize,
) -> Result<PointwiseTable> {
    check_ensemble(ensemble)?;
    let mut acc = PointwiseAccumulator::new(bins, ensemble[0].theta)?;
    for b in ensemble {
        acc.add_bundle(b);
    }
    acc.finish(MIN_BIN_SAMPLES)
}
