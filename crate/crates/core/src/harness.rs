//! Experiment orchestration: seeded ensembles, the optimality verdict, the
//! DIS/Const estimate and report emission.
//!
//! Trials are independent. Trial `i` realizes its scenario from
//! `seed::trial_seed(master_seed, i)`; trials run in parallel and their
//! partial results are reduced in trial-index order, so a report is a pure
//! function of its [`ExperimentConfig`] (apart from the wall-clock field).

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{SamplerMethod, SamplerOptions, ShiftDensityKind};
use crate::error::{Error, Result};
use crate::fusion::{CombinerId, UnitProb};
use crate::metrics::{
    bundle_const, distance, DISReport, EnsembleStats, PointwiseAccumulator, PointwiseTable,
    MIN_BIN_SAMPLES,
};
use crate::scenario::{realize_scenario_with, AlphaMode, ScenarioParams};
use crate::seed;

/// Separation, in combined standard errors, that the naive combiner must
/// keep below every other combiner for the verdict to pass.
pub const VERDICT_MARGIN_STDERR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub theta: f64,
    pub n: usize,
    pub trials: usize,
    pub j_sampler: SamplerMethod,
    pub alpha_mode: AlphaMode,
    pub combiners: Vec<CombinerId>,
    pub master_seed: u64,
    pub output_path: Option<String>,
    pub format: ReportFormat,
    /// Hit-and-run length for correlation grids; `None` for the default.
    pub hitrun_burn_in: Option<usize>,
    /// Hit-and-run length for microcanonical curves; `None` for the default.
    pub curve_burn_in: Option<usize>,
    pub shift_density: ShiftDensityKind,
    pub pointwise_bins: usize,
    pub min_bin_samples: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            n: 64,
            trials: 500,
            j_sampler: SamplerMethod::SinkhornIid,
            alpha_mode: AlphaMode::Canonical,
            combiners: CombinerId::ALL.to_vec(),
            master_seed: 0,
            output_path: None,
            format: ReportFormat::Json,
            hitrun_burn_in: None,
            curve_burn_in: None,
            shift_density: ShiftDensityKind::Uniform,
            pointwise_bins: 10,
            min_bin_samples: MIN_BIN_SAMPLES,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return fail(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.trials < 1 {
            return fail("trials must be at least 1".into());
        }
        if !self.combiners.contains(&CombinerId::Naive) {
            return fail("combiners must include naive".into());
        }
        if self.pointwise_bins < 2 {
            return fail(format!(
                "pointwise_bins must be at least 2, got {}",
                self.pointwise_bins
            ));
        }
        if self.hitrun_burn_in == Some(0) || self.curve_burn_in == Some(0) {
            return fail("burn-in lengths must be at least 1".into());
        }
        Ok(())
    }

    /// Combiners in configured order with duplicates removed.
    fn distinct_combiners(&self) -> Vec<CombinerId> {
        let mut out: Vec<CombinerId> = Vec::new();
        for &c in &self.combiners {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    pub fn scenario_params(&self) -> Result<ScenarioParams> {
        Ok(ScenarioParams {
            theta: UnitProb::new(self.theta)?,
            n: self.n,
            sampler: self.j_sampler,
            mode: self.alpha_mode,
            sampler_options: SamplerOptions {
                hitrun_burn_in: self.hitrun_burn_in,
                shift_density: self.shift_density,
            },
            curve_burn_in: self.curve_burn_in,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerSummary {
    pub name: CombinerId,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonStatus {
    /// Naive is lower by more than the margin.
    Separated,
    NotSeparated,
    /// Same function as naive at this prior, so there is nothing to separate.
    CoincidesWithNaive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub combiner: CombinerId,
    /// `mean(combiner) - mean(naive)`.
    pub gap: f64,
    pub combined_stderr: f64,
    pub status: ComparisonStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub margin_stderr: f64,
    pub comparisons: Vec<Comparison>,
}

/// Applies the verdict rule: naive passes when, for every other combiner
/// that is a different function at this prior,
/// `mean(other) - mean(naive) > 2 * sqrt(se_naive^2 + se_other^2)`.
pub fn decide_verdict(
    theta: f64,
    naive: &EnsembleStats,
    others: &[(CombinerId, EnsembleStats)],
) -> Verdict {
    let comparisons: Vec<Comparison> = others
        .iter()
        .filter(|(c, _)| *c != CombinerId::Naive)
        .map(|(c, stats)| {
            let gap = stats.mean - naive.mean;
            let combined = naive.combined_stderr(stats);
            let status = if c.coincides_with_naive(theta) {
                ComparisonStatus::CoincidesWithNaive
            } else if gap > VERDICT_MARGIN_STDERR * combined {
                ComparisonStatus::Separated
            } else {
                ComparisonStatus::NotSeparated
            };
            Comparison {
                combiner: *c,
                gap,
                combined_stderr: combined,
                status,
            }
        })
        .collect();
    let passed = comparisons
        .iter()
        .all(|c| c.status != ComparisonStatus::NotSeparated);
    Verdict {
        passed,
        margin_stderr: VERDICT_MARGIN_STDERR,
        comparisons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstCheck {
    pub estimate: EnsembleStats,
    pub lower: f64,
    pub upper: f64,
    pub within_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config: ExperimentConfig,
    pub combiners: Vec<CombinerSummary>,
    pub verdict: Verdict,
    pub pointwise: PointwiseTable,
    pub pointwise_max_deviation: f64,
    pub const_check: ConstCheck,
    pub margin_note: String,
    pub wall_clock_seconds: f64,
}

impl VerificationReport {
    pub fn summary(&self, combiner: CombinerId) -> Option<&CombinerSummary> {
        self.combiners.iter().find(|c| c.name == combiner)
    }

    /// Copy with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

struct TrialOutcome {
    distances: Vec<f64>,
    konst: f64,
    pointwise: Option<PointwiseAccumulator>,
}

fn run_trial(
    config: &ExperimentConfig,
    params: &ScenarioParams,
    combiners: &[CombinerId],
    with_pointwise: bool,
    index: usize,
) -> Result<TrialOutcome> {
    let bundle = realize_scenario_with(params, seed::trial_seed(config.master_seed, index as u64))?;
    let distances = combiners
        .iter()
        .map(|&c| distance(c, &bundle).map(|d| d.value))
        .collect::<Result<Vec<_>>>()?;
    let pointwise = if with_pointwise {
        let mut acc = PointwiseAccumulator::new(config.pointwise_bins, config.theta)?;
        acc.add_bundle(&bundle);
        Some(acc)
    } else {
        None
    };
    Ok(TrialOutcome {
        distances,
        konst: bundle_const(&bundle),
        pointwise,
    })
}

fn simulate(
    config: &ExperimentConfig,
    combiners: &[CombinerId],
    with_pointwise: bool,
) -> Result<Vec<TrialOutcome>> {
    config.validate()?;
    let params = config.scenario_params()?;
    (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial(config, &params, combiners, with_pointwise, i))
        .collect()
}

fn const_check(theta: f64, estimate: EnsembleStats) -> ConstCheck {
    let report = DISReport::new(CombinerId::Naive, theta, estimate, estimate);
    ConstCheck {
        estimate,
        lower: report.const_lower,
        upper: report.const_upper,
        within_bounds: report.const_within_bounds,
    }
}

/// Runs the full optimality experiment described by `config`.
pub fn run_verification(config: &ExperimentConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let combiners = config.distinct_combiners();
    let outcomes = simulate(config, &combiners, true)?;

    let mut summaries = Vec::with_capacity(combiners.len());
    let mut stats = Vec::with_capacity(combiners.len());
    for (ci, &c) in combiners.iter().enumerate() {
        let values: Vec<f64> = outcomes.iter().map(|o| o.distances[ci]).collect();
        let s = EnsembleStats::from_values(&values)?;
        summaries.push(CombinerSummary {
            name: c,
            mean: s.mean,
            stderr: s.stderr,
            trials: s.trials,
        });
        stats.push((c, s));
    }
    let naive = stats
        .iter()
        .find(|(c, _)| *c == CombinerId::Naive)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::ConfigInvalid("combiners must include naive".into()))?;
    let verdict = decide_verdict(config.theta, &naive, &stats);

    let mut acc = PointwiseAccumulator::new(config.pointwise_bins, config.theta)?;
    for o in &outcomes {
        if let Some(p) = &o.pointwise {
            acc.merge(p)?;
        }
    }
    let pointwise = acc.finish(config.min_bin_samples)?;
    let konst: Vec<f64> = outcomes.iter().map(|o| o.konst).collect();

    Ok(VerificationReport {
        config: config.clone(),
        combiners: summaries,
        verdict,
        pointwise_max_deviation: pointwise.max_deviation(),
        pointwise,
        const_check: const_check(config.theta, EnsembleStats::from_values(&konst)?),
        margin_note: format!(
            "verdict passes when mean(naive) is below every other combiner by more than \
             {VERDICT_MARGIN_STDERR} combined standard errors; combiners identical to naive \
             at this theta are reported but not compared"
        ),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Mean distance of the naive combiner and the Const estimate.
pub fn run_dis(config: &ExperimentConfig) -> Result<DISReport> {
    let outcomes = simulate(config, &[CombinerId::Naive], false)?;
    let dis: Vec<f64> = outcomes.iter().map(|o| o.distances[0]).collect();
    let konst: Vec<f64> = outcomes.iter().map(|o| o.konst).collect();
    Ok(DISReport::new(
        CombinerId::Naive,
        config.theta,
        EnsembleStats::from_values(&dis)?,
        EnsembleStats::from_values(&konst)?,
    ))
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("csv encoding failed: {e}"))
}

fn into_csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

/// One row per combiner: `name,mean,stderr,trials`.
pub fn combiners_csv(report: &VerificationReport) -> Result<String> {
    into_csv_string(&report.combiners)
}

#[derive(Serialize, Deserialize)]
pub struct PointwiseRow {
    pub alpha_bin: usize,
    pub beta_bin: usize,
    pub alpha_center: f64,
    pub beta_center: f64,
    pub samples: u64,
    pub empirical: Option<f64>,
    pub naive_at_center: f64,
    pub flagged: bool,
}

/// One row per `(alpha, beta)` bin.
pub fn pointwise_csv(table: &PointwiseTable) -> Result<String> {
    into_csv_string(table.cells.iter().map(|c| PointwiseRow {
        alpha_bin: c.alpha_bin,
        beta_bin: c.beta_bin,
        alpha_center: c.alpha_center,
        beta_center: c.beta_center,
        samples: c.samples,
        empirical: c.empirical,
        naive_at_center: c.naive_at_center,
        flagged: c.flagged,
    }))
}

#[derive(Serialize, Deserialize)]
pub struct DisRow {
    pub combiner: CombinerId,
    pub theta: f64,
    pub trials: usize,
    pub dis_mean: f64,
    pub dis_stderr: f64,
    pub const_mean: f64,
    pub const_stderr: f64,
    pub const_lower: f64,
    pub const_upper: f64,
    pub const_within_bounds: bool,
}

pub fn dis_csv(report: &DISReport) -> Result<String> {
    into_csv_string([DisRow {
        combiner: report.combiner,
        theta: report.theta,
        trials: report.dis_estimate.trials,
        dis_mean: report.dis_estimate.mean,
        dis_stderr: report.dis_estimate.stderr,
        const_mean: report.const_estimate.mean,
        const_stderr: report.const_estimate.stderr,
        const_lower: report.const_lower,
        const_upper: report.const_upper,
        const_within_bounds: report.const_within_bounds,
    }])
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)
}
