//! Naive-Bayes fusion of classifier posteriors, with a Monte Carlo harness
//! that measures how well each fusion rule approximates the true joint
//! posterior over random correlation models between the features.
//!
//! * [`fusion`]: the combination rules.
//! * [`correlation`]: discretized correlation models and their samplers.
//! * [`scenario`]: classifier curves, marginal CDFs and full scenarios.
//! * [`metrics`]: distances, ensemble statistics and the pointwise optimum.
//! * [`harness`]: seeded experiments and reports.

pub mod correlation;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod scenario;
pub mod seed;

pub use correlation::{CorrelationGrid, SamplerMethod, ShiftDensity};
pub use error::{Error, Result};
pub use fusion::{
    baseline_combiner, model_posterior, naive_fuse_multi, naive_fuse_multi_all, naive_fuse_two,
    CombinerId, PosteriorMatrix, PriorVector, UnitProb,
};
pub use harness::{run_dis, run_verification, ExperimentConfig, VerificationReport};
pub use metrics::{distance, DISReport, DistanceReport, EnsembleStats};
pub use scenario::{realize_scenario, AlphaCurve, AlphaMode, ScenarioBundle};
