//! Robust design optimization under manufacturing scatter.
//!
//! scattermax finds design parameters whose figure of merit survives
//! fabrication tolerances. It combines bounded-output Gaussian-process
//! surrogates, Sobol-sampled training campaigns, a convergence-controlled
//! Monte Carlo robust estimator, and Bayesian-optimization refinement in a
//! two-pass coarse-to-narrow pipeline.
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `scattermax` binary drives full campaigns from a TOML config.

pub mod artifacts;
pub mod bayesopt;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod external;
pub mod gp;
pub mod linalg;
pub mod mc;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod seeds;
pub mod sobol;
pub mod warp;

pub use bayesopt::{bo_run, expected_improvement, BORecord, BORun, BOState, BoConfig, OptimizeMode};
pub use domain::{BoxDomain, ParameterVector};
pub use error::{Error, Result};
pub use external::{ExternalCommandModel, ExternalCommandSpec};
pub use gp::{GPHyperparams, GPModel, Prediction};
pub use mc::{
    mc_error, perc_deviations, percentile, robust_estimate_direct, robust_estimate_surrogate,
    Alg1Config, ManufacturingDistribution, RobustEstimate, StopMode,
};
pub use objective::{
    brute_force_robust_median, builtin, eval_ridge_plateau, evaluate_batch, ObjectiveModel,
    RidgePlateauModel, RidgePlateauSpec,
};
pub use pipeline::{
    batch_robust_map, cluster_filter, converge_candidates, filter_outliers,
    generate_training_data, landscape_slice, naive_optimize, narrow_domain,
    reevaluate_uncertainty, run_two_pass, shrink_eval_domain, verify_candidates, CampaignConfig,
    CampaignResult, MapEntry, NaiveResult, PassResult, PassSettings, TrainingSet,
};
pub use seeds::SeedSpace;
pub use sobol::{scale_to_domain, sobol_in_domain, sobol_sequence, UnitSample};
pub use warp::{derive_warp, fit_warped, BoundedPrediction, VarianceSpace, WarpParams, WarpedGPModel};
