//! Shared fixtures for the integration suites.

// Each test binary uses a subset of these helpers.
#![allow(dead_code)]

use scattermax::mc::Alg1Config;
use scattermax::objective::{ridge_plateau_4d, ObjectiveModel, RidgePlateauModel};
use scattermax::pipeline::{CampaignConfig, FitSettings, PassSettings};

/// Frozen campaign settings for the 4-D ridge/plateau fixture: sized so the
/// full two-pass run finishes in minutes on two cores while preserving the
/// coarse-to-narrow structure (paper-scale values stay the library
/// defaults).
pub fn fixture_campaign_config() -> (RidgePlateauModel, CampaignConfig) {
    let model = ridge_plateau_4d();
    let mut cfg = CampaignConfig::new(model.default_domain(), vec![16.8; 4]).unwrap();
    cfg.pass1 = PassSettings {
        n_train: 512,
        n_eval: 256,
        sobol_skip: 0,
        outlier_threshold: Some(40.0),
        n_candidates: 6,
        bo_budget_per_candidate: 12,
        n_verify: 64,
    };
    cfg.pass2 = PassSettings {
        n_train: 512,
        n_eval: 256,
        sobol_skip: 0,
        outlier_threshold: None,
        n_candidates: 1,
        bo_budget_per_candidate: 16,
        n_verify: 512,
    };
    cfg.alg1 = Alg1Config {
        n_cap: 4000,
        ..Alg1Config::default()
    };
    cfg.fit = FitSettings {
        restarts: 6,
        max_evals: 500,
        hyper_subsample: Some(256),
    };
    cfg.master_seed = 42;
    cfg.parallelism = 2;
    (model, cfg)
}

/// A much smaller 2-D config for CLI mechanics tests (seconds, not minutes).
pub fn tiny_config_toml() -> String {
    r#"
schema_version = 1

[model]
builtin = "ridge-plateau-2d"

[uncertainty]
sigma = [0.1, 0.1]

[pass1]
n_train = 128
n_eval = 64
n_candidates = 3
bo_budget_per_candidate = 6
n_verify = 32

[pass2]
n_train = 128
n_eval = 64
n_candidates = 1
bo_budget_per_candidate = 8
n_verify = 64

[algorithm1]
batch = 500
n_cap = 1500

[fit]
restarts = 3
max_evals = 250
hyper_subsample = 96

[campaign]
master_seed = 5
parallelism = 2
naive_bo_budget = 8
"#
    .to_string()
}
