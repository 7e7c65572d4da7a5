//! A miniature end-to-end two-pass campaign on a 2-D ridge/plateau
//! landscape, including the naive baseline it outperforms.
//!
//! Run with: cargo run --release --example two_pass_campaign

use scattermax::mc::Alg1Config;
use scattermax::objective::{brute_force_robust_median, ridge_plateau_2d, ObjectiveModel};
use scattermax::mc::ManufacturingDistribution;
use scattermax::pipeline::{
    naive_optimize, run_two_pass, CampaignConfig, FitSettings, NullSink, PassSettings,
};
use scattermax::seeds::SeedSpace;

fn main() -> scattermax::Result<()> {
    let model = ridge_plateau_2d();
    let sigma = vec![0.1, 0.1];

    let mut cfg = CampaignConfig::new(model.default_domain(), sigma.clone())?;
    cfg.pass1 = PassSettings {
        n_train: 256,
        n_eval: 128,
        n_candidates: 4,
        bo_budget_per_candidate: 8,
        n_verify: 64,
        ..PassSettings::default()
    };
    cfg.pass2 = PassSettings {
        n_train: 256,
        n_eval: 128,
        n_candidates: 1,
        bo_budget_per_candidate: 12,
        n_verify: 256,
        ..PassSettings::second_pass_default()
    };
    cfg.alg1 = Alg1Config {
        n_cap: 3000,
        ..Alg1Config::default()
    };
    cfg.fit = FitSettings {
        restarts: 4,
        max_evals: 400,
        hyper_subsample: Some(192),
    };
    cfg.master_seed = 11;

    println!("running the two-pass campaign on '{}'...", model.name());
    let result = run_two_pass(&model, &cfg, &mut NullSink)?;

    println!(
        "pass 1: {} training points, {} removed as outliers, selected {:?}",
        result.pass1.training.len(),
        result.pass1.removed_outliers.len(),
        result.pass1.selected.point
    );
    println!(
        "pass 2 domain: {:?} .. {:?} (clipped: {})",
        result.pass2.train_domain.lower(),
        result.pass2.train_domain.upper(),
        result.narrow_domain_clipped
    );
    let sel = result.selected();
    println!("robust design: {:?}", sel.point);
    println!("  surrogate estimate:  {}", sel.surrogate_estimate.display());
    println!("  direct verification: {}", sel.direct.display());

    // The naive ansatz: maximize the raw model and see what scatter does.
    let seeds = SeedSpace::new(11);
    let naive = naive_optimize(
        &model,
        &model.default_domain(),
        &result.pass1.training,
        12,
        &sigma,
        256,
        &seeds,
    )?;
    println!("\nnaive argmax: {:?} with raw value {:.3}", naive.point, naive.value);
    println!("  direct robustness:   {}", naive.direct.display());

    let mut rng = seeds.stream("oracle");
    let robust_med = brute_force_robust_median(
        &model,
        &ManufacturingDistribution::diagonal(sel.point.clone(), sigma.clone())?,
        100_000,
        &mut rng,
    )?;
    let naive_med = brute_force_robust_median(
        &model,
        &ManufacturingDistribution::diagonal(naive.point.clone(), sigma)?,
        100_000,
        &mut rng,
    )?;
    println!(
        "\nbrute-force robust medians: two-pass {robust_med:.4} vs naive {naive_med:.4} ({:.1}x)",
        robust_med / naive_med
    );
    Ok(())
}
