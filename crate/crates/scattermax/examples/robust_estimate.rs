//! Robust performance estimation under manufacturing scatter: the iterative
//! surrogate-based estimator against the direct Monte Carlo answer.
//!
//! Run with: cargo run --release --example robust_estimate

use scattermax::mc::{
    robust_estimate_direct, robust_estimate_surrogate, Alg1Config, ManufacturingDistribution,
};
use scattermax::objective::{ridge_plateau_2d, ObjectiveModel};
use scattermax::pipeline::{filter_outliers, generate_training_data};
use scattermax::seeds::SeedSpace;
use scattermax::warp::fit_warped_with;
use scattermax::warp::WarpFitOptions;

fn main() -> scattermax::Result<()> {
    let model = ridge_plateau_2d();
    let domain = model.default_domain();
    let seeds = SeedSpace::new(5);

    // Train a surrogate on 512 Sobol samples of the true model, after
    // removing right-tail spikes the GP cannot represent.
    let training = generate_training_data(&model, &domain, 512, 0, 2)?;
    let (filtered, removed) = filter_outliers(&training, None)?;
    println!(
        "training: {} samples, {} removed as outliers",
        training.len(),
        removed.len()
    );
    let surrogate = fit_warped_with(
        &filtered.points,
        &filtered.values,
        &WarpFitOptions {
            restarts: 6,
            seed: seeds.stream_seed("fit"),
            ..WarpFitOptions::default()
        },
    )?;

    let cfg = Alg1Config {
        n_cap: 20_000,
        ..Alg1Config::default()
    };
    println!("estimator config: batch {}, rel_tol {}, cap {}", cfg.batch, cfg.rel_tol, cfg.n_cap);

    // Compare at the plateau center (robust) and the ridge center (fragile).
    for (label, center) in [
        ("plateau center", model.spec().plateau_center.clone()),
        ("ridge center", model.spec().ridge_center.clone()),
    ] {
        let dist = ManufacturingDistribution::isotropic(center.clone(), 0.1)?;
        let sur = robust_estimate_surrogate(
            &surrogate,
            &dist,
            &cfg,
            &mut seeds.stream(&format!("sur/{label}")),
        )?;
        let dir = robust_estimate_direct(
            |p| model.eval(p),
            &dist,
            50_000,
            2,
            &mut seeds.stream(&format!("dir/{label}")),
        )?;
        println!("\n{label} {center:?}, pointwise value {:.3}:", model.eval(&center)?);
        println!(
            "  surrogate: {}  ({} samples, converged: {})",
            sur.display(),
            sur.n_total,
            sur.converged
        );
        println!("  direct:    {}  ({} samples)", dir.display(), dir.n_total);
    }
    println!("\nthe ridge's pointwise value collapses under scatter; the plateau's survives.");
    println!("(the surrogate misjudges the filtered-out ridge spike in absolute terms,");
    println!(" but the ranking it feeds the pipeline is right; direct verification of");
    println!(" shortlisted candidates is what pins down the numbers.)");
    Ok(())
}
