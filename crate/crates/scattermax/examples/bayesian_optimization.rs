//! Expected-improvement Bayesian optimization of a black-box function.
//!
//! Run with: cargo run --release --example bayesian_optimization

use scattermax::bayesopt::{bo_run, expected_improvement, OptimizeMode};
use scattermax::domain::BoxDomain;
use scattermax::seeds::SeedSpace;

fn main() -> scattermax::Result<()> {
    // Closed-form EI at a few gaps between the incumbent and the prediction.
    println!("expected improvement below f_best = 0 for sd = 1:");
    for mean in [-2.0, -0.5, 0.0, 0.5, 2.0] {
        println!("  mean {mean:5.1}: EI = {:.6}", expected_improvement(mean, 1.0, 0.0));
    }

    // Minimize a 1-D multimodal function.
    let f = |p: &[f64]| Ok((3.0 * p[0]).sin() + 0.8 * (p[0] - 1.0).powi(2));
    let domain = BoxDomain::cube(-3.0, 4.0, 1)?;
    let seeds: Vec<(Vec<f64>, f64)> = [-2.5, 0.0, 3.5]
        .iter()
        .map(|&x| (vec![x], f(&[x]).unwrap()))
        .collect();
    let mut rng = SeedSpace::new(17).stream("bo");
    let run = bo_run(f, &domain, 25, seeds, OptimizeMode::Minimize, &mut rng)?;

    println!("\nevaluation history (iteration, x, f, incumbent):");
    for rec in &run.history {
        match rec.value {
            Some(v) => println!(
                "  {:3}  x = {:7.4}  f = {:8.5}  best = {:8.5}",
                rec.iteration, rec.point[0], v, rec.incumbent
            ),
            None => println!("  {:3}  x = {:7.4}  evaluation failed", rec.iteration, rec.point[0]),
        }
    }
    println!(
        "\nbest: f({:.5}) = {:.6} after {} evaluations",
        run.best_point[0],
        run.best_value,
        run.history.len()
    );
    Ok(())
}
