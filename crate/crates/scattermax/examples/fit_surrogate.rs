//! Fit a bounded-output (warped) GP surrogate to positive observations and
//! compare its predictions with a plain GP near the lower bound.
//!
//! Run with: cargo run --release --example fit_surrogate

use scattermax::gp::GPModel;
use scattermax::warp::fit_warped;

fn main() -> scattermax::Result<()> {
    // A positive function that hugs its lower bound over half the domain and
    // then takes off; sampled sparsely enough that interpolation on the flat
    // side rings around the kink.
    let f = |x: f64| 0.002 + (x - 2.0f64).max(0.0).powi(3);
    let points: Vec<Vec<f64>> = (0..14).map(|i| vec![i as f64 * 0.29]).collect();
    let values: Vec<f64> = points.iter().map(|p| f(p[0])).collect();

    let warped = fit_warped(&points, &values, 6, 11)?;
    let plain = GPModel::fit(&points, &values, 6, 11)?;

    println!(
        "learned transform: cutoff {:.4}, b_lower {:.3} (affine fallback: {})",
        warped.warp().y_lower_cutoff,
        warped.warp().b_lower,
        warped.affine_fallback()
    );
    println!(
        "GP hyperparameters: mu0 {:.3}, sigma0^2 {:.4}, length scale {:.3}",
        warped.gp().hyper().mu0,
        warped.gp().hyper().sigma0_sq,
        warped.gp().hyper().length_scales[0]
    );

    println!("\n x      true      warped band (low / median / high)    plain band low");
    let mut plain_band_negative = 0usize;
    for i in 0..26 {
        let x = 0.08 + 0.145 * i as f64;
        let b = warped.predict_bounded(&[x])?;
        let g = plain.predict(&[x])?;
        let plain_low = g.mean - g.variance.sqrt();
        if plain_low < 0.0 {
            plain_band_negative += 1;
        }
        println!(
            "{x:5.2}  {:8.5}  {:9.5} / {:8.5} / {:8.5}   {:9.5}{}",
            f(x),
            b.median - b.sigma_minus,
            b.median,
            b.median + b.sigma_plus,
            plain_low,
            if plain_low < 0.0 { "  <- below the bound" } else { "" }
        );
    }
    println!(
        "\nthe warped surrogate's band stays above the bound everywhere; the plain \
         GP's one-sigma band dipped below it at {plain_band_negative} of 26 points."
    );
    Ok(())
}
