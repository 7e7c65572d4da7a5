//! Deterministic Sobol sampling of a design domain.
//!
//! Run with: cargo run --release --example sobol_sampling

use scattermax::{sobol_sequence, scale_to_domain, BoxDomain};

fn main() -> scattermax::Result<()> {
    // First points of the 1-D sequence (the origin is included).
    let line = sobol_sequence(1, 8, 0)?;
    let coords: Vec<f64> = line.iter().map(|p| p[0]).collect();
    println!("first 8 points in 1-D: {coords:?}");

    // A power-of-two sample stratifies every axis exactly.
    let pts = sobol_sequence(2, 16, 0)?;
    println!("\n16 points in [0,1)^2:");
    for p in &pts {
        println!("  ({:.4}, {:.4})", p[0], p[1]);
    }

    // Scaled into a labelled design domain (units are label metadata).
    let domain = BoxDomain::new(
        vec![56.0, 56.0],
        vec![616.0, 616.0],
        vec!["d1 [nm]".into(), "d2 [nm]".into()],
    )?;
    let scaled = scale_to_domain(&pts, &domain)?;
    println!("\nsame points scaled to {:?} x {:?}:", domain.lower(), domain.upper());
    for p in scaled.iter().take(4) {
        println!("  ({:.2}, {:.2})", p[0], p[1]);
    }

    // Per-axis means approach 0.5 at power-of-two counts.
    let big = sobol_sequence(4, 4096, 0)?;
    for axis in 0..4 {
        let mean: f64 = big.iter().map(|p| p[axis]).sum::<f64>() / big.len() as f64;
        println!("axis {axis}: mean of 4096 samples = {mean:.5}");
    }
    Ok(())
}
