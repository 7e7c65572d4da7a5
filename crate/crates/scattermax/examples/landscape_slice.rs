//! Export a 2-D slice of the landscape around a point of interest, with the
//! manufacturing-distribution sigma ellipses for plotting.
//!
//! Run with: cargo run --release --example landscape_slice

use scattermax::objective::ridge_plateau_2d;
use scattermax::pipeline::{landscape_slice, SliceSource};

fn main() -> scattermax::Result<()> {
    let model = ridge_plateau_2d();
    let sigma = [0.1, 0.1];
    let center = model.spec().plateau_center.clone();

    let slice = landscape_slice(
        &SliceSource::Model(&model),
        &center,
        0,
        1,
        13,
        3.0,
        &sigma,
    )?;

    println!(
        "slice through {center:?} spanning ±3 sigma; ellipse radii {} / {}",
        slice.sigma_i, slice.sigma_j
    );
    println!("\nASCII density (rows: axis 0, cols: axis 1):");
    let max = slice
        .values
        .iter()
        .flatten()
        .cloned()
        .fold(f64::MIN, f64::max);
    for row in &slice.values {
        let line: String = row
            .iter()
            .map(|v| {
                let t = v / max;
                match (t * 5.0) as usize {
                    0 => ' ',
                    1 => '.',
                    2 => ':',
                    3 => 'o',
                    4 => 'O',
                    _ => '#',
                }
            })
            .collect();
        println!("  |{line}|");
    }

    println!("\nCSV head (i,j,p_i,p_j,value):");
    for (a, x) in slice.xs.iter().enumerate().take(2) {
        for (b, y) in slice.ys.iter().enumerate().take(3) {
            println!("  {a},{b},{x},{y},{}", slice.values[a][b]);
        }
    }
    println!("  ... use the `scattermax slice` subcommand to write the full file.");
    Ok(())
}
