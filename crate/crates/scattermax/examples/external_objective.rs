//! Plug an arbitrary executable in as the forward model via the line
//! protocol: one `{"params": [..]}` per line in, one `{"value": x}` or
//! `{"error": "..."}` per line out.
//!
//! Here the "solver" is a POSIX shell + awk one-liner computing
//! `1 / (1 + x^2 + y^2)`. Any language works as long as it speaks the
//! protocol; the `scattermax worker` subcommand serves the built-in models
//! the same way.
//!
//! Run with: cargo run --release --example external_objective

use scattermax::domain::BoxDomain;
use scattermax::external::{ExternalCommandModel, ExternalCommandSpec};
use scattermax::mc::{robust_estimate_direct, ManufacturingDistribution};
use scattermax::objective::{evaluate_batch, ObjectiveModel};
use scattermax::seeds::SeedSpace;

const WORKER_SCRIPT: &str = r#"
while read line; do
  echo "$line" | awk '{
    gsub(/[^0-9eE+,.-]/, "");
    n = split($0, a, ",");
    s = 0.0;
    for (i = 1; i <= n; i++) s += a[i] * a[i];
    printf("{\"value\": %.17g}\n", 1.0 / (1.0 + s));
    fflush();
  }'
done
"#;

fn main() -> scattermax::Result<()> {
    let spec = ExternalCommandSpec {
        command: "/bin/sh".into(),
        args: vec!["-c".into(), WORKER_SCRIPT.into()],
        max_workers: 2,
        lower_bound: Some(0.0),
    };
    let model = ExternalCommandModel::new(spec, BoxDomain::cube(-2.0, 2.0, 2)?)?;

    println!("single evaluations through the subprocess:");
    for p in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]] {
        println!("  f({p:?}) = {:.6}", model.eval(&p)?);
    }

    let points: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.25, 0.5]).collect();
    let values = evaluate_batch(&model, &points, 2);
    println!("\nbatch of {} evaluations: {:?}", points.len(), values);

    // The external model slots into the estimators like any other.
    let dist = ManufacturingDistribution::isotropic(vec![0.0, 0.0], 0.3)?;
    let mut rng = SeedSpace::new(1).stream("external");
    let est = robust_estimate_direct(|p| model.eval(p), &dist, 2000, 2, &mut rng)?;
    println!("\nrobust estimate at the origin under 0.3 scatter: {}", est.display());
    Ok(())
}
