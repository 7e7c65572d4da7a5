//! Acceptance gate: one test per release criterion, each printing a
//! pass/fail line with its measurements. The heavy campaign artifacts are
//! produced once and shared by the criteria that need them.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use scattermax::artifacts::{CampaignDir, DirectorySink, RunManifest};
use scattermax::domain::BoxDomain;
use scattermax::gp::{GPHyperparams, GPModel};
use scattermax::mc::{
    mc_error, perc_deviations, percentile, robust_estimate_direct, robust_estimate_surrogate,
    Alg1Config, ManufacturingDistribution,
};
use scattermax::objective::{brute_force_robust_median, rippled_2d, ObjectiveModel};
use scattermax::pipeline::{
    generate_training_data, narrow_domain, naive_optimize, reevaluate_uncertainty,
    run_two_pass, shrink_eval_domain, CampaignResult, ReevalSettings,
};
use scattermax::seeds::SeedSpace;
use scattermax::warp::{derive_warp, fit_warped_with, WarpFitOptions, WarpedGPModel, WarpedGpDocument};
use scattermax::{bayesopt, sobol_in_domain};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance: {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

/// The minute-scale criteria hold this lock so their wall-clock budgets are
/// measured without competing for the two cores.
fn heavy_guard() -> std::sync::MutexGuard<'static, ()> {
    static HEAVY: std::sync::Mutex<()> = std::sync::Mutex::new(());
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

// ---------------------------------------------------------------------------
// Shared campaign artifacts (criteria 9, 10, 11).

struct SharedCampaign {
    result: CampaignResult,
    campaign_seconds: f64,
    dir_a: tempfile::TempDir,
    dir_b: tempfile::TempDir,
}

fn shared_campaign() -> &'static SharedCampaign {
    static SHARED: OnceLock<SharedCampaign> = OnceLock::new();
    SHARED.get_or_init(|| {
        let (model, cfg) = common::fixture_campaign_config();
        let run_into = |root: &std::path::Path| {
            let dir = CampaignDir::open(root).unwrap();
            let manifest = RunManifest::new("fixture".into());
            let mut sink = DirectorySink::new(dir, manifest, false);
            run_two_pass(&model, &cfg, &mut sink).unwrap()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let t0 = Instant::now();
        let result = run_into(dir_a.path());
        let campaign_seconds = t0.elapsed().as_secs_f64();
        let _ = run_into(dir_b.path());
        SharedCampaign {
            result,
            campaign_seconds,
            dir_a,
            dir_b,
        }
    })
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_narrow_domain_reproduces_printed_bounds() {
    let t0 = Instant::now();
    let d = narrow_domain(&[428.6, 282.5, 369.5, 253.0], &[16.8; 4], 5.0).unwrap();
    let elapsed = t0.elapsed();
    let expected = [
        (344.6, 512.6),
        (198.5, 366.5),
        (285.5, 453.5),
        (169.0, 337.0),
    ];
    let mut max_err: f64 = 0.0;
    for (i, (lo, hi)) in expected.iter().enumerate() {
        max_err = max_err
            .max((d.lower()[i] - lo).abs())
            .max((d.upper()[i] - hi).abs());
    }
    let pass = max_err < 1e-9 && elapsed.as_micros() < 1000;
    report(
        "criterion 1 (ten-sigma hypercube bounds)",
        pass,
        &format!("max abs error {max_err:.2e}, {elapsed:?}"),
    );
}

#[test]
fn criterion_02_eval_domain_shrink_arithmetic() {
    let train = BoxDomain::cube(56.0, 616.0, 4).unwrap();
    let shrunk = shrink_eval_domain(&train, &[16.8; 4]).unwrap();
    let mut max_err: f64 = 0.0;
    for i in 0..4 {
        max_err = max_err
            .max((shrunk.lower()[i] - 106.4).abs())
            .max((shrunk.upper()[i] - 565.6).abs());
    }
    report(
        "criterion 2 (three-sigma eval-domain shrink)",
        max_err < 1e-9,
        &format!("max abs error {max_err:.2e}"),
    );
}

#[test]
fn criterion_03_gp_matches_dense_oracle() {
    let t0 = Instant::now();
    let mut rng = SeedSpace::new(31).stream("crit3");
    let mut max_rel: f64 = 0.0;
    let mut max_interp: f64 = 0.0;
    for case in 0..20 {
        let dim = 2 + case % 2;
        let m = 16 + (case * 5) % 49; // up to 64
        // Well-separated points and moderate length scales keep the kernel
        // matrix condition number low enough that a 1e-8 comparison between
        // two linear-algebra routes is meaningful.
        let domain = BoxDomain::cube(-2.0, 2.0, dim).unwrap();
        let points = sobol_in_domain(&domain, m, 16 * case).unwrap();
        let values: Vec<f64> = points
            .iter()
            .map(|p| (p[0] * 1.1).sin() + p.iter().sum::<f64>() * 0.2)
            .collect();
        let hyper = GPHyperparams::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(0.5..2.0),
            (0..dim).map(|_| rng.random_range(0.25..0.6)).collect(),
        )
        .unwrap();
        let model = GPModel::condition(points.clone(), values.clone(), hyper.clone()).unwrap();

        // Dense linear-algebra oracle with the same jitter.
        let mut k = nalgebra::DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                k[(i, j)] =
                    scattermax::gp::matern52(&points[i], &points[j], &hyper).unwrap();
            }
            k[(i, i)] += model.jitter();
        }
        let k_inv = k.try_inverse().unwrap();
        let resid = nalgebra::DVector::from_iterator(m, values.iter().map(|y| y - hyper.mu0));

        for q in 0..6 {
            let p_star: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.2..2.2)).collect();
            let k_star = nalgebra::DVector::from_iterator(
                m,
                points
                    .iter()
                    .map(|p| scattermax::gp::matern52(p, &p_star, &hyper).unwrap()),
            );
            let mean_oracle = hyper.mu0 + k_star.dot(&(&k_inv * &resid));
            let var_oracle =
                (hyper.sigma0_sq - k_star.dot(&(&k_inv * &k_star))).clamp(0.0, hyper.sigma0_sq);
            let pred = model.predict(&p_star).unwrap();
            let scale = hyper.sigma0_sq.max(mean_oracle.abs());
            max_rel = max_rel
                .max((pred.mean - mean_oracle).abs() / scale)
                .max((pred.variance - var_oracle).abs() / hyper.sigma0_sq);
            let _ = q;
        }
        // Interpolation at training inputs.
        for (p, y) in points.iter().zip(&values).take(8) {
            let pred = model.predict(p).unwrap();
            max_interp = max_interp.max((pred.mean - y).abs() / (1.0 + y.abs()));
        }
    }
    let elapsed = t0.elapsed();
    let pass = max_rel < 1e-8 && max_interp < 1e-5 && elapsed.as_secs() < 10;
    report(
        "criterion 3 (GP posterior matches dense oracle)",
        pass,
        &format!("max rel err {max_rel:.2e}, interp err {max_interp:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_04_warp_round_trip_and_c1() {
    let mut rng = SeedSpace::new(32).stream("crit4");
    let mut max_rt: f64 = 0.0;
    let mut max_slope: f64 = 0.0;
    for _ in 0..100 {
        // Bound 0 (the default): the exponential tail stays representable
        // all the way down. A nonzero bound absorbs the tail below its ULP,
        // and spans below ~0.08 underflow exp inside [-50, 50].
        let y_lower = 0.0;
        let span = rng.random_range(0.1..20.0);
        let b = rng.random_range(-5.0..5.0);
        let warp = derive_warp(y_lower, y_lower + span, b).unwrap();
        for k in 0..40 {
            let y_tilde = -50.0 + 100.0 * (k as f64 + 0.5) / 40.0;
            let y = warp.g_inverse(y_tilde);
            let back = warp.g_forward(y).unwrap();
            max_rt = max_rt.max((back - y_tilde).abs() / (1.0 + y_tilde.abs()));
        }
        let t = warp.y_tilde_cutoff;
        let h = 1e-9 * (1.0 + t.abs());
        let left = (warp.g_inverse(t) - warp.g_inverse(t - h)) / h;
        let right = (warp.g_inverse(t + h) - warp.g_inverse(t)) / h;
        max_slope = max_slope.max((left - right).abs() / right.abs());
    }
    let pass = max_rt < 1e-10 && max_slope < 1e-6;
    report(
        "criterion 4 (transform round trip and C1 matching)",
        pass,
        &format!("max round-trip err {max_rt:.2e}, max slope mismatch {max_slope:.2e}"),
    );
}

#[test]
fn criterion_05_percentile_calibration() {
    let t0 = Instant::now();
    let mut rng = SeedSpace::new(33).stream("crit5");
    let values: Vec<f64> = (0..1_000_000)
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    let p50 = percentile(&values, 50.0).unwrap();
    let (sm, sp) = perc_deviations(&values).unwrap();
    let elapsed = t0.elapsed();
    let pass = p50.abs() < 0.005
        && (sp - 0.99446).abs() < 0.02
        && (sm - 0.99446).abs() < 0.02
        && elapsed.as_secs() < 5;
    report(
        "criterion 5 (percentile calibration on 1e6 normals)",
        pass,
        &format!("P50 {p50:.4}, P84-P50 {sp:.5}, P50-P16 {sm:.5}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_06_mc_error_scaling() {
    let mut rng = SeedSpace::new(34).stream("crit6");
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let small: Vec<f64> = (0..4000)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let large: Vec<f64> = (0..16000)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        ratios.push(mc_error(&large).unwrap() / mc_error(&small).unwrap());
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let pass = (mean - 0.5).abs() <= 0.05;
    report(
        "criterion 6 (MC error halves when samples quadruple)",
        pass,
        &format!("mean ratio {mean:.4} over 20 repetitions"),
    );
}

/// Simpson quadrature of `E[max(0, f_best - X)]`, X ~ N(mean, sd^2).
fn ei_quadrature(mean: f64, sd: f64, f_best: f64) -> f64 {
    let lo = (mean - 14.0 * sd).min(f_best - 14.0 * sd);
    let hi = f_best;
    if hi <= lo {
        return 0.0;
    }
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |x: f64| (f_best - x) * phi((x - mean) / sd) / sd;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn criterion_07_ei_matches_quadrature() {
    let mut max_abs: f64 = 0.0;
    for sd in [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1000.0] {
        for gap in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let mean = 0.4;
            let f_best = mean + gap * sd;
            let closed = bayesopt::expected_improvement(mean, sd * sd, f_best);
            let quad = ei_quadrature(mean, sd, f_best);
            max_abs = max_abs.max((closed - quad).abs());
        }
    }
    report(
        "criterion 7 (EI closed form vs quadrature)",
        max_abs < 1e-6,
        &format!("max abs deviation {max_abs:.2e} over sigma in [1e-3, 1e3]"),
    );
}

#[test]
fn criterion_08_estimator_agrees_with_oracle() {
    let _serial = heavy_guard();
    let t0 = Instant::now();
    let model = rippled_2d();
    let domain = model.default_domain();
    let sigma = vec![0.15, 0.15];
    let training = generate_training_data(&model, &domain, 4096, 0, 2).unwrap();

    // Hyperparameters from a dense spatial subregion (a strided subsample
    // would alias the fine structure), then conditioning on all 4096 points.
    let mut sub_p = Vec::new();
    let mut sub_v = Vec::new();
    for (p, v) in training.points.iter().zip(&training.values) {
        if p[0] < -0.3 && p[1] < -0.3 {
            sub_p.push(p.clone());
            sub_v.push(*v);
        }
    }
    let sub_fit = fit_warped_with(
        &sub_p,
        &sub_v,
        &WarpFitOptions {
            y_lower: 0.0,
            restarts: 4,
            seed: 7,
            max_evals: 350,
            hyper_subsample: None,
        },
    )
    .unwrap();
    let warp = sub_fit.warp().clone();
    let transformed: Vec<f64> = training
        .values
        .iter()
        .map(|y| warp.g_forward(*y).unwrap())
        .collect();
    let gp = GPModel::condition(
        training.points.clone(),
        transformed,
        sub_fit.gp().hyper().clone(),
    )
    .unwrap();
    let surrogate = WarpedGPModel::from_document(WarpedGpDocument {
        gp: gp.to_document(),
        warp,
        affine_fallback: false,
    })
    .unwrap();

    let eval_domain = shrink_eval_domain(&domain, &sigma).unwrap();
    let seeds = SeedSpace::new(2024);
    let mut center_rng = seeds.stream("crit8-centers");
    let alg1 = Alg1Config {
        batch: 600,
        n_cap: 600,
        ..Alg1Config::default()
    };
    let mut hits = 0usize;
    for i in 0..50 {
        let center: Vec<f64> = (0..2)
            .map(|k| center_rng.random_range(eval_domain.lower()[k]..eval_domain.upper()[k]))
            .collect();
        let dist = ManufacturingDistribution::diagonal(center, sigma.clone()).unwrap();
        let sur =
            robust_estimate_surrogate(&surrogate, &dist, &alg1, &mut seeds.indexed_stream("s", i))
                .unwrap();
        let dir = robust_estimate_direct(
            |p| model.eval(p),
            &dist,
            100_000,
            2,
            &mut seeds.indexed_stream("d", i),
        )
        .unwrap();
        if (sur.median - dir.median).abs() <= sur.sigma_median + 2.0 * dir.sigma_mc {
            hits += 1;
        }
    }
    let elapsed = t0.elapsed();
    let pass = hits >= 48 && elapsed.as_secs() < 300;
    report(
        "criterion 8 (surrogate estimator vs brute-force oracle)",
        pass,
        &format!("{hits}/50 centers within tolerance, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_09_robust_beats_naive() {
    let _serial = heavy_guard();
    let shared = shared_campaign();
    let (model, cfg) = common::fixture_campaign_config();
    let t0 = Instant::now();
    let seeds = SeedSpace::new(cfg.master_seed + 1);
    let naive = naive_optimize(
        &model,
        &model.default_domain(),
        &shared.result.pass1.training,
        16,
        &cfg.sigma_manuf,
        512,
        &seeds,
    )
    .unwrap();
    let naive_seconds = t0.elapsed().as_secs_f64();

    let selected = shared.result.selected().point.clone();
    let mut rng = seeds.stream("crit9-oracle");
    let robust_med = brute_force_robust_median(
        &model,
        &ManufacturingDistribution::diagonal(selected, cfg.sigma_manuf.clone()).unwrap(),
        100_000,
        &mut rng,
    )
    .unwrap();
    let naive_med = brute_force_robust_median(
        &model,
        &ManufacturingDistribution::diagonal(naive.point.clone(), cfg.sigma_manuf.clone())
            .unwrap(),
        100_000,
        &mut rng,
    )
    .unwrap();

    // sigma_MC of the two brute-force oracles, for the separation criterion.
    let mut rng_s = seeds.stream("crit9-sigma");
    let sel_est = robust_estimate_direct(
        |p| model.eval(p),
        &ManufacturingDistribution::diagonal(shared.result.selected().point.clone(), cfg.sigma_manuf.clone()).unwrap(),
        100_000,
        2,
        &mut rng_s,
    )
    .unwrap();
    let naive_est = robust_estimate_direct(
        |p| model.eval(p),
        &ManufacturingDistribution::diagonal(naive.point.clone(), cfg.sigma_manuf.clone()).unwrap(),
        100_000,
        2,
        &mut rng_s,
    )
    .unwrap();
    let combined_sigma = sel_est.sigma_mc + naive_est.sigma_mc;

    let factor = robust_med / naive_med;
    let separation = robust_med - naive_med;
    let total_minutes = (shared.campaign_seconds + naive_seconds) / 60.0;
    let pass = factor >= 2.0 && separation >= 5.0 * combined_sigma && total_minutes < 15.0;
    report(
        "criterion 9 (two-pass robust beats naive argmax)",
        pass,
        &format!(
            "robust {robust_med:.4} vs naive {naive_med:.4} ({factor:.2}x, separation {separation:.3} >= 5 x {combined_sigma:.4}), campaign+naive {total_minutes:.1} min"
        ),
    );
}

#[test]
fn criterion_10_campaigns_are_byte_identical() {
    let _serial = heavy_guard();
    let shared = shared_campaign();
    let collect = |root: &std::path::Path| {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    if path.file_name().is_some_and(|n| n == "logs") {
                        continue; // timings live here, outside the guarantee
                    }
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == "json") {
                    files.push(path.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        files.sort();
        files
    };
    let files_a = collect(shared.dir_a.path());
    let files_b = collect(shared.dir_b.path());
    let mut identical = files_a == files_b && !files_a.is_empty();
    let mut compared = 0usize;
    if identical {
        for rel in &files_a {
            let a = std::fs::read(shared.dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(shared.dir_b.path().join(rel)).unwrap();
            if a != b {
                identical = false;
                println!("  mismatch in {}", rel.display());
                break;
            }
            compared += 1;
        }
    }
    report(
        "criterion 10 (identical seeds give byte-identical artifacts)",
        identical,
        &format!("{compared} JSON artifacts compared"),
    );
}

#[test]
fn criterion_11_tighter_uncertainty_raises_the_median() {
    let _serial = heavy_guard();
    let shared = shared_campaign();
    let (_, cfg) = common::fixture_campaign_config();
    let full_sigma_median = shared.result.selected().surrogate_estimate.median;
    let halved: Vec<f64> = cfg.sigma_manuf.iter().map(|s| s / 2.0).collect();
    let seeds = SeedSpace::new(cfg.master_seed + 2);
    let (_, est) = reevaluate_uncertainty(
        &shared.result.pass2.surrogate,
        &shared.result.pass2.train_domain,
        &halved,
        &ReevalSettings {
            n_eval: cfg.pass2.n_eval,
            alg1: cfg.alg1.clone(),
            bo_budget: cfg.pass2.bo_budget_per_candidate,
            cluster_radius: cfg.cluster_radius,
        },
        &seeds,
    )
    .unwrap();
    let pass = est.median > full_sigma_median;
    report(
        "criterion 11 (halved uncertainty raises the robust median)",
        pass,
        &format!("halved-sigma median {:.4} vs full-sigma {:.4}", est.median, full_sigma_median),
    );
}

// Keep the Sobol import exercised: the acceptance suite relies on the
// deterministic sequence for its fixtures.
#[test]
fn fixture_training_set_catches_the_ridge() {
    let (model, cfg) = common::fixture_campaign_config();
    let pts = sobol_in_domain(&cfg.wide_domain, cfg.pass1.n_train, 0).unwrap();
    let best = pts
        .iter()
        .map(|p| model.eval(p).unwrap())
        .fold(f64::MIN, f64::max);
    assert!(
        best > 40.0,
        "the frozen training set must contain a strong ridge value, best {best}"
    );
}
