//! The five-step, two-pass robust optimization pipeline: training-data
//! generation, outlier filtering, surrogate fitting, batch robust mapping,
//! cluster filtering, candidate convergence, verification, domain narrowing,
//! re-evaluation under different uncertainties, and the naive baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{bo_run_with, BoConfig, OptimizeMode};
use crate::domain::{BoxDomain, ParameterVector};
use crate::error::{Error, Result};
use crate::mc::{
    percentile, robust_estimate_direct, robust_estimate_surrogate, Alg1Config,
    ManufacturingDistribution, RobustEstimate,
};
use crate::objective::{evaluate_batch, ObjectiveModel};
use crate::seeds::SeedSpace;
use crate::sobol::sobol_in_domain;
use crate::warp::{fit_warped_with, WarpFitOptions, WarpedGPModel};

/// Paired sample matrix and observations with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub points: Vec<ParameterVector>,
    pub values: Vec<f64>,
    pub provenance: TrainingProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub model: String,
    pub n_requested: usize,
    pub sobol_skip: usize,
    /// Points whose evaluation failed and were excluded.
    pub failed_points: Vec<ParameterVector>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_value_entry(&self) -> Option<(&ParameterVector, f64)> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, v)| (&self.points[i], *v))
    }
}

/// One robust-map entry: where Algorithm 1 was centered and what it returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    /// Index of the Sobol point that seeded this estimate.
    pub sobol_index: usize,
    pub point: ParameterVector,
    pub estimate: RobustEstimate,
}

/// A candidate after direct verification with the true model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedCandidate {
    pub point: ParameterVector,
    /// The surrogate-based estimate the candidate arrived with.
    pub surrogate_estimate: RobustEstimate,
    /// Direct evaluation of the true model around the candidate.
    pub direct: RobustEstimate,
}

/// Shrink the training domain by three standard deviations per side so that
/// manufacturing samples drawn inside the result stay in surrogate-informed
/// territory.
pub fn shrink_eval_domain(train_domain: &BoxDomain, sigma_manuf: &[f64]) -> Result<BoxDomain> {
    train_domain.check_dim(sigma_manuf.len())?;
    let mut lower = Vec::with_capacity(sigma_manuf.len());
    let mut upper = Vec::with_capacity(sigma_manuf.len());
    for (i, sigma) in sigma_manuf.iter().enumerate() {
        let lo = train_domain.lower()[i] + 3.0 * sigma;
        let hi = train_domain.upper()[i] - 3.0 * sigma;
        if lo >= hi {
            return Err(Error::DomainTooSmall {
                axis: i,
                label: train_domain.label(i).to_string(),
                span: train_domain.span(i),
                required: 6.0 * sigma,
            });
        }
        lower.push(lo);
        upper.push(hi);
    }
    BoxDomain::new(lower, upper, train_domain.labels().to_vec())
}

/// The hypercube spanning `half_width_sigmas` standard deviations on each
/// side of `center` (ten standard deviations total by default). Zero-sigma
/// axes get a hair of width so the box stays valid.
pub fn narrow_domain(
    center: &[f64],
    sigma_manuf: &[f64],
    half_width_sigmas: f64,
) -> Result<BoxDomain> {
    if center.len() != sigma_manuf.len() {
        return Err(Error::DimensionMismatch {
            expected: center.len(),
            actual: sigma_manuf.len(),
        });
    }
    let mut lower = Vec::with_capacity(center.len());
    let mut upper = Vec::with_capacity(center.len());
    for (c, s) in center.iter().zip(sigma_manuf) {
        let half = half_width_sigmas * s;
        let half = if half > 0.0 { half } else { 1e-9 * (1.0 + c.abs()) };
        lower.push(c - half);
        upper.push(c + half);
    }
    BoxDomain::unlabeled(lower, upper)
}

/// Sobol-sample the domain and evaluate the model in parallel. Failed
/// evaluations are excluded and recorded; more than 10% failures aborts.
pub fn generate_training_data(
    model: &dyn ObjectiveModel,
    domain: &BoxDomain,
    n: usize,
    sobol_skip: usize,
    parallelism: usize,
) -> Result<TrainingSet> {
    if n < 2 {
        return Err(Error::Config(format!("need n >= 2 training samples, got {n}")));
    }
    let points = sobol_in_domain(domain, n, sobol_skip)?;
    let raw = evaluate_batch(model, &points, parallelism);
    let mut kept_points = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut failed_points = Vec::new();
    for (p, v) in points.into_iter().zip(raw) {
        match v {
            Some(v) => {
                kept_points.push(p);
                values.push(v);
            }
            None => failed_points.push(p),
        }
    }
    if failed_points.len() * 10 > n {
        return Err(Error::TooManyFailures {
            failed: failed_points.len(),
            total: n,
        });
    }
    Ok(TrainingSet {
        points: kept_points,
        values,
        provenance: TrainingProvenance {
            model: model.name().to_string(),
            n_requested: n,
            sobol_skip,
            failed_points,
        },
    })
}

/// A training point removed by the outlier filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedPoint {
    pub point: ParameterVector,
    pub value: f64,
}

/// Remove extreme right-tail outliers before GP training. With an explicit
/// threshold, values strictly above it go; without one, values above
/// `median + 10 (P84 - P50)` go. Refuses to drop more than 10% of the data.
pub fn filter_outliers(
    train: &TrainingSet,
    threshold: Option<f64>,
) -> Result<(TrainingSet, Vec<RemovedPoint>)> {
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let p50 = percentile(&train.values, 50.0)?;
            let p84 = percentile(&train.values, 84.0)?;
            p50 + 10.0 * (p84 - p50)
        }
    };
    let total = train.len();
    let mut removed = Vec::new();
    let mut points = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for (p, v) in train.points.iter().zip(&train.values) {
        if *v > threshold {
            removed.push(RemovedPoint {
                point: p.clone(),
                value: *v,
            });
        } else {
            points.push(p.clone());
            values.push(*v);
        }
    }
    if removed.len() * 10 > total {
        return Err(Error::OutlierOverflow {
            threshold,
            would_remove: removed.len(),
            total,
        });
    }
    Ok((
        TrainingSet {
            points,
            values,
            provenance: train.provenance.clone(),
        },
        removed,
    ))
}

/// Run the robust estimator at `n_eval` Sobol points of the eval domain,
/// sorted by median descending. Estimates run concurrently, each on its own
/// derived random stream, so results are independent of thread scheduling.
pub fn batch_robust_map(
    surrogate: &WarpedGPModel,
    eval_domain: &BoxDomain,
    n_eval: usize,
    sigma_manuf: &[f64],
    alg1: &Alg1Config,
    seeds: &SeedSpace,
    stream_label: &str,
) -> Result<Vec<MapEntry>> {
    eval_domain.check_dim(surrogate.dim())?;
    let centers = sobol_in_domain(eval_domain, n_eval, 0)?;
    let mut entries: Vec<Result<MapEntry>> = Vec::new();
    centers
        .into_par_iter()
        .enumerate()
        .map(|(i, point)| {
            let dist = ManufacturingDistribution::diagonal(point.clone(), sigma_manuf.to_vec())?;
            let mut rng = seeds.indexed_stream(stream_label, i);
            let estimate = robust_estimate_surrogate(surrogate, &dist, alg1, &mut rng)?;
            Ok(MapEntry {
                sobol_index: i,
                point,
                estimate,
            })
        })
        .collect_into_vec(&mut entries);
    let mut out: Vec<MapEntry> = entries.into_iter().collect::<Result<_>>()?;
    sort_by_median_desc(&mut out);
    Ok(out)
}

fn sort_by_median_desc(entries: &mut [MapEntry]) {
    entries.sort_by(|a, b| {
        b.estimate
            .median
            .partial_cmp(&a.estimate.median)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.sobol_index.cmp(&b.sobol_index))
    });
}

/// Greedy cluster filter over a median-sorted list: keep an entry iff its
/// distance to every kept entry, in unit-cube coordinates of the eval
/// domain, is at least `radius`.
pub fn cluster_filter(
    sorted: &[MapEntry],
    eval_domain: &BoxDomain,
    radius: f64,
) -> Vec<MapEntry> {
    let mut kept: Vec<MapEntry> = Vec::new();
    for entry in sorted {
        if kept
            .iter()
            .all(|k| eval_domain.normalized_distance(&k.point, &entry.point) >= radius)
        {
            kept.push(entry.clone());
        }
    }
    kept
}

/// Settings of the candidate-convergence step.
#[derive(Debug, Clone)]
pub struct ConvergeSettings {
    pub bo_budget: usize,
    pub cluster_radius: f64,
    pub bo: BoConfig,
}

/// Converge each candidate with a Bayesian optimizer maximizing the robust
/// median on the surrogate, seeded with the candidate and its robust-map
/// neighbors within the cluster radius. Converged duplicates are merged
/// keeping the best.
#[allow(clippy::too_many_arguments)]
pub fn converge_candidates(
    surrogate: &WarpedGPModel,
    candidates: &[MapEntry],
    map: &[MapEntry],
    eval_domain: &BoxDomain,
    sigma_manuf: &[f64],
    alg1: &Alg1Config,
    settings: &ConvergeSettings,
    seeds: &SeedSpace,
    stream_label: &str,
) -> Result<Vec<(ParameterVector, RobustEstimate)>> {
    if settings.bo_budget == 0 {
        return Ok(candidates
            .iter()
            .map(|c| (c.point.clone(), c.estimate.clone()))
            .collect());
    }
    let converged: Vec<Result<(ParameterVector, RobustEstimate)>> = candidates
        .par_iter()
        .enumerate()
        .map(|(ci, candidate)| {
            let label = format!("{stream_label}/cand{ci}");
            let eval_counter = std::sync::atomic::AtomicUsize::new(0);
            let objective = |p: &[f64]| -> Result<f64> {
                let idx = eval_counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let dist =
                    ManufacturingDistribution::diagonal(p.to_vec(), sigma_manuf.to_vec())?;
                let mut rng = seeds.indexed_stream(&label, idx);
                Ok(robust_estimate_surrogate(surrogate, &dist, alg1, &mut rng)?.median)
            };
            // Pre-train on the candidate and its map neighborhood.
            let mut bo_seeds: Vec<(ParameterVector, f64)> =
                vec![(candidate.point.clone(), candidate.estimate.median)];
            for entry in map {
                if entry.sobol_index != candidate.sobol_index
                    && eval_domain.normalized_distance(&entry.point, &candidate.point)
                        < settings.cluster_radius
                {
                    bo_seeds.push((entry.point.clone(), entry.estimate.median));
                }
            }
            let mut bo_rng = seeds.stream(&format!("{label}/bo"));
            let run = bo_run_with(
                objective,
                eval_domain,
                settings.bo_budget,
                bo_seeds,
                OptimizeMode::Maximize,
                &settings.bo,
                &mut bo_rng,
            )?;
            let dist = ManufacturingDistribution::diagonal(
                run.best_point.clone(),
                sigma_manuf.to_vec(),
            )?;
            let mut rng = seeds.stream(&format!("{label}/final"));
            let estimate = robust_estimate_surrogate(surrogate, &dist, alg1, &mut rng)?;
            Ok((run.best_point, estimate))
        })
        .collect();
    let mut converged: Vec<(ParameterVector, RobustEstimate)> =
        converged.into_iter().collect::<Result<_>>()?;
    // Merge candidates that converged into the same optimum.
    converged.sort_by(|a, b| {
        b.1.median
            .partial_cmp(&a.1.median)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut merged: Vec<(ParameterVector, RobustEstimate)> = Vec::new();
    for (p, est) in converged {
        if merged
            .iter()
            .all(|(q, _)| eval_domain.normalized_distance(q, &p) >= settings.cluster_radius)
        {
            merged.push((p, est));
        }
    }
    Ok(merged)
}

/// Verify candidates against the true model with direct Monte Carlo
/// estimates, sorted by direct median descending.
pub fn verify_candidates(
    model: &dyn ObjectiveModel,
    candidates: &[(ParameterVector, RobustEstimate)],
    sigma_manuf: &[f64],
    n_verify: usize,
    parallelism: usize,
    seeds: &SeedSpace,
    stream_label: &str,
) -> Result<Vec<VerifiedCandidate>> {
    if n_verify < 2 {
        return Err(Error::Config(format!("n_verify must be >= 2, got {n_verify}")));
    }
    let mut verified = Vec::with_capacity(candidates.len());
    for (i, (point, surrogate_estimate)) in candidates.iter().enumerate() {
        let dist = ManufacturingDistribution::diagonal(point.clone(), sigma_manuf.to_vec())?;
        let mut rng = seeds.indexed_stream(stream_label, i);
        let direct = robust_estimate_direct(
            |p| model.eval(p),
            &dist,
            n_verify,
            parallelism,
            &mut rng,
        )?;
        verified.push(VerifiedCandidate {
            point: point.clone(),
            surrogate_estimate: surrogate_estimate.clone(),
            direct,
        });
    }
    verified.sort_by(|a, b| {
        b.direct
            .median
            .partial_cmp(&a.direct.median)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.direct
                    .sigma_minus
                    .partial_cmp(&b.direct.sigma_minus)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    Ok(verified)
}

/// Per-pass sample and budget settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PassSettings {
    pub n_train: usize,
    pub n_eval: usize,
    /// Sobol burn-in for this pass's training sample (the sequence restarts
    /// each pass by default).
    pub sobol_skip: usize,
    /// Explicit outlier cut; `None` applies the percentile rule.
    pub outlier_threshold: Option<f64>,
    pub n_candidates: usize,
    pub bo_budget_per_candidate: usize,
    pub n_verify: usize,
}

impl Default for PassSettings {
    fn default() -> Self {
        PassSettings {
            n_train: 4096,
            n_eval: 4096,
            sobol_skip: 0,
            outlier_threshold: None,
            n_candidates: 6,
            bo_budget_per_candidate: 64,
            n_verify: 64,
        }
    }
}

impl PassSettings {
    /// Defaults of the refinement pass: one candidate, more verification.
    pub fn second_pass_default() -> Self {
        PassSettings {
            n_candidates: 1,
            n_verify: 512,
            ..PassSettings::default()
        }
    }
}

/// Surrogate-fit budget knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub restarts: usize,
    pub max_evals: usize,
    /// Hyperparameter-fit subsample cap (`None`: all points).
    pub hyper_subsample: Option<usize>,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            restarts: 8,
            max_evals: 600,
            hyper_subsample: Some(256),
        }
    }
}

/// Full campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub wide_domain: BoxDomain,
    pub sigma_manuf: Vec<f64>,
    pub pass1: PassSettings,
    pub pass2: PassSettings,
    pub alg1: Alg1Config,
    pub fit: FitSettings,
    /// Half-width of the second-pass domain in manufacturing sigmas.
    pub narrow_half_width_sigmas: f64,
    /// Cluster radius in unit-cube coordinates of the eval domain.
    pub cluster_radius: f64,
    pub master_seed: u64,
    pub parallelism: usize,
}

impl CampaignConfig {
    pub fn new(wide_domain: BoxDomain, sigma_manuf: Vec<f64>) -> Result<Self> {
        let cfg = CampaignConfig {
            wide_domain,
            sigma_manuf,
            pass1: PassSettings::default(),
            pass2: PassSettings::second_pass_default(),
            alg1: Alg1Config::default(),
            fit: FitSettings::default(),
            narrow_half_width_sigmas: 5.0,
            cluster_radius: 0.25,
            master_seed: 0,
            parallelism: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check the invariants a campaign needs before any model evaluation.
    /// Returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let dim = self.wide_domain.dim();
        if self.sigma_manuf.len() != dim {
            return Err(Error::Config(format!(
                "sigma_manuf has {} entries for a {dim}-axis domain",
                self.sigma_manuf.len()
            )));
        }
        if self.sigma_manuf.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("sigma_manuf must be non-negative and finite".into()));
        }
        for (i, sigma) in self.sigma_manuf.iter().enumerate() {
            if self.wide_domain.span(i) <= 6.0 * sigma {
                return Err(Error::DomainTooSmall {
                    axis: i,
                    label: self.wide_domain.label(i).to_string(),
                    span: self.wide_domain.span(i),
                    required: 6.0 * sigma,
                });
            }
        }
        if self.cluster_radius <= 0.0 {
            return Err(Error::Config("cluster_radius must be positive".into()));
        }
        if self.narrow_half_width_sigmas <= 0.0 {
            return Err(Error::Config("narrow_half_width_sigmas must be positive".into()));
        }
        let mut warnings = Vec::new();
        for (name, pass) in [("pass1", &self.pass1), ("pass2", &self.pass2)] {
            if !pass.n_train.is_power_of_two() {
                warnings.push(format!(
                    "{name}.n_train = {} is not a power of two; Sobol coverage degrades",
                    pass.n_train
                ));
            }
            if pass.n_candidates == 0 {
                return Err(Error::Config(format!("{name}.n_candidates must be >= 1")));
            }
        }
        Ok(warnings)
    }
}

/// Everything one pass produces.
#[derive(Debug)]
pub struct PassResult {
    pub train_domain: BoxDomain,
    pub eval_domain: BoxDomain,
    pub training: TrainingSet,
    pub removed_outliers: Vec<RemovedPoint>,
    pub surrogate: WarpedGPModel,
    pub robust_map: Vec<MapEntry>,
    pub candidates: Vec<(ParameterVector, RobustEstimate)>,
    pub verified: Vec<VerifiedCandidate>,
    /// The verified candidate with the best direct median.
    pub selected: VerifiedCandidate,
}

/// Naive-ansatz outcome: argmax of the raw model and its direct robustness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveResult {
    pub point: ParameterVector,
    /// Raw model value at the argmax.
    pub value: f64,
    pub direct: RobustEstimate,
    /// Evaluation history of the optimizer run (empty for budget 0).
    #[serde(default)]
    pub bo_history: Vec<crate::bayesopt::BORecord>,
}

/// Outcome of the full two-pass campaign.
#[derive(Debug)]
pub struct CampaignResult {
    pub pass1: PassResult,
    pub pass2: PassResult,
    pub narrow_domain_clipped: bool,
    pub naive: Option<NaiveResult>,
    pub warnings: Vec<String>,
}

impl CampaignResult {
    pub fn selected(&self) -> &VerifiedCandidate {
        &self.pass2.selected
    }
}

/// Hook that lets the campaign runner persist (and on resume, restore)
/// per-stage artifacts. The default no-op sink keeps everything in memory.
pub trait StageSink {
    fn load_training(&self, _stage: &str) -> Option<TrainingSet> {
        None
    }
    fn save_training(&mut self, _stage: &str, _data: &TrainingSet) -> Result<()> {
        Ok(())
    }
    fn load_surrogate(&self, _stage: &str) -> Option<WarpedGPModel> {
        None
    }
    fn save_surrogate(&mut self, _stage: &str, _model: &WarpedGPModel) -> Result<()> {
        Ok(())
    }
    fn load_map(&self, _stage: &str) -> Option<Vec<MapEntry>> {
        None
    }
    fn save_map(&mut self, _stage: &str, _map: &[MapEntry]) -> Result<()> {
        Ok(())
    }
    fn save_removed(&mut self, _stage: &str, _removed: &[RemovedPoint]) -> Result<()> {
        Ok(())
    }
    fn load_candidates(&self, _stage: &str) -> Option<Vec<(ParameterVector, RobustEstimate)>> {
        None
    }
    fn save_candidates(
        &mut self,
        _stage: &str,
        _candidates: &[(ParameterVector, RobustEstimate)],
    ) -> Result<()> {
        Ok(())
    }
    fn load_verified(&self, _stage: &str) -> Option<Vec<VerifiedCandidate>> {
        None
    }
    fn save_verified(&mut self, _stage: &str, _verified: &[VerifiedCandidate]) -> Result<()> {
        Ok(())
    }
    fn stage_complete(&mut self, _stage: &str) -> Result<()> {
        Ok(())
    }
}

/// In-memory sink: no persistence.
pub struct NullSink;

impl StageSink for NullSink {}

fn run_pass(
    model: &dyn ObjectiveModel,
    cfg: &CampaignConfig,
    pass: &PassSettings,
    pass_name: &str,
    train_domain: &BoxDomain,
    seeds: &SeedSpace,
    sink: &mut dyn StageSink,
) -> Result<PassResult> {
    let stage = |s: &str| format!("{pass_name}/{s}");
    fn in_stage(s: &str) -> impl Fn(Error) -> Error + '_ {
        move |e: Error| e.in_stage(s)
    }

    let training = match sink.load_training(&stage("training")) {
        Some(t) => t,
        None => {
            let t = generate_training_data(
                model,
                train_domain,
                pass.n_train,
                pass.sobol_skip,
                cfg.parallelism,
            )
            .map_err(in_stage(&stage("training")))?;
            sink.save_training(&stage("training"), &t)?;
            sink.stage_complete(&stage("training"))?;
            t
        }
    };

    let (filtered, removed) = filter_outliers(&training, pass.outlier_threshold)
        .map_err(in_stage(&stage("filter")))?;
    sink.save_removed(&stage("filter"), &removed)?;

    let surrogate = match sink.load_surrogate(&stage("surrogate")) {
        Some(s) => s,
        None => {
            let s = fit_warped_with(
                &filtered.points,
                &filtered.values,
                &WarpFitOptions {
                    y_lower: model.lower_bound(),
                    restarts: cfg.fit.restarts,
                    seed: seeds.stream_seed(&stage("fit")),
                    max_evals: cfg.fit.max_evals,
                    hyper_subsample: cfg.fit.hyper_subsample,
                },
            )
            .map_err(in_stage(&stage("surrogate")))?;
            sink.save_surrogate(&stage("surrogate"), &s)?;
            sink.stage_complete(&stage("surrogate"))?;
            s
        }
    };

    let eval_domain = shrink_eval_domain(train_domain, &cfg.sigma_manuf)
        .map_err(in_stage(&stage("eval-domain")))?;

    let robust_map = match sink.load_map(&stage("map")) {
        Some(m) => m,
        None => {
            let m = batch_robust_map(
                &surrogate,
                &eval_domain,
                pass.n_eval,
                &cfg.sigma_manuf,
                &cfg.alg1,
                seeds,
                &stage("map"),
            )
            .map_err(in_stage(&stage("map")))?;
            sink.save_map(&stage("map"), &m)?;
            sink.stage_complete(&stage("map"))?;
            m
        }
    };

    let clustered = cluster_filter(&robust_map, &eval_domain, cfg.cluster_radius);
    let top: Vec<MapEntry> = clustered.into_iter().take(pass.n_candidates).collect();

    let candidates = match sink.load_candidates(&stage("converge")) {
        Some(c) => c,
        None => {
            let c = converge_candidates(
                &surrogate,
                &top,
                &robust_map,
                &eval_domain,
                &cfg.sigma_manuf,
                &cfg.alg1,
                &ConvergeSettings {
                    bo_budget: pass.bo_budget_per_candidate,
                    cluster_radius: cfg.cluster_radius,
                    bo: BoConfig::default(),
                },
                seeds,
                &stage("converge"),
            )
            .map_err(in_stage(&stage("converge")))?;
            sink.save_candidates(&stage("converge"), &c)?;
            sink.stage_complete(&stage("converge"))?;
            c
        }
    };

    let verified = match sink.load_verified(&stage("verify")) {
        Some(v) => v,
        None => {
            let v = verify_candidates(
                model,
                &candidates,
                &cfg.sigma_manuf,
                pass.n_verify,
                cfg.parallelism,
                seeds,
                &stage("verify"),
            )
            .map_err(in_stage(&stage("verify")))?;
            sink.save_verified(&stage("verify"), &v)?;
            sink.stage_complete(&stage("verify"))?;
            v
        }
    };

    let selected = verified
        .first()
        .cloned()
        .ok_or_else(|| Error::FitFailure("no candidate survived".into()).in_stage(&stage("select")))?;

    Ok(PassResult {
        train_domain: train_domain.clone(),
        eval_domain,
        training,
        removed_outliers: removed,
        surrogate,
        robust_map,
        candidates,
        verified,
        selected,
    })
}

/// The full coarse-to-narrow campaign: pass 1 on the wide domain, selection
/// of the best verified candidate, pass 2 on the ten-sigma hypercube around
/// it (clipped to the wide domain), and final direct verification.
pub fn run_two_pass(
    model: &dyn ObjectiveModel,
    cfg: &CampaignConfig,
    sink: &mut dyn StageSink,
) -> Result<CampaignResult> {
    let warnings = cfg.validate()?;
    let seeds = SeedSpace::new(cfg.master_seed);
    let pass1 = run_pass(
        model,
        cfg,
        &cfg.pass1,
        "pass1",
        &cfg.wide_domain,
        &seeds,
        sink,
    )?;

    let narrow = narrow_domain(
        &pass1.selected.point,
        &cfg.sigma_manuf,
        cfg.narrow_half_width_sigmas,
    )?;
    let clipped_box = narrow.clip_to(&cfg.wide_domain)?;
    let narrow_domain_clipped = clipped_box.lower() != narrow.lower()
        || clipped_box.upper() != narrow.upper();
    let pass2_domain = BoxDomain::new(
        clipped_box.lower().to_vec(),
        clipped_box.upper().to_vec(),
        cfg.wide_domain.labels().to_vec(),
    )?;

    let pass2 = run_pass(model, cfg, &cfg.pass2, "pass2", &pass2_domain, &seeds, sink)?;

    Ok(CampaignResult {
        pass1,
        pass2,
        narrow_domain_clipped,
        naive: None,
        warnings,
    })
}

/// The naive ansatz: maximize the raw model with a Bayesian optimizer seeded
/// with the full (unfiltered) training set, then measure the robustness of
/// the found argmax directly.
pub fn naive_optimize(
    model: &dyn ObjectiveModel,
    domain: &BoxDomain,
    train: &TrainingSet,
    bo_budget: usize,
    sigma_manuf: &[f64],
    n_verify: usize,
    seeds: &SeedSpace,
) -> Result<NaiveResult> {
    if train.is_empty() {
        return Err(Error::Config("naive optimization needs a training set".into()));
    }
    let (point, value, bo_history) = if bo_budget == 0 {
        let (p, v) = train.max_value_entry().unwrap();
        (p.clone(), v, Vec::new())
    } else {
        let bo_seeds: Vec<(ParameterVector, f64)> = train
            .points
            .iter()
            .cloned()
            .zip(train.values.iter().cloned())
            .collect();
        let mut rng = seeds.stream("naive/bo");
        let run = bo_run_with(
            |p| model.eval(p),
            domain,
            bo_budget,
            bo_seeds,
            OptimizeMode::Maximize,
            &BoConfig::default(),
            &mut rng,
        )?;
        (run.best_point, run.best_value, run.history)
    };
    let dist = ManufacturingDistribution::diagonal(point.clone(), sigma_manuf.to_vec())?;
    let mut rng = seeds.stream("naive/verify");
    let direct = robust_estimate_direct(|p| model.eval(p), &dist, n_verify, 2, &mut rng)?;
    Ok(NaiveResult {
        point,
        value,
        direct,
        bo_history,
    })
}

/// Re-run the robust mapping and convergence on an existing surrogate with a
/// different manufacturing uncertainty. No new model evaluations happen.
pub struct ReevalSettings {
    pub n_eval: usize,
    pub alg1: Alg1Config,
    pub bo_budget: usize,
    pub cluster_radius: f64,
}

pub fn reevaluate_uncertainty(
    surrogate: &WarpedGPModel,
    train_domain: &BoxDomain,
    new_sigma: &[f64],
    settings: &ReevalSettings,
    seeds: &SeedSpace,
) -> Result<(ParameterVector, RobustEstimate)> {
    let eval_domain = shrink_eval_domain(train_domain, new_sigma)?;
    let map = batch_robust_map(
        surrogate,
        &eval_domain,
        settings.n_eval,
        new_sigma,
        &settings.alg1,
        seeds,
        "reeval/map",
    )?;
    let clustered = cluster_filter(&map, &eval_domain, settings.cluster_radius);
    let top: Vec<MapEntry> = clustered.into_iter().take(1).collect();
    let converged = converge_candidates(
        surrogate,
        &top,
        &map,
        &eval_domain,
        new_sigma,
        &settings.alg1,
        &ConvergeSettings {
            bo_budget: settings.bo_budget,
            cluster_radius: settings.cluster_radius,
            bo: BoConfig::default(),
        },
        seeds,
        "reeval/converge",
    )?;
    converged
        .into_iter()
        .next()
        .ok_or_else(|| Error::FitFailure("re-evaluation produced no candidate".into()))
}

/// What a 2-D landscape slice is taken of.
pub enum SliceSource<'a> {
    Surrogate(&'a WarpedGPModel),
    Model(&'a dyn ObjectiveModel),
}

/// A 2-D slice through the landscape around a center point, with the 1/2/3
/// sigma ellipse radii of the manufacturing distribution for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    pub axis_i: usize,
    pub axis_j: usize,
    pub center: ParameterVector,
    /// Grid coordinates along axis_i.
    pub xs: Vec<f64>,
    /// Grid coordinates along axis_j.
    pub ys: Vec<f64>,
    /// Row-major values: `values[a][b]` at `(xs[a], ys[b])`.
    pub values: Vec<Vec<f64>>,
    /// Manufacturing sigma along the two axes, for 1/2/3-sigma ellipses.
    pub sigma_i: f64,
    pub sigma_j: f64,
}

/// Evaluate a 2-D grid in the `(axis_i, axis_j)` plane through `center`,
/// spanning `extent_sigmas` manufacturing sigmas on each side.
pub fn landscape_slice(
    source: &SliceSource,
    center: &[f64],
    axis_i: usize,
    axis_j: usize,
    grid: usize,
    extent_sigmas: f64,
    sigma_manuf: &[f64],
) -> Result<LandscapeSlice> {
    let dim = center.len();
    if grid < 2 {
        return Err(Error::Config(format!("slice grid must be >= 2, got {grid}")));
    }
    if axis_i >= dim || axis_j >= dim || axis_i == axis_j {
        return Err(Error::Config(format!(
            "invalid slice axes ({axis_i}, {axis_j}) for dimension {dim}"
        )));
    }
    if sigma_manuf.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: sigma_manuf.len(),
        });
    }
    let coords = |axis: usize| -> Vec<f64> {
        let half = extent_sigmas * sigma_manuf[axis];
        (0..grid)
            .map(|k| center[axis] - half + 2.0 * half * k as f64 / (grid - 1) as f64)
            .collect()
    };
    let xs = coords(axis_i);
    let ys = coords(axis_j);
    let mut points = Vec::with_capacity(grid * grid);
    for x in &xs {
        for y in &ys {
            let mut p = center.to_vec();
            p[axis_i] = *x;
            p[axis_j] = *y;
            points.push(p);
        }
    }
    let flat: Vec<f64> = match source {
        SliceSource::Surrogate(model) => model
            .predict_bounded_batch(&points)?
            .into_iter()
            .map(|p| p.median)
            .collect(),
        SliceSource::Model(model) => {
            let vals = evaluate_batch(*model, &points, 2);
            vals.into_iter()
                .map(|v| v.ok_or_else(|| Error::ObjectiveFailure("slice evaluation failed".into())))
                .collect::<Result<_>>()?
        }
    };
    let values: Vec<Vec<f64>> = flat.chunks(grid).map(|c| c.to_vec()).collect();
    Ok(LandscapeSlice {
        axis_i,
        axis_j,
        center: center.to_vec(),
        xs,
        ys,
        values,
        sigma_i: sigma_manuf[axis_i],
        sigma_j: sigma_manuf[axis_j],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{plateau_4d, ridge_plateau_2d};

    #[test]
    fn shrink_matches_table_arithmetic() {
        let d = BoxDomain::cube(56.0, 616.0, 4).unwrap();
        let shrunk = shrink_eval_domain(&d, &[16.8; 4]).unwrap();
        for i in 0..4 {
            assert!((shrunk.lower()[i] - 106.4).abs() < 1e-9);
            assert!((shrunk.upper()[i] - 565.6).abs() < 1e-9);
        }
    }

    #[test]
    fn shrink_with_zero_sigma_is_identity() {
        let d = BoxDomain::cube(0.0, 1.0, 2).unwrap();
        let s = shrink_eval_domain(&d, &[0.0, 0.0]).unwrap();
        assert_eq!(s.lower(), d.lower());
        assert_eq!(s.upper(), d.upper());
    }

    #[test]
    fn shrink_rejects_six_sigma_span() {
        let d = BoxDomain::unlabeled(vec![0.0], vec![6.0]).unwrap();
        match shrink_eval_domain(&d, &[1.0]) {
            Err(Error::DomainTooSmall { axis, .. }) => assert_eq!(axis, 0),
            other => panic!("expected DomainTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn narrow_domain_paper_anchor() {
        let d = narrow_domain(&[428.6, 282.5, 369.5, 253.0], &[16.8; 4], 5.0).unwrap();
        let expected = [
            (344.6, 512.6),
            (198.5, 366.5),
            (285.5, 453.5),
            (169.0, 337.0),
        ];
        for (i, (lo, hi)) in expected.iter().enumerate() {
            assert!((d.lower()[i] - lo).abs() < 1e-9, "axis {i} lower");
            assert!((d.upper()[i] - hi).abs() < 1e-9, "axis {i} upper");
        }
    }

    #[test]
    fn narrow_domain_zero_sigma_gives_hairline_box() {
        let d = narrow_domain(&[1.0, 2.0], &[0.0, 1.0], 5.0).unwrap();
        assert!(d.span(0) > 0.0 && d.span(0) < 1e-6);
        assert_eq!(d.span(1), 10.0);
        let origin = narrow_domain(&[0.0], &[1.0], 5.0).unwrap();
        assert_eq!(origin.lower(), &[-5.0]);
        assert_eq!(origin.upper(), &[5.0]);
    }

    #[test]
    fn training_data_is_deterministic_and_finite() {
        let model = ridge_plateau_2d();
        let d = model.default_domain();
        let a = generate_training_data(&model, &d, 128, 0, 2).unwrap();
        let b = generate_training_data(&model, &d, 128, 0, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
        assert!(a.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn training_data_excludes_failures() {
        struct Flaky;
        impl ObjectiveModel for Flaky {
            fn name(&self) -> &str {
                "flaky"
            }
            fn dim(&self) -> usize {
                1
            }
            fn default_domain(&self) -> BoxDomain {
                BoxDomain::cube(0.0, 1.0, 1).unwrap()
            }
            fn eval(&self, p: &[f64]) -> Result<f64> {
                if p[0] > 0.95 {
                    Err(Error::ObjectiveFailure("bad region".into()))
                } else {
                    Ok(p[0])
                }
            }
        }
        let model = Flaky;
        let t = generate_training_data(&model, &model.default_domain(), 64, 0, 1).unwrap();
        assert!(!t.provenance.failed_points.is_empty());
        assert_eq!(t.len() + t.provenance.failed_points.len(), 64);
    }

    fn training_from(values: &[f64]) -> TrainingSet {
        TrainingSet {
            points: values.iter().map(|v| vec![*v]).collect(),
            values: values.to_vec(),
            provenance: TrainingProvenance {
                model: "test".into(),
                n_requested: values.len(),
                sobol_skip: 0,
                failed_points: vec![],
            },
        }
    }

    #[test]
    fn outlier_filter_explicit_threshold() {
        let t = training_from(&[1.0, 49.9, 51.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let (kept, removed) = filter_outliers(&t, Some(50.0)).unwrap();
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].value, 51.0);
        assert_eq!(kept.len(), 10);

        let (kept, removed) = filter_outliers(&t, Some(100.0)).unwrap();
        assert!(removed.is_empty());
        assert_eq!(kept.len(), 11);
    }

    #[test]
    fn outlier_filter_refuses_mass_removal() {
        let t = training_from(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            filter_outliers(&t, Some(2.5)),
            Err(Error::OutlierOverflow { .. })
        ));
    }

    #[test]
    fn outlier_default_rule_is_conservative_on_lognormal() {
        // Deterministic log-normal-ish sample via the inverse CDF.
        let mut values = Vec::new();
        for i in 0..4096 {
            let u = (i as f64 + 0.5) / 4096.0;
            let z = 2.0f64.sqrt() * inverse_erf(2.0 * u - 1.0);
            values.push(z.exp());
        }
        let t = training_from(&values);
        let (_, removed) = filter_outliers(&t, None).unwrap();
        assert!(
            (removed.len() as f64) < 0.01 * values.len() as f64,
            "removed {} of {}",
            removed.len(),
            values.len()
        );
    }

    // Rough inverse error function (Winitzki), good enough for generating a
    // test sample.
    fn inverse_erf(x: f64) -> f64 {
        let a = 0.147;
        let ln1mx2 = (1.0 - x * x).ln();
        let t1 = 2.0 / (std::f64::consts::PI * a) + ln1mx2 / 2.0;
        (x.signum()) * ((t1 * t1 - ln1mx2 / a).sqrt() - t1).sqrt()
    }

    fn entry(i: usize, p: Vec<f64>, median: f64) -> MapEntry {
        MapEntry {
            sobol_index: i,
            point: p,
            estimate: RobustEstimate {
                median,
                sigma_minus: 0.1,
                sigma_plus: 0.1,
                sigma_mc: 0.01,
                sigma_gp_sq: 0.0,
                sigma_median: 0.01,
                n_total: 1000,
                converged: true,
            },
        }
    }

    #[test]
    fn cluster_filter_keeps_cluster_maxima() {
        let d = BoxDomain::cube(0.0, 1.0, 2).unwrap();
        // Two clusters plus a duplicate point.
        let entries = vec![
            entry(0, vec![0.1, 0.1], 10.0),
            entry(1, vec![0.12, 0.1], 9.0),
            entry(2, vec![0.9, 0.9], 8.0),
            entry(3, vec![0.9, 0.9], 7.0),
            entry(4, vec![0.88, 0.92], 6.0),
        ];
        let kept = cluster_filter(&entries, &d, 0.25);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].estimate.median, 10.0);
        assert_eq!(kept[1].estimate.median, 8.0);
    }

    #[test]
    fn cluster_filter_keeps_spread_grid() {
        let d = BoxDomain::cube(0.0, 1.0, 1).unwrap();
        let entries: Vec<MapEntry> = (0..4)
            .map(|i| entry(i, vec![i as f64 / 3.0], 4.0 - i as f64))
            .collect();
        let kept = cluster_filter(&entries, &d, 0.25);
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn slice_grid_two_gives_corners() {
        let model = ridge_plateau_2d();
        let slice = landscape_slice(
            &SliceSource::Model(&model),
            &[0.0, 0.0],
            0,
            1,
            2,
            3.0,
            &[0.1, 0.1],
        )
        .unwrap();
        assert_eq!(slice.values.len(), 2);
        assert_eq!(slice.values[0].len(), 2);
        assert!((slice.xs[0] + 0.3).abs() < 1e-12 && (slice.xs[1] - 0.3).abs() < 1e-12);
        let direct = model.eval(&[slice.xs[0], slice.ys[0]]).unwrap();
        assert_eq!(slice.values[0][0], direct);
    }

    #[test]
    fn slice_of_constant_model_is_flat() {
        struct Const;
        impl ObjectiveModel for Const {
            fn name(&self) -> &str {
                "const"
            }
            fn dim(&self) -> usize {
                3
            }
            fn default_domain(&self) -> BoxDomain {
                BoxDomain::cube(0.0, 1.0, 3).unwrap()
            }
            fn eval(&self, _: &[f64]) -> Result<f64> {
                Ok(2.5)
            }
        }
        let slice = landscape_slice(
            &SliceSource::Model(&Const),
            &[0.5, 0.5, 0.5],
            0,
            2,
            5,
            2.0,
            &[0.05; 3],
        )
        .unwrap();
        assert!(slice.values.iter().flatten().all(|v| *v == 2.5));
    }

    #[test]
    fn slice_rejects_bad_axes() {
        let model = ridge_plateau_2d();
        let src = SliceSource::Model(&model);
        assert!(landscape_slice(&src, &[0.0, 0.0], 0, 0, 4, 1.0, &[0.1, 0.1]).is_err());
        assert!(landscape_slice(&src, &[0.0, 0.0], 0, 5, 4, 1.0, &[0.1, 0.1]).is_err());
        assert!(landscape_slice(&src, &[0.0, 0.0], 0, 1, 1, 1.0, &[0.1, 0.1]).is_err());
    }

    #[test]
    fn naive_budget_zero_returns_best_training_point() {
        let model = plateau_4d();
        let t = generate_training_data(&model, &model.default_domain(), 64, 0, 2).unwrap();
        let seeds = SeedSpace::new(3);
        let naive =
            naive_optimize(&model, &model.default_domain(), &t, 0, &[10.0; 4], 32, &seeds)
                .unwrap();
        let (best_p, best_v) = t.max_value_entry().unwrap();
        assert_eq!(&naive.point, best_p);
        assert_eq!(naive.value, best_v);
        assert!(naive.direct.median > 0.0);
    }

    #[test]
    fn campaign_config_validation_names_axis() {
        let d = BoxDomain::new(
            vec![0.0, 0.0],
            vec![100.0, 5.0],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        match CampaignConfig::new(d, vec![1.0, 1.0]) {
            Err(Error::DomainTooSmall { axis, label, .. }) => {
                assert_eq!(axis, 1);
                assert_eq!(label, "b");
            }
            other => panic!("expected DomainTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn campaign_config_warns_on_non_power_of_two() {
        let d = BoxDomain::cube(0.0, 100.0, 1).unwrap();
        let mut cfg = CampaignConfig::new(d, vec![1.0]).unwrap();
        cfg.pass1.n_train = 1000;
        let warnings = cfg.validate().unwrap();
        assert!(warnings.iter().any(|w| w.contains("power of two")));
    }
}
