//! Command implementations behind the thin `scattermax` binary: campaign
//! execution and resumption, the naive baseline, re-evaluation under new
//! uncertainties, landscape slices, config validation, and report printing.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::artifacts::{content_hash, CampaignDir, CountingModel, DirectorySink, RunManifest};
use crate::config::CampaignConfigFile;
use crate::domain::{BoxDomain, ParameterVector};
use crate::error::{Error, Result};
use crate::mc::{RobustEstimate, RobustEstimateRecord};
use crate::objective;
use crate::pipeline::{
    self, landscape_slice, naive_optimize, reevaluate_uncertainty, NaiveResult, ReevalSettings,
    SliceSource, TrainingSet,
};
use crate::seeds::SeedSpace;
use crate::warp::{WarpedGPModel, WarpedGpDocument};

/// Environment variable overriding the campaign output directory.
pub const OUTPUT_DIR_ENV: &str = "SCATTERMAX_DIR";

/// Exit code for a failure: 2 for configuration and validation problems,
/// 1 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidDomain(_)
        | Error::DomainTooSmall { .. }
        | Error::UnsupportedDimension { .. }
        | Error::InvalidCutoff(_) => 2,
        _ => 1,
    }
}

/// Final summary of a completed campaign, persisted as `campaign.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub model: String,
    pub selected_point: ParameterVector,
    pub surrogate_estimate: RobustEstimate,
    pub direct_estimate: RobustEstimate,
    pub pass1_selected_point: ParameterVector,
    pub pass1_direct: RobustEstimate,
    pub pass2_train_domain: BoxDomain,
    pub narrow_domain_clipped: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config_path: PathBuf,
    pub dir: Option<PathBuf>,
    pub resume: bool,
    pub seed_override: Option<u64>,
    pub parallelism: Option<usize>,
}

fn configure_rayon(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

fn load_config(path: &Path) -> Result<CampaignConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    CampaignConfigFile::parse(&text)
}

fn apply_overrides(
    file: &mut CampaignConfigFile,
    seed_override: Option<u64>,
    parallelism: Option<usize>,
) {
    if let Some(seed) = seed_override {
        file.campaign.master_seed = seed;
    }
    if let Some(p) = parallelism {
        file.campaign.parallelism = p;
    }
}

fn resolve_dir(flag: &Option<PathBuf>, config_dir: &Option<String>) -> Result<PathBuf> {
    if let Some(d) = flag {
        return Ok(d.clone());
    }
    if let Ok(env_dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !env_dir.is_empty() {
            return Ok(PathBuf::from(env_dir));
        }
    }
    if let Some(d) = config_dir {
        return Ok(PathBuf::from(d));
    }
    Err(Error::Config(format!(
        "no campaign directory: pass --dir, set {OUTPUT_DIR_ENV}, or set [campaign].output_dir"
    )))
}

/// `validate`: parse and validate the config, printing warnings.
pub fn cmd_validate(config_path: &Path, out: &mut dyn Write) -> Result<()> {
    let file = load_config(config_path)?;
    let v = file.validate()?;
    writeln!(out, "config ok: model '{}', {} axes", v.model.name(), v.config.wide_domain.dim())?;
    for w in &v.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

/// `run`: execute (or resume) the two-pass campaign.
pub fn cmd_run(opts: &RunOptions, out: &mut dyn Write) -> Result<CampaignSummary> {
    let mut file = load_config(&opts.config_path)?;
    apply_overrides(&mut file, opts.seed_override, opts.parallelism);
    let validated = file.validate()?;
    configure_rayon(validated.config.parallelism);

    let dir_path = resolve_dir(&opts.dir, &validated.output_dir)?;
    let dir = CampaignDir::open_locked(&dir_path)?;

    // The snapshot records the effective config (after overrides); its hash
    // ties artifacts to the run.
    let snapshot = file.to_toml()?;
    let hash = content_hash(snapshot.as_bytes());
    let manifest = match dir.load_manifest()? {
        Some(m) if !opts.resume => {
            return Err(Error::Config(format!(
                "{} already contains a campaign (manifest with {} stages); pass --resume to continue it",
                dir_path.display(),
                m.stages.len()
            )));
        }
        Some(m) => {
            if m.config_hash != hash {
                return Err(Error::Config(format!(
                    "config hash {hash} does not match the campaign's {} ; refusing to resume with a different config",
                    m.config_hash
                )));
            }
            m
        }
        None => RunManifest::with_seed(hash.clone(), validated.config.master_seed),
    };
    dir.write_bytes("config.snapshot.toml", snapshot.as_bytes())?;

    let counting = Arc::new(CountingModel::new(validated.model.clone()));
    let mut sink = DirectorySink::new(dir, manifest, opts.resume);
    let result = pipeline::run_two_pass(counting.as_ref(), &validated.config, &mut sink)?;

    let summary = CampaignSummary {
        model: validated.model.name().to_string(),
        selected_point: result.selected().point.clone(),
        surrogate_estimate: result.selected().surrogate_estimate.clone(),
        direct_estimate: result.selected().direct.clone(),
        pass1_selected_point: result.pass1.selected.point.clone(),
        pass1_direct: result.pass1.selected.direct.clone(),
        pass2_train_domain: result.pass2.train_domain.clone(),
        narrow_domain_clipped: result.narrow_domain_clipped,
        warnings: result.warnings.clone(),
    };
    sink.dir().write_json("campaign.json", &summary)?;
    sink.dir().append_log(
        "logs/model_calls.jsonl",
        &serde_json::json!({"command": "run", "model_calls": counting.calls()}),
    )?;

    print_summary(&summary, out)?;
    Ok(summary)
}

fn print_summary(s: &CampaignSummary, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "model: {}", s.model)?;
    for w in &s.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(
        out,
        "pass 1 selected {} with direct estimate {}",
        format_point(&s.pass1_selected_point),
        s.pass1_direct.display()
    )?;
    if s.narrow_domain_clipped {
        writeln!(out, "note: narrow domain was clipped to the wide domain")?;
    }
    writeln!(out, "robust design: {}", format_point(&s.selected_point))?;
    writeln!(out, "  surrogate estimate:    {}", s.surrogate_estimate.display())?;
    writeln!(
        out,
        "  direct verification:   {} (n = {})",
        s.direct_estimate.display(),
        s.direct_estimate.n_total
    )?;
    Ok(())
}

fn format_point(p: &[f64]) -> String {
    let coords: Vec<String> = p.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", coords.join(", "))
}

#[derive(Debug, Clone)]
pub struct NaiveOptions {
    pub config_path: PathBuf,
    pub dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub parallelism: Option<usize>,
}

/// `naive`: maximize the raw model from the pass-1 training set (generating
/// it if the campaign has not run yet), then measure its real robustness.
pub fn cmd_naive(opts: &NaiveOptions, out: &mut dyn Write) -> Result<NaiveResult> {
    let mut file = load_config(&opts.config_path)?;
    apply_overrides(&mut file, opts.seed_override, opts.parallelism);
    let validated = file.validate()?;
    configure_rayon(validated.config.parallelism);

    let dir_path = resolve_dir(&opts.dir, &validated.output_dir)?;
    let dir = CampaignDir::open(&dir_path)?;
    let counting = Arc::new(CountingModel::new(validated.model.clone()));

    let training: TrainingSet = match dir.read_json("pass1/training.json")? {
        Some(t) => t,
        None => {
            let t = pipeline::generate_training_data(
                counting.as_ref(),
                &validated.config.wide_domain,
                validated.config.pass1.n_train,
                validated.config.pass1.sobol_skip,
                validated.config.parallelism,
            )?;
            dir.write_json("pass1/training.json", &t)?;
            t
        }
    };

    let seeds = SeedSpace::new(validated.config.master_seed);
    let naive = naive_optimize(
        counting.as_ref(),
        &validated.config.wide_domain,
        &training,
        validated.naive_bo_budget,
        &validated.config.sigma_manuf,
        validated.config.pass2.n_verify,
        &seeds,
    )?;
    dir.write_json("naive.json", &naive)?;
    let mut history = Vec::new();
    let run = crate::bayesopt::BORun {
        best_point: naive.point.clone(),
        best_value: naive.value,
        history: naive.bo_history.clone(),
    };
    run.write_history_jsonl(&mut history)?;
    if !history.is_empty() {
        dir.write_bytes("logs/naive_bo.jsonl", &history)?;
    }
    dir.append_log(
        "logs/model_calls.jsonl",
        &serde_json::json!({"command": "naive", "model_calls": counting.calls()}),
    )?;

    writeln!(out, "naive argmax: {}", format_point(&naive.point))?;
    writeln!(out, "  raw model value:      {:.6}", naive.value)?;
    writeln!(
        out,
        "  direct robustness:    {} (n = {})",
        naive.direct.display(),
        naive.direct.n_total
    )?;
    if let Some(campaign) = dir.read_json::<CampaignSummary>("campaign.json")? {
        let ratio = campaign.direct_estimate.median / naive.direct.median;
        writeln!(
            out,
            "  two-pass robust median {:.6} is {ratio:.2}x the naive robust median {:.6}",
            campaign.direct_estimate.median, naive.direct.median
        )?;
    }
    Ok(naive)
}

/// Artifact written by `reevaluate`: the new estimate with the estimator
/// settings and seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReevaluateRecord {
    pub sigma: Vec<f64>,
    pub point: ParameterVector,
    pub result: RobustEstimateRecord,
}

/// `reevaluate`: rerun the robust mapping on the stored pass-2 surrogate
/// under a different manufacturing uncertainty. Makes no model evaluations.
pub fn cmd_reevaluate(
    dir_path: &Path,
    sigma: &[f64],
    out: &mut dyn Write,
) -> Result<ReevaluateRecord> {
    let dir = CampaignDir::open(dir_path)?;
    let doc: WarpedGpDocument = dir.read_json("pass2/surrogate.json")?.ok_or_else(|| {
        Error::Artifact(format!(
            "{}: no pass-2 surrogate artifact; run the campaign first",
            dir_path.display()
        ))
    })?;
    let surrogate = WarpedGPModel::from_document(doc)?;
    let summary: CampaignSummary = dir.read_json("campaign.json")?.ok_or_else(|| {
        Error::Artifact("campaign.json missing; run the campaign first".into())
    })?;
    let snapshot = std::fs::read_to_string(dir.path("config.snapshot.toml"))
        .map_err(|e| Error::Artifact(format!("config.snapshot.toml: {e}")))?;
    let file = CampaignConfigFile::parse(&snapshot)?;

    if sigma.len() != summary.pass2_train_domain.dim() {
        return Err(Error::Config(format!(
            "--sigma has {} entries for a {}-axis campaign",
            sigma.len(),
            summary.pass2_train_domain.dim()
        )));
    }
    let seeds = SeedSpace::new(file.campaign.master_seed);
    let (point, estimate) = reevaluate_uncertainty(
        &surrogate,
        &summary.pass2_train_domain,
        sigma,
        &ReevalSettings {
            n_eval: file.pass2.n_eval,
            alg1: file.algorithm1.clone(),
            bo_budget: file.pass2.bo_budget_per_candidate,
            cluster_radius: file.campaign.cluster_radius,
        },
        &seeds,
    )?;
    let record = ReevaluateRecord {
        sigma: sigma.to_vec(),
        point,
        result: estimate.record(&file.algorithm1, file.campaign.master_seed),
    };
    let tag = sigma
        .iter()
        .map(|s| format!("{s}"))
        .collect::<Vec<_>>()
        .join("x");
    dir.write_json(&format!("reevaluate-{tag}.json"), &record)?;
    writeln!(
        out,
        "re-evaluated under sigma {:?}: {} at {}",
        record.sigma,
        record.result.estimate.display(),
        format_point(&record.point)
    )?;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct SliceOptions {
    pub dir: PathBuf,
    /// "selected", "pass1", "naive", or comma-separated coordinates.
    pub center: String,
    pub axes: (usize, usize),
    pub grid: usize,
    pub extent_sigmas: f64,
    /// "surrogate" (pass-2 surrogate median) or "model" (true model).
    pub source: String,
    pub out_path: PathBuf,
}

/// Sidecar metadata next to a slice CSV: the 1/2/3-sigma ellipses of the
/// manufacturing distribution in the slice plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSidecar {
    pub center: ParameterVector,
    pub axis_i: usize,
    pub axis_j: usize,
    pub sigma_i: f64,
    pub sigma_j: f64,
    pub ellipses: Vec<EllipseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub n_sigma: u32,
    pub radius_i: f64,
    pub radius_j: f64,
}

/// `slice`: export a 2-D landscape grid as CSV plus a JSON sidecar.
pub fn cmd_slice(opts: &SliceOptions, out: &mut dyn Write) -> Result<()> {
    let dir = CampaignDir::open(&opts.dir)?;
    let summary: CampaignSummary = dir.read_json("campaign.json")?.ok_or_else(|| {
        Error::Artifact("campaign.json missing; run the campaign first".into())
    })?;
    let snapshot = std::fs::read_to_string(dir.path("config.snapshot.toml"))
        .map_err(|e| Error::Artifact(format!("config.snapshot.toml: {e}")))?;
    let file = CampaignConfigFile::parse(&snapshot)?;
    let validated = file.validate()?;
    let sigma = validated.config.sigma_manuf.clone();

    let center: ParameterVector = match opts.center.as_str() {
        "selected" => summary.selected_point.clone(),
        "pass1" => summary.pass1_selected_point.clone(),
        "naive" => {
            let naive: NaiveResult = dir.read_json("naive.json")?.ok_or_else(|| {
                Error::Artifact("naive.json missing; run the naive command first".into())
            })?;
            naive.point
        }
        csv => csv
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad center coordinate '{t}': {e}")))
            })
            .collect::<Result<_>>()?,
    };
    if center.len() != sigma.len() {
        return Err(Error::Config(format!(
            "center has {} coordinates, campaign has {} axes",
            center.len(),
            sigma.len()
        )));
    }

    let surrogate_doc: Option<WarpedGpDocument> = dir.read_json("pass2/surrogate.json")?;
    let slice = match opts.source.as_str() {
        "surrogate" => {
            let doc = surrogate_doc.ok_or_else(|| {
                Error::Artifact("pass2/surrogate.json missing; run the campaign first".into())
            })?;
            let model = WarpedGPModel::from_document(doc)?;
            landscape_slice(
                &SliceSource::Surrogate(&model),
                &center,
                opts.axes.0,
                opts.axes.1,
                opts.grid,
                opts.extent_sigmas,
                &sigma,
            )?
        }
        "model" => landscape_slice(
            &SliceSource::Model(validated.model.as_ref()),
            &center,
            opts.axes.0,
            opts.axes.1,
            opts.grid,
            opts.extent_sigmas,
            &sigma,
        )?,
        other => {
            return Err(Error::Config(format!(
                "--source must be 'surrogate' or 'model', got '{other}'"
            )))
        }
    };

    let mut csv = String::from("i,j,p_i,p_j,value\n");
    for (a, x) in slice.xs.iter().enumerate() {
        for (b, y) in slice.ys.iter().enumerate() {
            csv.push_str(&format!("{a},{b},{x},{y},{}\n", slice.values[a][b]));
        }
    }
    std::fs::create_dir_all(opts.out_path.parent().unwrap_or(Path::new(".")))?;
    std::fs::write(&opts.out_path, csv)?;

    let sidecar = SliceSidecar {
        center: center.clone(),
        axis_i: slice.axis_i,
        axis_j: slice.axis_j,
        sigma_i: slice.sigma_i,
        sigma_j: slice.sigma_j,
        ellipses: (1..=3)
            .map(|k| EllipseSpec {
                n_sigma: k,
                radius_i: k as f64 * slice.sigma_i,
                radius_j: k as f64 * slice.sigma_j,
            })
            .collect(),
    };
    let sidecar_path = opts.out_path.with_extension("json");
    let doc = crate::artifacts::Versioned {
        schema_version: crate::artifacts::SCHEMA_VERSION,
        data: &sidecar,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    std::fs::write(&sidecar_path, bytes)?;

    writeln!(
        out,
        "wrote {} ({} x {} grid) and {}",
        opts.out_path.display(),
        opts.grid,
        opts.grid,
        sidecar_path.display()
    )?;
    Ok(())
}

/// `report`: re-print the stored campaign summary.
pub fn cmd_report(dir_path: &Path, out: &mut dyn Write) -> Result<()> {
    let dir = CampaignDir::open(dir_path)?;
    let summary: CampaignSummary = dir.read_json("campaign.json")?.ok_or_else(|| {
        Error::Artifact(format!("{}: campaign.json missing", dir_path.display()))
    })?;
    print_summary(&summary, out)?;
    if let Some(naive) = dir.read_json::<NaiveResult>("naive.json")? {
        writeln!(out, "naive argmax: {}", format_point(&naive.point))?;
        writeln!(out, "  raw value {:.6}, direct {}", naive.value, naive.direct.display())?;
        let ratio = summary.direct_estimate.median / naive.direct.median;
        writeln!(out, "  robust-vs-naive median ratio: {ratio:.2}x")?;
    }
    Ok(())
}

/// `worker`: serve a built-in model over the external-objective line
/// protocol (one `{"params": [..]}` request per line on stdin, one
/// `{"value": x}` or `{"error": "..."}` per line on stdout).
pub fn cmd_worker(model_name: &str) -> Result<()> {
    let model = objective::builtin(model_name).ok_or_else(|| {
        Error::Config(format!(
            "unknown builtin model '{model_name}' (available: {})",
            objective::builtin_names().join(", ")
        ))
    })?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    #[derive(Deserialize)]
    struct Request {
        params: Vec<f64>,
    }

    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match model.eval(&req.params) {
                Ok(v) => serde_json::json!({ "value": v }),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            },
            Err(e) => serde_json::json!({ "error": format!("bad request: {e}") }),
        };
        serde_json::to_writer(&mut out, &response)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
