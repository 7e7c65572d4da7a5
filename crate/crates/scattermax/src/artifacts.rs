//! Campaign directory layout, versioned JSON artifacts, the run manifest,
//! and the stage sink that makes interrupted campaigns resumable.
//!
//! Every artifact is a JSON document wrapped in `{schema_version, data}`;
//! loaders reject unknown versions. Artifacts are written atomically
//! (temp file + rename) and deterministically: two runs with the same config
//! and master seed produce byte-identical files. Timings and evaluation
//! counts go to `logs/`, which is excluded from that guarantee.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::domain::ParameterVector;
use crate::error::{Error, Result};
use crate::mc::RobustEstimate;
use crate::objective::ObjectiveModel;
use crate::pipeline::{MapEntry, RemovedPoint, StageSink, TrainingSet, VerifiedCandidate};
use crate::warp::{WarpedGPModel, WarpedGpDocument};

pub const SCHEMA_VERSION: u32 = 1;

/// Envelope for every artifact file.
#[derive(Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    pub data: T,
}

/// Stable FNV-1a hex digest used to tie a run directory to its config.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub complete: bool,
    pub artifact: String,
}

/// Completion ledger of a campaign directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    /// Master seed every named per-stage random stream derives from.
    #[serde(default)]
    pub master_seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            config_hash,
            master_seed: 0,
            stages: Vec::new(),
        }
    }

    pub fn with_seed(config_hash: String, master_seed: u64) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            config_hash,
            master_seed,
            stages: Vec::new(),
        }
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s.name == stage && s.complete)
    }

    pub fn mark_complete(&mut self, stage: &str, artifact: &str) {
        if let Some(s) = self.stages.iter_mut().find(|s| s.name == stage) {
            s.complete = true;
            s.artifact = artifact.to_string();
        } else {
            self.stages.push(StageRecord {
                name: stage.to_string(),
                complete: true,
                artifact: artifact.to_string(),
            });
        }
    }
}

/// Guard for the campaign directory lock file; removed on drop.
struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A campaign directory: versioned artifacts, logs, manifest, lock.
pub struct CampaignDir {
    root: PathBuf,
    _lock: Option<LockGuard>,
}

impl CampaignDir {
    /// Open (creating if needed) without taking the lock; read-only use.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        fs::create_dir_all(root.join("logs"))?;
        Ok(CampaignDir { root, _lock: None })
    }

    /// Open and take the exclusive run lock.
    pub fn open_locked(root: impl Into<PathBuf>) -> Result<Self> {
        let mut dir = Self::open(root)?;
        let lock_path = dir.root.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                dir._lock = Some(LockGuard { path: lock_path });
                Ok(dir)
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.root.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    /// Write a versioned JSON artifact atomically.
    pub fn write_json<T: Serialize>(&self, rel: &str, data: &T) -> Result<()> {
        let doc = Versioned {
            schema_version: SCHEMA_VERSION,
            data,
        };
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Read a versioned artifact; `Ok(None)` when the file does not exist.
    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<Option<T>> {
        let path = self.path(rel);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let doc: Versioned<T> = serde_json::from_slice(&bytes).map_err(|e| {
            Error::Artifact(format!("{}: {e}", path.display()))
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Artifact(format!(
                "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                path.display(),
                doc.schema_version
            )));
        }
        Ok(Some(doc.data))
    }

    /// Append one JSON line to a log file (logs are outside the
    /// byte-identical guarantee).
    pub fn append_log<T: Serialize>(&self, rel: &str, record: &T) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        serde_json::to_writer(&mut f, record)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.path("manifest.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let manifest: RunManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Artifact(format!("manifest.json: {e}")))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Artifact(format!(
                "manifest.json: unsupported schema_version {}",
                manifest.schema_version
            )));
        }
        Ok(Some(manifest))
    }

    pub fn save_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(manifest)?;
        bytes.push(b'\n');
        self.write_bytes("manifest.json", &bytes)
    }
}

/// Wraps an objective model and counts evaluations; the count is logged so a
/// resumed run can prove which stages made no model calls.
pub struct CountingModel {
    inner: Arc<dyn ObjectiveModel>,
    calls: AtomicUsize,
}

impl CountingModel {
    pub fn new(inner: Arc<dyn ObjectiveModel>) -> Self {
        CountingModel {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ObjectiveModel for CountingModel {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn default_domain(&self) -> crate::domain::BoxDomain {
        self.inner.default_domain()
    }

    fn lower_bound(&self) -> f64 {
        self.inner.lower_bound()
    }

    fn eval(&self, p: &[f64]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.eval(p)
    }
}

#[derive(Debug, Serialize)]
struct EvalLogLine<'a> {
    stage: &'a str,
    point: &'a [f64],
    value: f64,
}

#[derive(Debug, Serialize)]
struct TimingLine<'a> {
    stage: &'a str,
    seconds: f64,
}

/// Stage sink persisting artifacts into a campaign directory.
pub struct DirectorySink {
    dir: CampaignDir,
    manifest: RunManifest,
    resume: bool,
    stage_started: std::time::Instant,
}

impl DirectorySink {
    pub fn new(dir: CampaignDir, manifest: RunManifest, resume: bool) -> Self {
        DirectorySink {
            dir,
            manifest,
            resume,
            stage_started: std::time::Instant::now(),
        }
    }

    pub fn dir(&self) -> &CampaignDir {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn artifact_name(stage: &str) -> String {
        format!("{stage}.json")
    }

    fn cached<T: DeserializeOwned>(&self, stage: &str) -> Option<T> {
        if !self.resume || !self.manifest.is_complete(stage) {
            return None;
        }
        self.dir.read_json(&Self::artifact_name(stage)).ok().flatten()
    }

    fn log_timing(&mut self, stage: &str) {
        let seconds = self.stage_started.elapsed().as_secs_f64();
        let _ = self.dir.append_log("logs/timings.jsonl", &TimingLine { stage, seconds });
        self.stage_started = std::time::Instant::now();
    }
}

impl StageSink for DirectorySink {
    fn load_training(&self, stage: &str) -> Option<TrainingSet> {
        self.cached(stage)
    }

    fn save_training(&mut self, stage: &str, data: &TrainingSet) -> Result<()> {
        self.dir.write_json(&Self::artifact_name(stage), data)?;
        for (p, v) in data.points.iter().zip(&data.values) {
            self.dir.append_log(
                "logs/evaluations.jsonl",
                &EvalLogLine {
                    stage,
                    point: p,
                    value: *v,
                },
            )?;
        }
        Ok(())
    }

    fn load_surrogate(&self, stage: &str) -> Option<WarpedGPModel> {
        let doc: WarpedGpDocument = self.cached(stage)?;
        WarpedGPModel::from_document(doc).ok()
    }

    fn save_surrogate(&mut self, stage: &str, model: &WarpedGPModel) -> Result<()> {
        self.dir.write_json(&Self::artifact_name(stage), &model.to_document())
    }

    fn load_map(&self, stage: &str) -> Option<Vec<MapEntry>> {
        self.cached(stage)
    }

    fn save_map(&mut self, stage: &str, map: &[MapEntry]) -> Result<()> {
        self.dir.write_json(&Self::artifact_name(stage), &map)
    }

    fn save_removed(&mut self, stage: &str, removed: &[RemovedPoint]) -> Result<()> {
        self.dir.write_json(&Self::artifact_name(stage), &removed)
    }

    fn load_candidates(&self, stage: &str) -> Option<Vec<(ParameterVector, RobustEstimate)>> {
        self.cached(stage)
    }

    fn save_candidates(
        &mut self,
        stage: &str,
        candidates: &[(ParameterVector, RobustEstimate)],
    ) -> Result<()> {
        self.dir.write_json(&Self::artifact_name(stage), &candidates)
    }

    fn load_verified(&self, stage: &str) -> Option<Vec<VerifiedCandidate>> {
        self.cached(stage)
    }

    fn save_verified(&mut self, stage: &str, verified: &[VerifiedCandidate]) -> Result<()> {
        self.dir.write_json(&Self::artifact_name(stage), &verified)
    }

    fn stage_complete(&mut self, stage: &str) -> Result<()> {
        self.manifest.mark_complete(stage, &Self::artifact_name(stage));
        self.dir.save_manifest(&self.manifest)?;
        self.log_timing(stage);
        Ok(())
    }
}
