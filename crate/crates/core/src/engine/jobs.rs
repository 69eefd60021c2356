//! Training jobs run by an external trainer over a file protocol.
//!
//! A job directory holds `train.jsonl`, `config.json`, the shim-owned
//! `status.json` and `checkpoint/`, plus our own `job.json` record. Inference
//! writes `infer.jsonl` and reads back `pred.jsonl` in the same directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::labeler::{write_atomic, TrainingSet};

/// Hyperparameters of a training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(default = "default_batch")]
    pub batch_size: u32,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Used for the single retry after a divergence.
    #[serde(default = "default_fallback_lr")]
    pub fallback_lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_rank")]
    pub adapter_rank: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_base_model")]
    pub base_model: String,
}

fn default_batch() -> u32 {
    12
}
fn default_lr() -> f64 {
    4e-4
}
fn default_fallback_lr() -> f64 {
    3e-4
}
fn default_epochs() -> u32 {
    60
}
fn default_rank() -> u32 {
    8
}
fn default_base_model() -> String {
    "google/mt5-small".into()
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            batch_size: default_batch(),
            lr: default_lr(),
            fallback_lr: default_fallback_lr(),
            epochs: default_epochs(),
            adapter_rank: default_rank(),
            seed: 0,
            base_model: default_base_model(),
        }
    }
}

/// `config.json` as the trainer reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: u32,
    pub lr: f64,
    pub epochs: u32,
    pub adapter_rank: u32,
    pub seed: u64,
    pub base_model: String,
}

impl Hyperparams {
    pub fn config(&self, lr: f64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr,
            epochs: self.epochs,
            adapter_rank: self.adapter_rank,
            seed: self.seed,
            base_model: self.base_model.clone(),
        }
    }
}

/// `status.json` as the trainer writes it. Non-finite losses serialize as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimStatus {
    pub state: String,
    #[serde(default)]
    pub epoch: u32,
    #[serde(default)]
    pub loss: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRow {
    pub doc_id: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRow {
    pub doc_id: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Retrying,
    Done,
    Failed,
    FailedDiverged,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::FailedDiverged)
    }

    /// Whether `self → next` is a legal move for a job on attempt `attempt`.
    pub fn allows(self, next: JobState, attempt: u32) -> bool {
        use JobState::*;
        match (self, next) {
            (Queued, Running) => true,
            (Running, Done) => true,
            (Running, Retrying) => attempt == 1,
            (Running, FailedDiverged) => attempt == 2,
            (Retrying, Running) => true,
            (s, Failed) => !s.is_terminal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub state: JobState,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub dataset_id: String,
    pub corpus_id: String,
    pub hyperparams: Hyperparams,
    pub state: JobState,
    pub attempt: u32,
    pub lr: f64,
    pub history: Vec<JobEvent>,
    pub checkpoint_path: Option<PathBuf>,
    /// Per-epoch losses of the latest attempt.
    pub loss: Vec<Option<f64>>,
    /// Epochs finished by earlier attempts.
    pub prior_epochs: u32,
    pub message: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl JobRecord {
    fn move_to(&mut self, next: JobState, message: Option<String>) -> Result<(), EngineError> {
        if !self.state.allows(next, self.attempt) {
            return Err(EngineError::Precondition(format!(
                "job {}: illegal transition {:?} -> {:?}",
                self.job_id, self.state, next
            )));
        }
        self.state = next;
        if next.is_terminal() {
            self.message = message.clone();
        }
        self.history.push(JobEvent { state: next, lr: self.lr, message, at: Utc::now() });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub done: u32,
    pub total: u32,
}

/// What a poller sees: the record merged with the trainer's live status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatusView {
    pub job_id: String,
    pub state: JobState,
    pub progress: JobProgress,
    pub started_at: Option<DateTime<Utc>>,
    pub message: Option<String>,
    pub lr: f64,
    pub loss: Vec<Option<f64>>,
    pub history: Vec<JobEvent>,
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShimAction {
    Train,
    Infer,
}

impl ShimAction {
    pub fn as_str(self) -> &'static str {
        match self {
            ShimAction::Train => "train",
            ShimAction::Infer => "infer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShimError {
    Missing(String),
    Failed(String),
}

/// Runs the trainer to completion for one action on a job directory.
pub trait ShimRunner: Send + Sync {
    /// Checks the trainer can be launched at all.
    fn check(&self) -> Result<(), ShimError> {
        Ok(())
    }
    fn run(&self, action: ShimAction, job_dir: &Path) -> Result<(), ShimError>;
}

/// Launches `argv... train|infer <jobdir>` as a child process.
#[derive(Debug, Clone)]
pub struct CommandShim {
    pub argv: Vec<String>,
}

impl CommandShim {
    pub fn new(argv: Vec<String>) -> Self {
        CommandShim { argv }
    }

    fn resolvable(program: &str) -> bool {
        let p = Path::new(program);
        if p.components().count() > 1 {
            return p.is_file();
        }
        std::env::var_os("PATH")
            .map(|paths| std::env::split_paths(&paths).any(|d| d.join(program).is_file()))
            .unwrap_or(false)
    }
}

impl ShimRunner for CommandShim {
    fn check(&self) -> Result<(), ShimError> {
        match self.argv.first() {
            None => Err(ShimError::Missing("no trainer command configured; set trainer_cmd".into())),
            Some(p) if !Self::resolvable(p) => Err(ShimError::Missing(format!(
                "trainer executable `{p}` not found; install the trainer or point trainer_cmd at it"
            ))),
            Some(_) => Ok(()),
        }
    }

    fn run(&self, action: ShimAction, job_dir: &Path) -> Result<(), ShimError> {
        self.check()?;
        let out = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(action.as_str())
            .arg(job_dir)
            .output()
            .map_err(|e| ShimError::Missing(format!("cannot launch `{}`: {e}", self.argv[0])))?;
        if out.status.success() {
            Ok(())
        } else {
            let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
            Err(ShimError::Failed(format!("trainer exited with {}: {stderr}", out.status)))
        }
    }
}

type LockMap = Mutex<HashMap<String, Arc<Mutex<()>>>>;

fn lock_for(map: &LockMap, key: &str) -> Arc<Mutex<()>> {
    map.lock().unwrap().entry(key.to_string()).or_default().clone()
}

pub struct JobManager {
    root: PathBuf,
    runner: Arc<dyn ShimRunner>,
    alloc: Mutex<()>,
    dataset_locks: LockMap,
    job_locks: LockMap,
}

impl JobManager {
    /// Jobs left running by a previous process are marked failed.
    pub fn open(root: impl Into<PathBuf>, runner: Arc<dyn ShimRunner>) -> Result<Self, EngineError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mgr = JobManager {
            root,
            runner,
            alloc: Mutex::new(()),
            dataset_locks: Mutex::default(),
            job_locks: Mutex::default(),
        };
        for mut rec in mgr.list()? {
            if matches!(rec.state, JobState::Running | JobState::Retrying) {
                rec.move_to(JobState::Failed, Some("interrupted by a service restart".into()))?;
                mgr.save(&rec)?;
            }
        }
        Ok(mgr)
    }

    pub fn job_dir(&self, job_id: &str) -> PathBuf {
        self.root.join(job_id)
    }

    fn save(&self, rec: &JobRecord) -> Result<(), EngineError> {
        let bytes = serde_json::to_vec_pretty(rec).unwrap();
        write_atomic(&self.job_dir(&rec.job_id).join("job.json"), &bytes)?;
        Ok(())
    }

    pub fn job(&self, job_id: &str) -> Result<JobRecord, EngineError> {
        let text = fs::read_to_string(self.job_dir(job_id).join("job.json"))
            .map_err(|_| EngineError::NotFound { kind: "job", id: job_id.to_string() })?;
        serde_json::from_str(&text).map_err(|e| EngineError::Precondition(format!("corrupt job record {job_id}: {e}")))
    }

    pub fn list(&self) -> Result<Vec<JobRecord>, EngineError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name().to_string_lossy().to_string();
            if let Ok(rec) = self.job(&name) {
                out.push(rec);
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.job_id.cmp(&b.job_id)));
        Ok(out)
    }

    /// Creates a queued job for a dataset; [`JobManager::run`] executes it.
    pub fn submit(&self, set: &TrainingSet, hyperparams: Hyperparams) -> Result<JobRecord, EngineError> {
        let rows = set.rows()?;
        if rows.is_empty() {
            return Err(EngineError::Precondition(format!("dataset {} has no examples", set.manifest.dataset_id)));
        }
        if hyperparams.epochs == 0 || hyperparams.batch_size == 0 {
            return Err(EngineError::Precondition("epochs and batch_size must be positive".into()));
        }
        let _guard = self.alloc.lock().unwrap();
        let job_id = (1..)
            .map(|n| format!("job-{n}"))
            .find(|id| !self.job_dir(id).exists())
            .unwrap();
        let dir = self.job_dir(&job_id);
        fs::create_dir_all(&dir)?;
        fs::copy(set.train_path(), dir.join("train.jsonl"))?;
        let mut rec = JobRecord {
            job_id,
            dataset_id: set.manifest.dataset_id.clone(),
            corpus_id: set.manifest.corpus_id.clone(),
            lr: hyperparams.lr,
            hyperparams,
            state: JobState::Queued,
            attempt: 0,
            history: vec![],
            checkpoint_path: None,
            loss: vec![],
            prior_epochs: 0,
            message: None,
            created_at: Utc::now(),
        };
        rec.history.push(JobEvent { state: JobState::Queued, lr: rec.lr, message: None, at: rec.created_at });
        self.save(&rec)?;
        Ok(rec)
    }

    fn read_status(dir: &Path) -> Option<ShimStatus> {
        fs::read_to_string(dir.join("status.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
    }

    /// Executes a queued job to a terminal state, blocking. Jobs on the same
    /// dataset run one at a time.
    pub fn run(&self, job_id: &str) -> Result<JobRecord, EngineError> {
        let lock = lock_for(&self.dataset_locks, &self.job(job_id)?.dataset_id);
        let _guard = lock.lock().unwrap();
        let mut rec = self.job(job_id)?;
        if rec.state != JobState::Queued {
            return Err(EngineError::Precondition(format!("job {job_id} is {:?}, not queued", rec.state)));
        }
        if let Err(ShimError::Missing(msg)) = self.runner.check() {
            rec.move_to(JobState::Failed, Some(msg))?;
            self.save(&rec)?;
            return Ok(rec);
        }
        let dir = self.job_dir(job_id);
        loop {
            rec.attempt += 1;
            rec.move_to(JobState::Running, None)?;
            let config = rec.hyperparams.config(rec.lr);
            write_atomic(&dir.join("config.json"), serde_json::to_string(&config).unwrap().as_bytes())?;
            let _ = fs::remove_file(dir.join("status.json"));
            let _ = fs::remove_dir_all(dir.join("checkpoint"));
            self.save(&rec)?;

            let outcome = self.runner.run(ShimAction::Train, &dir);
            let status = Self::read_status(&dir);
            if let Some(s) = &status {
                rec.loss = s.loss.clone();
            }
            match (status.as_ref().map(|s| s.state.as_str()), &outcome) {
                (Some("done"), _) => {
                    let ckpt = dir.join("checkpoint");
                    if ckpt.is_dir() {
                        rec.checkpoint_path = Some(ckpt);
                        rec.move_to(JobState::Done, None)?;
                    } else {
                        rec.move_to(JobState::Failed, Some("trainer reported done without a checkpoint/".into()))?;
                    }
                }
                (Some("diverged"), _) if rec.attempt == 1 => {
                    rec.prior_epochs += status.as_ref().map_or(0, |s| s.epoch);
                    rec.move_to(JobState::Retrying, Some(format!("diverged at lr {}", rec.lr)))?;
                    rec.lr = rec.hyperparams.fallback_lr;
                    self.save(&rec)?;
                    continue;
                }
                (Some("diverged"), _) => {
                    rec.move_to(JobState::FailedDiverged, Some(format!("diverged again at lr {}", rec.lr)))?;
                }
                (Some("failed"), _) => {
                    let msg = status.and_then(|s| s.message).unwrap_or_else(|| "trainer reported failure".into());
                    rec.move_to(JobState::Failed, Some(msg))?;
                }
                (_, Err(ShimError::Missing(m) | ShimError::Failed(m))) => {
                    rec.move_to(JobState::Failed, Some(m.clone()))?;
                }
                (other, Ok(())) => {
                    let msg = format!("trainer exited with status {:?}", other.unwrap_or("missing"));
                    rec.move_to(JobState::Failed, Some(msg))?;
                }
            }
            self.save(&rec)?;
            return Ok(rec);
        }
    }

    pub fn status(&self, job_id: &str) -> Result<JobStatusView, EngineError> {
        let rec = self.job(job_id)?;
        let mut loss = rec.loss.clone();
        // epochs of the current attempt; a retrying job's are already in prior_epochs
        let mut epoch = if rec.state.is_terminal() { loss.len() as u32 } else { 0 };
        if rec.state == JobState::Running {
            if let Some(s) = Self::read_status(&self.job_dir(job_id)) {
                epoch = s.epoch;
                loss = s.loss;
            }
        }
        let started_at = rec.history.iter().find(|e| e.state == JobState::Running).map(|e| e.at);
        Ok(JobStatusView {
            job_id: rec.job_id,
            state: rec.state,
            progress: JobProgress { done: rec.prior_epochs + epoch, total: rec.hyperparams.epochs * rec.attempt.max(1) },
            started_at,
            message: rec.message,
            lr: rec.lr,
            loss,
            history: rec.history,
            checkpoint_path: rec.checkpoint_path,
        })
    }

    /// Runs trainer inference on a finished job. Predictions come back in
    /// input order; inputs without a prediction are omitted.
    pub fn infer(&self, job_id: &str, rows: &[InferRow]) -> Result<Vec<PredRow>, EngineError> {
        let rec = self.job(job_id)?;
        if rec.state != JobState::Done {
            return Err(EngineError::Precondition(format!("job {job_id} has no finished checkpoint")));
        }
        let lock = lock_for(&self.job_locks, job_id);
        let _guard = lock.lock().unwrap();
        let dir = self.job_dir(job_id);
        let mut body = String::new();
        for r in rows {
            body.push_str(&serde_json::to_string(r).unwrap());
            body.push('\n');
        }
        write_atomic(&dir.join("infer.jsonl"), body.as_bytes())?;
        let _ = fs::remove_file(dir.join("pred.jsonl"));
        self.runner
            .run(ShimAction::Infer, &dir)
            .map_err(|(ShimError::Missing(m) | ShimError::Failed(m))| EngineError::Shim(m))?;
        let text = fs::read_to_string(dir.join("pred.jsonl"))
            .map_err(|e| EngineError::Shim(format!("trainer wrote no pred.jsonl: {e}")))?;
        let mut preds = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            preds.push(serde_json::from_str(line).map_err(|e| EngineError::Shim(format!("pred.jsonl: {e}")))?);
        }
        Ok(preds)
    }
}
