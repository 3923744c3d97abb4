//! Results files written by `run` and read by `compare`.
//!
//! Every file is a JSON object with `schema_version` and `kind` (`"seed"`
//! or `"summary"`). Wall-clock figures live under the `timing` key only, so
//! two runs of one configuration agree on everything else.

use std::fs;
use std::io::Write;
use std::path::Path;

use l3dmc_core::continual::TaskRecord;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: usize,
    pub classes_seen: usize,
    /// Accuracy on each task seen so far.
    pub accuracies: Vec<f64>,
    pub acc: f64,
    pub forgetting: Option<f64>,
    pub memory_size: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub stopped_early: bool,
    pub best_val_acc: Option<f64>,
    pub final_ce: Option<f64>,
    pub final_kd: Option<f64>,
    pub max_gram_ridge: f64,
    pub max_gram_condition: f64,
}

impl From<&TaskRecord> for TaskResult {
    fn from(r: &TaskRecord) -> Self {
        let last = r.train.epochs.last();
        Self {
            task: r.task + 1,
            classes_seen: r.classes_seen,
            accuracies: r.accuracies.clone(),
            acc: r.acc,
            forgetting: r.forgetting,
            memory_size: r.memory_size,
            epochs_run: r.train.epochs.len(),
            steps: r.train.steps,
            stopped_early: r.train.stopped_early,
            best_val_acc: r.train.best_val_acc,
            final_ce: last.map(|e| e.ce),
            final_kd: last.and_then(|e| e.kd),
            max_gram_ridge: r.train.max_ridge,
            max_gram_condition: r.train.max_condition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    #[serde(default)]
    pub task_seconds: Vec<f64>,
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub schema_version: u32,
    pub kind: String,
    /// `"complete"` or `"failed"`; a failed file keeps the finished tasks.
    pub status: String,
    pub error: Option<String>,
    pub method: String,
    pub seed: u64,
    pub num_tasks: usize,
    pub class_order: Vec<usize>,
    /// `acc_matrix[t][i]`: accuracy on task `i+1` after task `t+1`.
    pub acc_matrix: Vec<Vec<f64>>,
    pub tasks: Vec<TaskResult>,
    pub final_acc: Option<f64>,
    pub final_forgetting: Option<f64>,
    pub model_fingerprint: Option<String>,
    pub config: ExperimentConfig,
    pub timing: Timing,
}

/// Seed-averaged view of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub kind: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub num_tasks: usize,
    /// Mean `Acc_t` over seeds for every task `t`.
    pub acc_mean: Vec<f64>,
    /// Mean `F_t` over seeds; absent for the first task.
    pub forgetting_mean: Vec<Option<f64>>,
    pub final_acc_mean: f64,
    pub final_forgetting_mean: Option<f64>,
    pub final_acc_per_seed: Vec<f64>,
    pub config: ExperimentConfig,
    pub timing: Timing,
}

impl Summary {
    /// Averages complete seed results that share one task structure.
    pub fn from_seeds(results: &[SeedResult], config: &ExperimentConfig, total_seconds: f64) -> Result<Self, CliError> {
        let first = results.first().ok_or_else(|| CliError::Incompatible("no seed results".into()))?;
        let t = first.num_tasks;
        if let Some(r) = results.iter().find(|r| r.num_tasks != t || r.tasks.len() != t) {
            return Err(CliError::Incompatible(format!("seed {} has {} of {} tasks", r.seed, r.tasks.len(), t)));
        }
        let n = results.len() as f64;
        let acc_mean: Vec<f64> = (0..t).map(|k| results.iter().map(|r| r.tasks[k].acc).sum::<f64>() / n).collect();
        let forgetting_mean: Vec<Option<f64>> = (0..t)
            .map(|k| {
                let v: Option<Vec<f64>> = results.iter().map(|r| r.tasks[k].forgetting).collect();
                v.map(|v| v.iter().sum::<f64>() / n)
            })
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            kind: "summary".into(),
            method: first.method.clone(),
            seeds: results.iter().map(|r| r.seed).collect(),
            num_tasks: t,
            final_acc_mean: acc_mean[t - 1],
            final_forgetting_mean: forgetting_mean[t - 1],
            final_acc_per_seed: results.iter().map(|r| r.tasks[t - 1].acc).collect(),
            acc_mean,
            forgetting_mean,
            config: config.clone(),
            timing: Timing { total_seconds, task_seconds: Vec::new() },
        })
    }
}

/// Writes pretty JSON through a temporary file and a rename.
pub fn write_json_atomic<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Results { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| CliError::io(path, e))
}

/// Parsed results file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ResultsFile {
    Seed(Box<SeedResult>),
    Summary(Box<Summary>),
}

impl ResultsFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let bad = |message: String| CliError::Results { path: path.to_path_buf(), message };
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(1) => {}
            other => return Err(bad(format!("unsupported schema_version {other:?}"))),
        }
        match v.get("kind").and_then(|k| k.as_str()) {
            Some("seed") => Ok(ResultsFile::Seed(Box::new(serde_json::from_value(v).map_err(|e| bad(e.to_string()))?))),
            Some("summary") => {
                Ok(ResultsFile::Summary(Box::new(serde_json::from_value(v).map_err(|e| bad(e.to_string()))?)))
            }
            other => Err(bad(format!("unknown kind {other:?}"))),
        }
    }
}

/// The JSON value of a results file with the `timing` subtree removed.
pub fn without_timing(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Results { path: path.to_path_buf(), message: e.to_string() })?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    Ok(v)
}
