//! Multi-seed experiment orchestration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use l3dmc_core::continual::{run_sequence, TaskRecord};
use l3dmc_core::datasets::LabeledDataset;
use l3dmc_core::model::checkpoint;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::results::{write_json_atomic, SeedResult, Summary, TaskResult, Timing, SCHEMA_VERSION};

/// Files produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub seed_files: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub summary: Summary,
}

pub fn seed_file(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("results_seed{seed}.json"))
}

pub fn checkpoint_file(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("model_seed{seed}.ckpt"))
}

pub fn summary_file(out: &Path) -> PathBuf {
    out.join("summary.json")
}

/// Train/test split shared by every seed of a run.
pub fn split_dataset(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    let ds = cfg.dataset.load(base)?;
    let (train_idx, test_idx) = ds.stratified_split(cfg.test_fraction, cfg.split_seed)?;
    Ok((ds.select(&train_idx)?, ds.select(&test_idx)?))
}

fn run_seed(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
    out: &Path,
) -> Result<SeedResult, CliError> {
    let run_cfg = cfg.run_config(seed)?;
    let start = Instant::now();
    let mut records: Vec<TaskRecord> = Vec::new();
    let mut task_seconds = Vec::new();
    let mut last = Instant::now();
    let outcome = run_sequence(train, test, &run_cfg, |r| {
        records.push(r.clone());
        task_seconds.push(last.elapsed().as_secs_f64());
        last = Instant::now();
    });

    let tasks: Vec<TaskResult> = records.iter().map(TaskResult::from).collect();
    let mut result = SeedResult {
        schema_version: SCHEMA_VERSION,
        kind: "seed".into(),
        status: "complete".into(),
        error: None,
        method: run_cfg.method.name().into(),
        seed,
        num_tasks: run_cfg.effective_tasks(),
        class_order: Vec::new(),
        acc_matrix: records.iter().map(|r| r.accuracies.clone()).collect(),
        final_acc: None,
        final_forgetting: None,
        tasks,
        model_fingerprint: None,
        config: cfg.clone(),
        timing: Timing { total_seconds: 0.0, task_seconds },
    };
    let failure = match outcome {
        Ok(done) => {
            result.class_order = done.class_order.clone();
            result.final_acc = result.tasks.last().map(|t| t.acc);
            result.final_forgetting = result.tasks.last().and_then(|t| t.forgetting);
            result.model_fingerprint = Some(format!("{:016x}", done.model.fingerprint()));
            checkpoint::save(&done.model, &checkpoint_file(out, seed)).map_err(|e| CliError::Seed { seed, source: e })?;
            None
        }
        Err(e) => {
            result.status = "failed".into();
            result.error = Some(e.to_string());
            Some(CliError::Seed { seed, source: e })
        }
    };
    result.timing.total_seconds = start.elapsed().as_secs_f64();
    write_json_atomic(&result, &seed_file(out, seed))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

/// Runs every seed (in parallel), writing one results file and checkpoint
/// per seed and a seed-averaged summary into `out`.
///
/// A failing seed still leaves its partial results file behind; the first
/// failure is returned once all seeds have finished.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, base: Option<&Path>) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let (train, test) = split_dataset(cfg, base)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let outcomes: Vec<Result<SeedResult, CliError>> =
        cfg.seeds.par_iter().map(|&seed| run_seed(cfg, &train, &test, seed, out)).collect();
    let mut results = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        results.push(o?);
    }

    let summary = Summary::from_seeds(&results, cfg, start.elapsed().as_secs_f64())?;
    let summary_path = summary_file(out);
    write_json_atomic(&summary, &summary_path)?;
    Ok(ExperimentReport {
        seed_files: cfg.seeds.iter().map(|&s| seed_file(out, s)).collect(),
        checkpoints: cfg.seeds.iter().map(|&s| checkpoint_file(out, s)).collect(),
        summary_file: summary_path,
        summary,
    })
}
