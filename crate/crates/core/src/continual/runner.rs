//! A full class-incremental run: stream construction, sequential training,
//! memory updates and task-agnostic evaluation after every task.

use crate::datasets::LabeledDataset;
use crate::distill::DistillConfig;
use crate::error::{invalid, Result};
use crate::model::{Activation, Architecture, L3Model, ModelSnapshot};
use crate::numerics::Tensor;

use super::memory::{update_memory, Memory};
use super::metrics::{compute_metrics, MetricsLedger};
use super::ncm::{class_means, ncm_predict_features};
use super::stream::{build_task_stream, TaskData};
use super::train::{train_task, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Memory replay plus mixed-curvature distillation.
    L3dmc,
    /// Memory replay only.
    Replay,
    /// No memory, no distillation.
    LowerBound,
    /// Memory replay plus the Euclidean distillation term only.
    EuclideanOnly,
    /// All classes in a single task.
    Joint,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::L3dmc, Method::Replay, Method::LowerBound, Method::EuclideanOnly, Method::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Method::L3dmc => "l3dmc",
            Method::Replay => "replay",
            Method::LowerBound => "lower_bound",
            Method::EuclideanOnly => "euclidean_only",
            Method::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Method::L3dmc | Method::Replay | Method::EuclideanOnly)
    }

    pub fn uses_distillation(self) -> bool {
        matches!(self, Method::L3dmc | Method::EuclideanOnly)
    }

    /// The distillation settings this method trains with.
    pub fn distill_config(self, base: DistillConfig) -> Option<DistillConfig> {
        match self {
            Method::L3dmc => Some(base),
            Method::EuclideanOnly => Some(DistillConfig { beta: 0.0, ..base }),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub num_tasks: usize,
    pub memory_capacity: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub activation: Activation,
    pub distill: DistillConfig,
    /// Optimizer settings; `distill` and `seed` are set per task by the run.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::L3dmc,
            num_tasks: 4,
            memory_capacity: 200,
            hidden: vec![64, 64],
            feature_dim: 32,
            proj_dim: 16,
            activation: Activation::Relu,
            distill: DistillConfig::default(),
            train: TrainConfig::default(),
            seed: 1,
        }
    }
}

impl RunConfig {
    /// Tasks actually used: joint training always runs a single task.
    pub fn effective_tasks(&self) -> usize {
        if self.method == Method::Joint {
            1
        } else {
            self.num_tasks
        }
    }
}

/// Outcome of one task of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task: usize,
    pub classes_seen: usize,
    /// Accuracy on each task seen so far, on the full seen-class label space.
    pub accuracies: Vec<f64>,
    pub acc: f64,
    pub forgetting: Option<f64>,
    pub memory_size: usize,
    pub train: TrainReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ledger: MetricsLedger,
    pub records: Vec<TaskRecord>,
    pub class_order: Vec<usize>,
    pub model: L3Model,
    pub memory: Memory,
}

fn task_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64 + 1)
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    logits
        .iter_rows()
        .take(logits.rows())
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64
}

/// Evaluates every seen test task; memory methods predict by nearest class
/// mean, the others by classifier argmax.
fn evaluate(model: &L3Model, memory: &Memory, use_ncm: bool, tests: &[TaskData]) -> Result<Vec<f64>> {
    let means = if use_ncm { Some(class_means(model, memory)?) } else { None };
    tests
        .iter()
        .map(|task| {
            if task.is_empty() {
                return Ok(0.0);
            }
            let pred = match &means {
                Some(m) => ncm_predict_features(&model.forward_features(&task.x)?, m)?,
                None => argmax_rows(&model.forward_logits(&task.x)?),
            };
            Ok(accuracy(&pred, &task.y))
        })
        .collect()
}

/// Trains the tasks of `train` in sequence and evaluates on `test` after each.
///
/// `on_task` sees every record as soon as it is complete.
pub fn run_sequence(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &RunConfig,
    mut on_task: impl FnMut(&TaskRecord),
) -> Result<RunOutcome> {
    let method = cfg.method;
    if test.input_dim() != train.input_dim() {
        return Err(invalid("train and test input widths differ"));
    }
    let stream = build_task_stream(train, cfg.effective_tasks(), cfg.seed)?;
    let tests = stream.route(test)?;
    let use_memory = method.uses_memory();
    if use_memory && cfg.memory_capacity < stream.num_classes() {
        return Err(invalid(format!(
            "memory capacity {} is below the {} classes of the stream",
            cfg.memory_capacity,
            stream.num_classes()
        )));
    }

    let arch = Architecture {
        input_dim: train.input_dim(),
        hidden: cfg.hidden.clone(),
        feature_dim: cfg.feature_dim,
        proj_dim: cfg.proj_dim,
        activation: cfg.activation,
        num_classes: stream.group_sizes()[0],
    };
    let mut model = L3Model::new(arch, cfg.seed)?;
    let mut memory = Memory::new(if use_memory { cfg.memory_capacity } else { 0 }, train.input_dim());
    let mut ledger = MetricsLedger::new();
    let mut records = Vec::new();
    let mut old: Option<ModelSnapshot> = None;

    for (t, task) in stream.tasks().iter().enumerate() {
        let seen = stream.classes_through(t);
        if t > 0 {
            model.expand_classifier(seen)?;
        }
        let tcfg = TrainConfig {
            distill: method.distill_config(cfg.distill),
            seed: task_seed(cfg.seed, t),
            ..cfg.train.clone()
        };
        let report = train_task(&mut model, old.as_ref(), &task.x, &task.y, &memory, &tcfg)?;
        update_memory(&mut memory, &model, &task.x, &task.y)?;

        let accs = evaluate(&model, &memory, use_memory, &tests[..=t])?;
        ledger.push_row(accs.clone())?;
        let (acc, forgetting) = compute_metrics(&ledger, t + 1)?;
        let record = TaskRecord {
            task: t,
            classes_seen: seen,
            accuracies: accs,
            acc,
            forgetting,
            memory_size: memory.len(),
            train: report,
        };
        on_task(&record);
        records.push(record);
        if method.uses_distillation() {
            old = Some(ModelSnapshot::capture(&model));
        }
    }
    Ok(RunOutcome { ledger, records, class_order: stream.class_order().to_vec(), model, memory })
}
