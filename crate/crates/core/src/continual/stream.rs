//! Disjoint-label task streams.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::LabeledDataset;
use crate::error::{invalid, Result};
use crate::numerics::Tensor;

/// Samples of one task. Labels are incremental class ids: the position of
/// the original class in the stream's class order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub x: Tensor,
    pub y: Vec<usize>,
    /// Incremental ids introduced by this task, ascending and contiguous.
    pub classes: Vec<usize>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Seeded class order split into contiguous groups.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    class_order: Vec<usize>,
    incremental: Vec<usize>,
    group_sizes: Vec<usize>,
    seed: u64,
    tasks: Vec<TaskData>,
}

/// Group sizes for `classes` split into `tasks`; the remainder goes to the
/// earliest groups.
pub fn group_sizes(classes: usize, tasks: usize) -> Result<Vec<usize>> {
    if tasks == 0 {
        return Err(invalid("number of tasks must be positive"));
    }
    if tasks > classes {
        return Err(invalid(format!("{tasks} tasks requested for only {classes} classes")));
    }
    let base = classes / tasks;
    let extra = classes % tasks;
    Ok((0..tasks).map(|t| base + usize::from(t < extra)).collect())
}

impl TaskStream {
    /// Original class id at each incremental position.
    pub fn class_order(&self) -> &[usize] {
        &self.class_order
    }

    /// Incremental id of original class `c`.
    pub fn incremental_id(&self, c: usize) -> usize {
        self.incremental[c]
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &TaskData {
        &self.tasks[t]
    }

    /// Task that introduces incremental class `c`.
    pub fn task_of_class(&self, c: usize) -> usize {
        let mut acc = 0;
        for (t, &g) in self.group_sizes.iter().enumerate() {
            acc += g;
            if c < acc {
                return t;
            }
        }
        self.group_sizes.len() - 1
    }

    /// Number of classes seen after finishing task `t` (0-based).
    pub fn classes_through(&self, t: usize) -> usize {
        self.group_sizes[..=t].iter().sum()
    }

    /// Routes another dataset over the same label space (e.g. a test set)
    /// through this stream's class partition.
    pub fn route(&self, ds: &LabeledDataset) -> Result<Vec<TaskData>> {
        if ds.num_classes() != self.num_classes() {
            return Err(invalid(format!(
                "dataset has {} classes, stream has {}",
                ds.num_classes(),
                self.num_classes()
            )));
        }
        partition(ds, &self.incremental, &self.group_sizes)
    }
}

fn partition(ds: &LabeledDataset, incremental: &[usize], sizes: &[usize]) -> Result<Vec<TaskData>> {
    let mut start = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &g in sizes {
        let classes: Vec<usize> = (start..start + g).collect();
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| (start..start + g).contains(&incremental[ds.y()[i]])).collect();
        let (x, y) = ds.subset(&idx)?;
        let y = y.into_iter().map(|c| incremental[c]).collect();
        out.push(TaskData { x, y, classes });
        start += g;
    }
    Ok(out)
}

/// Shuffles the classes with `seed` and splits them into `num_tasks`
/// contiguous groups; every sample lands in the task owning its class.
pub fn build_task_stream(dataset: &LabeledDataset, num_tasks: usize, seed: u64) -> Result<TaskStream> {
    let sizes = group_sizes(dataset.num_classes(), num_tasks)?;
    let mut class_order: Vec<usize> = (0..dataset.num_classes()).collect();
    class_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut incremental = vec![0; class_order.len()];
    for (pos, &c) in class_order.iter().enumerate() {
        incremental[c] = pos;
    }
    let tasks = partition(dataset, &incremental, &sizes)?;
    Ok(TaskStream { class_order, incremental, group_sizes: sizes, seed, tasks })
}
