//! Experiment configuration: TOML file layered over defaults, with
//! command-line overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};

use l3dmc_core::continual::{Method, RunConfig, TrainConfig};
use l3dmc_core::datasets::{self, LabeledDataset, Normalize};
use l3dmc_core::distill::DistillConfig;
use l3dmc_core::model::Activation;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeSpec {
    None,
    Standardize,
}

impl From<NormalizeSpec> for Normalize {
    fn from(n: NormalizeSpec) -> Self {
        match n {
            NormalizeSpec::None => Normalize::None,
            NormalizeSpec::Standardize => Normalize::Standardize,
        }
    }
}

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Tree {
        branching: usize,
        depth: usize,
        per_leaf: usize,
        dim: usize,
        noise: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        normalize: NormalizeSpec,
    },
    Binary {
        path: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs { num_classes: 8, per_class: 100, dim: 16, spread: 0.5, seed: 0 }
    }
}

impl DatasetSpec {
    /// Loads or generates the dataset. Relative paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<LabeledDataset, CliError> {
        let resolve = |p: &Path| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        Ok(match self {
            DatasetSpec::Blobs { num_classes, per_class, dim, spread, seed } => {
                datasets::make_blobs(*num_classes, *per_class, *dim, *spread, *seed)?
            }
            DatasetSpec::Tree { branching, depth, per_leaf, dim, noise, seed } => {
                datasets::make_tree_data(*branching, *depth, *per_leaf, *dim, *noise, *seed)?
            }
            DatasetSpec::Csv { path, label_column, normalize } => {
                datasets::load_csv(&resolve(path), label_column, (*normalize).into())?
            }
            DatasetSpec::Binary { path } => datasets::read_binary(&resolve(path))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![64, 64], feature_dim: 32, proj_dim: 16, activation: "relu".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub lambda_e: f64,
    pub lambda_h: f64,
    pub curvature: f64,
    pub beta: f64,
    pub kd_scale: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { lambda_e: 1.0, lambda_h: 1.0, curvature: 1.0, beta: 1.0, kd_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub patience: usize,
    pub val_fraction: f64,
    /// Update the projection heads during training.
    pub train_heads: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { lr: 0.01, epochs: 50, batch_size: 32, clip: 10.0, patience: 10, val_fraction: 0.1, train_heads: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: String,
    pub num_tasks: usize,
    pub memory_capacity: usize,
    /// Held-out share of every class used as the test set.
    pub test_fraction: f64,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub model: ModelSection,
    pub kernel: KernelSection,
    pub optimizer: OptimizerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: "l3dmc".into(),
            num_tasks: 4,
            memory_capacity: 200,
            test_fraction: 0.2,
            split_seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            dataset: DatasetSpec::default(),
            model: ModelSection::default(),
            kernel: KernelSection::default(),
            optimizer: OptimizerSection::default(),
        }
    }
}

/// One invalid field, addressed by its dotted path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub method: Option<String>,
    pub memory_capacity: Option<usize>,
    pub num_tasks: Option<usize>,
    pub beta: Option<f64>,
    pub lambda_e: Option<f64>,
    pub lambda_h: Option<f64>,
    pub curvature: Option<f64>,
    pub kd_scale: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub clip: Option<f64>,
    pub patience: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::ConfigSyntax(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = o.$src.clone() {
                    self.$($dst)+ = v;
                }
            };
        }
        set!(seeds => seeds);
        set!(method => method);
        set!(memory_capacity => memory_capacity);
        set!(num_tasks => num_tasks);
        set!(beta => kernel.beta);
        set!(lambda_e => kernel.lambda_e);
        set!(lambda_h => kernel.lambda_h);
        set!(curvature => kernel.curvature);
        set!(kd_scale => kernel.kd_scale);
        set!(lr => optimizer.lr);
        set!(epochs => optimizer.epochs);
        set!(batch_size => optimizer.batch_size);
        set!(clip => optimizer.clip);
        set!(patience => optimizer.patience);
    }

    pub fn method(&self) -> Option<Method> {
        Method::parse(&self.method)
    }

    /// Every problem with the configuration; empty when valid.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| out.push(ConfigIssue { path: path.into(), message });
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let method = self.method();
        if method.is_none() {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            bad("method", format!("unknown method '{}', expected one of {}", self.method, names.join(", ")));
        }
        if self.num_tasks == 0 {
            bad("num_tasks", "must be positive".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bad("test_fraction", format!("must be in (0, 1), got {}", self.test_fraction));
        }
        if self.seeds.is_empty() {
            bad("seeds", "at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bad("seeds", "seeds must be distinct".into());
        }

        let classes = match &self.dataset {
            DatasetSpec::Blobs { num_classes, per_class, dim, spread, .. } => {
                for (k, v) in [("num_classes", num_classes), ("per_class", per_class), ("dim", dim)] {
                    if *v == 0 {
                        bad(&format!("dataset.{k}"), "must be positive".into());
                    }
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    bad("dataset.spread", format!("must be >= 0, got {spread}"));
                }
                Some(*num_classes)
            }
            DatasetSpec::Tree { branching, depth, per_leaf, dim, noise, .. } => {
                for (k, v) in [("branching", branching), ("depth", depth), ("per_leaf", per_leaf), ("dim", dim)] {
                    if *v == 0 {
                        bad(&format!("dataset.{k}"), "must be positive".into());
                    }
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    bad("dataset.noise", format!("must be >= 0, got {noise}"));
                }
                u32::try_from(*depth).ok().and_then(|d| branching.checked_pow(d))
            }
            DatasetSpec::Csv { label_column, .. } => {
                if label_column.is_empty() {
                    bad("dataset.label_column", "must not be empty".into());
                }
                None
            }
            DatasetSpec::Binary { .. } => None,
        };
        if let (Some(c), Some(m)) = (classes, method) {
            if m != Method::Joint && self.num_tasks > c {
                bad("num_tasks", format!("{} tasks for only {} classes", self.num_tasks, c));
            }
            if m.uses_memory() && self.memory_capacity < c {
                bad("memory_capacity", format!("capacity {} gives a zero per-class quota for {} classes", self.memory_capacity, c));
            }
        }
        if method.is_some_and(Method::uses_memory) && self.memory_capacity == 0 {
            bad("memory_capacity", "must be positive for a method with memory".into());
        }

        if self.model.hidden.contains(&0) {
            bad("model.hidden", "widths must be positive".into());
        }
        if self.model.feature_dim == 0 {
            bad("model.feature_dim", "must be positive".into());
        }
        if self.model.proj_dim == 0 {
            bad("model.proj_dim", "must be positive".into());
        }
        if Activation::parse(&self.model.activation).is_none() {
            bad("model.activation", format!("unknown activation '{}'", self.model.activation));
        }

        for (k, v) in [
            ("kernel.lambda_e", self.kernel.lambda_e),
            ("kernel.lambda_h", self.kernel.lambda_h),
            ("kernel.curvature", self.kernel.curvature),
        ] {
            if !positive(v) {
                bad(k, format!("must be positive, got {v}"));
            }
        }
        for (k, v) in [("kernel.beta", self.kernel.beta), ("kernel.kd_scale", self.kernel.kd_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(k, format!("must be >= 0, got {v}"));
            }
        }

        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            bad("optimizer.lr", format!("must be >= 0, got {}", o.lr));
        }
        if o.epochs == 0 {
            bad("optimizer.epochs", "must be positive".into());
        }
        if o.batch_size == 0 {
            bad("optimizer.batch_size", "must be positive".into());
        }
        if !positive(o.clip) {
            bad("optimizer.clip", format!("must be positive, got {}", o.clip));
        }
        if !(0.0..1.0).contains(&o.val_fraction) {
            bad("optimizer.val_fraction", format!("must be in [0, 1), got {}", o.val_fraction));
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(issues))
        }
    }

    /// Library settings for one seed. Call after [`Self::validate`].
    pub fn run_config(&self, seed: u64) -> Result<RunConfig, CliError> {
        self.validate()?;
        let distill = DistillConfig {
            beta: self.kernel.beta,
            lambda_e: self.kernel.lambda_e,
            lambda_h: self.kernel.lambda_h,
            curvature: self.kernel.curvature,
        };
        let o = &self.optimizer;
        Ok(RunConfig {
            method: self.method().expect("validated"),
            num_tasks: self.num_tasks,
            memory_capacity: self.memory_capacity,
            hidden: self.model.hidden.clone(),
            feature_dim: self.model.feature_dim,
            proj_dim: self.model.proj_dim,
            activation: Activation::parse(&self.model.activation).expect("validated"),
            distill,
            train: TrainConfig {
                lr: o.lr,
                epochs: o.epochs,
                batch_size: o.batch_size,
                clip: o.clip,
                patience: o.patience,
                val_fraction: o.val_fraction,
                kd_scale: self.kernel.kd_scale,
                distill: None,
                train_heads: o.train_heads,
                seed: 0,
            },
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(ExperimentConfig::default().issues().is_empty());
    }

    #[test]
    fn file_then_flags() {
        let mut c = ExperimentConfig::from_toml_str(
            "method = \"replay\"\nseeds = [3]\n[kernel]\nbeta = 0.5\n[optimizer]\nepochs = 7\n",
        )
        .unwrap();
        assert_eq!(c.kernel.beta, 0.5);
        assert_eq!(c.kernel.lambda_e, 1.0);
        c.apply(&Overrides { beta: Some(2.0), seeds: Some(vec![9, 10]), ..Default::default() });
        assert_eq!(c.kernel.beta, 2.0);
        assert_eq!(c.seeds, vec![9, 10]);
        assert_eq!(c.optimizer.epochs, 7);
        assert_eq!(c.method, "replay");
    }

    #[test]
    fn issues_name_their_fields() {
        let mut c = ExperimentConfig::default();
        c.method = "nope".into();
        c.kernel.lambda_h = 0.0;
        c.optimizer.batch_size = 0;
        c.memory_capacity = 4;
        let paths: Vec<String> = c.issues().into_iter().map(|i| i.path).collect();
        assert_eq!(paths, vec!["method", "kernel.lambda_h", "optimizer.batch_size"]);
        c.method = "l3dmc".into();
        let paths: Vec<String> = c.issues().into_iter().map(|i| i.path).collect();
        assert!(paths.contains(&"memory_capacity".to_string()));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[dataset]\nkind = \"blobs\"\nnum_classes = 2").is_err());
    }
}
