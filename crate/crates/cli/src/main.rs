use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use l3dmc_cli::{compare_runs, run_experiment, CliError, ExperimentConfig, Overrides, OUT_DIR_ENV};
use l3dmc_core::datasets;
use l3dmc_core::model::checkpoint;
use serde_json::json;

#[derive(Parser)]
#[command(name = "l3dmc", version, about = "Class-incremental learning with mixed-curvature subspace distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write results files.
    Run(RunArgs),
    /// Tabulate accuracy and forgetting from results files.
    Compare(CompareArgs),
    /// Print the header of a model checkpoint.
    InspectCheckpoint {
        path: PathBuf,
    },
    /// Generate a synthetic dataset file.
    GenData(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long)]
    method: Option<String>,
    /// Total exemplar capacity.
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda_e: Option<f64>,
    #[arg(long)]
    lambda_h: Option<f64>,
    #[arg(long)]
    curvature: Option<f64>,
    #[arg(long)]
    kd_scale: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Blobs,
    Tree,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Binary,
    Csv,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "blobs")]
    kind: Kind,
    #[arg(long, default_value_t = 8)]
    num_classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Noise stdev (blobs spread or tree noise).
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "binary")]
    format: DataFormat,
    #[arg(long, short)]
    output: PathBuf,
}

fn run(args: RunArgs) -> Result<serde_json::Value, CliError> {
    let (mut cfg, base) = match &args.config {
        Some(p) => (ExperimentConfig::from_file(p)?, p.parent().map(PathBuf::from)),
        None => (ExperimentConfig::default(), None),
    };
    cfg.apply(&Overrides {
        seeds: args.seed_list,
        method: args.method,
        memory_capacity: args.memory,
        num_tasks: args.tasks,
        beta: args.beta,
        lambda_e: args.lambda_e,
        lambda_h: args.lambda_h,
        curvature: args.curvature,
        kd_scale: args.kd_scale,
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        clip: args.clip,
        patience: args.patience,
    });
    cfg.validate()?;
    if args.dry_run {
        return Ok(json!({ "config": cfg }));
    }
    let report = run_experiment(&cfg, &args.out, base.as_deref())?;
    Ok(json!({
        "summary_file": report.summary_file,
        "seed_files": report.seed_files,
        "checkpoints": report.checkpoints,
        "final_acc_mean": report.summary.final_acc_mean,
        "final_forgetting_mean": report.summary.final_forgetting_mean,
    }))
}

fn gen_data(a: GenArgs) -> Result<serde_json::Value, CliError> {
    let ds = match a.kind {
        Kind::Blobs => datasets::make_blobs(a.num_classes, a.per_class, a.dim, a.spread, a.seed)?,
        Kind::Tree => datasets::make_tree_data(a.branching, a.depth, a.per_class, a.dim, a.spread, a.seed)?,
    };
    match a.format {
        DataFormat::Binary => datasets::write_binary(&ds, &a.output)?,
        DataFormat::Csv => datasets::write_csv(&ds, &a.output, "label")?,
    }
    Ok(json!({
        "output": a.output,
        "samples": ds.len(),
        "classes": ds.num_classes(),
        "input_dim": ds.input_dim(),
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|v| v.to_string()),
        Command::Compare(args) => compare_runs(&args.files).map(|c| match args.format {
            Format::Text => c.to_text(),
            Format::Json => c.to_json().to_string(),
        }),
        Command::InspectCheckpoint { path } => checkpoint::inspect(&path).map_err(CliError::from).map(|info| {
            let a = &info.architecture;
            json!({
                "version": info.version,
                "rng_seed": info.rng_seed,
                "fingerprint": format!("{:016x}", info.fingerprint),
                "parameter_arrays": info.parameter_arrays,
                "parameter_count": info.parameter_count,
                "architecture": {
                    "input_dim": a.input_dim,
                    "hidden": a.hidden,
                    "feature_dim": a.feature_dim,
                    "proj_dim": a.proj_dim,
                    "activation": a.activation.name(),
                    "num_classes": a.num_classes,
                },
            })
            .to_string()
        }),
        Command::GenData(args) => gen_data(args).map(|v| v.to_string()),
    };
    match outcome {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
