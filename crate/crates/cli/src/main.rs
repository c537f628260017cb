//! `cellfree`: simulate, build datasets, train and evaluate SE surrogates.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O or file-format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellfree::combining::CombinerKind;
use cellfree::dataset::{read_dataset, TargetMode};
use cellfree::geometry::CaseId;
use cellfree::nn::TrainingSchedule;
use cellfree::pipeline::{self, CaseConfig};
use cellfree::report::ArchitectureName;
use cellfree::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO uplink simulator and neural SE surrogates")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with network-config keys plus optional `seed`,
    /// `target_mode` and `epochs_per_stage`. Flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble a dataset and write dataset.cfse, manifest.json,
    /// se_reports.csv and assignments.csv into DIR.
    Generate {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one surrogate on a dataset file; writes the checkpoint to FILE
    /// and the history to FILE with a `.history.csv` extension.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long, default_value = "paper")]
        schedule: String,
        /// Epochs per stage (overrides the schedule).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on its held-out split; writes evaluation.json
    /// and cdf.csv into DIR.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pooled per-UE SE CDF for a case under the chosen combiner.
    SeCdf {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        combiner: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full case: dataset, both surrogates, results table and CDFs in DIR.
    Reproduce {
        #[command(flatten)]
        case: CaseArgs,
        /// paper (4 stages × 150 epochs) or desk (1 stage × 50 epochs).
        #[arg(long, default_value = "paper")]
        schedule: String,
        /// Epochs per stage (overrides the schedule).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct CaseArgs {
    /// 1, 2, 3 or desk.
    #[arg(long)]
    case: String,
    #[arg(long)]
    setups: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// setup-summary or served-ue.
    #[arg(long)]
    target_mode: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Arch {
    Dense,
    Conv,
}

impl From<Arch> for ArchitectureName {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Dense => ArchitectureName::Dense,
            Arch::Conv => ArchitectureName::Conv,
        }
    }
}

const DEFAULT_SEED: u64 = 2024;

/// Values read from `--config`.
#[derive(Default)]
struct FileConfig {
    network: serde_json::Map<String, serde_json::Value>,
    seed: Option<u64>,
    target_mode: Option<String>,
    epochs_per_stage: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    };
    let bad = |k: &str| Error::Config(format!("{}: invalid '{k}'", path.display()));
    let seed = map.remove("seed").map(|v| v.as_u64().ok_or_else(|| bad("seed"))).transpose()?;
    let target_mode = map
        .remove("target_mode")
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| bad("target_mode")))
        .transpose()?;
    let epochs_per_stage = map
        .remove("epochs_per_stage")
        .map(|v| v.as_u64().map(|e| e as usize).ok_or_else(|| bad("epochs_per_stage")))
        .transpose()?;
    Ok(FileConfig { network: map, seed, target_mode, epochs_per_stage })
}

fn case_config(
    args: &CaseArgs,
    file: &FileConfig,
    schedule: Option<&str>,
    epochs: Option<usize>,
) -> Result<CaseConfig> {
    let case = CaseId::parse(&args.case)?;
    let mut cfg = CaseConfig::new(case, args.seed.or(file.seed).unwrap_or(DEFAULT_SEED));
    if let Some(name) = schedule {
        cfg.schedule = TrainingSchedule::parse(name, cfg.schedule.seed)?;
    }
    if !file.network.is_empty() {
        cfg.network = pipeline::apply_overrides(&cfg.network, &serde_json::Value::Object(file.network.clone()))?;
    }
    if let Some(s) = args.setups {
        cfg.network.num_setups = s;
    }
    if let Some(o) = args.realizations {
        cfg.network.num_realizations = o;
    }
    cfg.network.validate()?;
    if let Some(mode) = args.target_mode.as_deref().or(file.target_mode.as_deref()) {
        cfg.target_mode = TargetMode::parse(mode)?;
    }
    if let Some(e) = epochs.or(file.epochs_per_stage) {
        cfg.schedule.epochs_per_stage = e;
    }
    cfg.schedule.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { case, out } => {
            let cfg = case_config(&case, &file, None, None)?;
            let a = pipeline::generate(&cfg, &out)?;
            log::info!("wrote {} samples to {}", a.dataset.len(), out.join(pipeline::DATASET_FILE).display());
        }
        Command::Train { dataset, arch, schedule, epochs, out } => {
            let data = read_dataset(&dataset)?;
            let case_cfg = CaseConfig::new(data.manifest.case, data.manifest.seeds.master);
            let mut schedule =
                TrainingSchedule::parse(&schedule, CaseConfig::schedule_seed(data.manifest.seeds.master))?;
            if let Some(e) = epochs.or(file.epochs_per_stage) {
                schedule.epochs_per_stage = e;
            }
            schedule.validate()?;
            let arch = ArchitectureName::from(arch);
            let trained = pipeline::train_model(&data, arch, &schedule, &case_cfg.split(), case_cfg.init_seed(arch))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            pipeline::save_trained(&trained, &out, &out.with_extension("history.csv"))?;
            log::info!(
                "{}: train rmse {:.4e}, validation rmse {:.4e}",
                arch.label(),
                trained.record.loss,
                trained.record.val_loss
            );
        }
        Command::Evaluate { model, dataset, out } => {
            let eval = pipeline::evaluate_files(&model, &dataset, &out)?;
            log::info!("test rmse {:.4e}, K-S distance {:.4}", eval.test_rmse, eval.ks_distance);
        }
        Command::SeCdf { case, combiner, out } => {
            let cfg = case_config(&case, &file, None, None)?;
            let series = pipeline::write_se_cdf(&cfg, CombinerKind::parse(&combiner)?, &out)?;
            log::info!("{} SE values written to {}", series.len(), out.display());
        }
        Command::Reproduce { case, schedule, epochs, out } => {
            let cfg = case_config(&case, &file, Some(&schedule), epochs)?;
            let bundle = pipeline::reproduce_case(&cfg, &out)?;
            for (r, e) in bundle.records.iter().zip(&bundle.evaluations) {
                log::info!(
                    "{} case {}: loss {:.4e}, val {:.4e}, {:.1} s, K-S {:.4}",
                    r.architecture.label(),
                    r.case,
                    r.loss,
                    r.val_loss,
                    r.runtime_s,
                    e.ks_distance
                );
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Numerical(_) | Error::DegenerateChannel(_) | Error::Diverged { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
