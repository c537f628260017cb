//! End-to-end workflows behind the command-line tool: dataset generation,
//! training, evaluation, SE CDF export and whole-case reproduction.
//!
//! Every CSV written here starts with a `# config_hash: <hex>` comment line;
//! binary files carry the hash in their manifest or metadata trailer.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::association::DccAssignment;
use crate::combining::{write_se_csv, CombinerKind, SeReport};
use crate::dataset::{
    assemble_dataset, read_dataset, simulate_setup, split_dataset, split_indices, write_dataset, Assembly, Dataset,
    Manifest, Seeds, SplitSpec, TargetMode,
};
use crate::geometry::{CaseId, NetworkConfig};
use crate::nn::{
    build_conv_net, build_dense_net, evaluate_rmse, predict, read_checkpoint, train, write_checkpoint,
    write_history_csv, CheckpointMeta, History, SurrogateModel, TensorView, TrainingSchedule,
};
use crate::report::{
    empirical_cdf, ks_distance, write_cdf_csv, write_results_csv, ArchitectureName, CdfSeries, RunRecord,
};
use crate::rng::{derive_seed, Stream};
use crate::{par, Error, Result};

pub const DATASET_FILE: &str = "dataset.cfse";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SE_REPORTS_FILE: &str = "se_reports.csv";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const CDF_FILE: &str = "cdf.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";

pub fn checkpoint_file(arch: ArchitectureName) -> &'static str {
    match arch {
        ArchitectureName::Dense => "dense.cfnn",
        ArchitectureName::Conv => "conv.cfnn",
    }
}

pub fn history_file(arch: ArchitectureName) -> &'static str {
    match arch {
        ArchitectureName::Dense => "dense_history.csv",
        ArchitectureName::Conv => "conv_history.csv",
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

/// Overlays the keys of a JSON object onto `cfg`; unknown keys are rejected.
pub fn apply_overrides(cfg: &NetworkConfig, overrides: &serde_json::Value) -> Result<NetworkConfig> {
    let Some(obj) = overrides.as_object() else {
        return Err(Error::config("config overrides must be a JSON object"));
    };
    let mut base = serde_json::to_value(cfg)?;
    let fields = base.as_object_mut().expect("config serialises to an object");
    for (k, v) in obj {
        if !fields.contains_key(k) {
            return Err(Error::config(format!("unknown config key '{k}'")));
        }
        fields.insert(k.clone(), v.clone());
    }
    let merged: NetworkConfig =
        serde_json::from_value(base).map_err(|e| Error::config(format!("invalid config override: {e}")))?;
    merged.validate()?;
    Ok(merged)
}

/// One case run: preset plus overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseConfig {
    pub case: CaseId,
    pub network: NetworkConfig,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub schedule: TrainingSchedule,
}

impl CaseConfig {
    /// Preset network, default target mode and the full four-stage schedule.
    pub fn new(case: CaseId, seed: u64) -> Self {
        let schedule = TrainingSchedule::paper(Self::schedule_seed(seed));
        CaseConfig { case, network: case.config(), seed, target_mode: TargetMode::SetupSummary, schedule }
    }

    pub fn schedule_seed(master: u64) -> u64 {
        derive_seed(master, Stream::Shuffle, &[])
    }

    pub fn seeds(&self) -> Seeds {
        Seeds { master: self.seed }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec::standard(derive_seed(self.seed, Stream::Split, &[]))
    }

    pub fn init_seed(&self, arch: ArchitectureName) -> u64 {
        derive_seed(self.seed, Stream::Init, &[arch as u64])
    }
}

fn create_csv(path: &Path, config_hash: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash: {config_hash}")?;
    Ok(w)
}

fn write_tagged_csv(
    path: &Path,
    config_hash: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut w = create_csv(path, config_hash)?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// `setup,u,master,pilot,serving_set` for every setup; serving sets are
/// `;`-separated AP indices.
pub fn write_assignments_csv<W: Write>(out: W, assignments: &[&DccAssignment]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setup", "u", "master", "pilot", "serving_set"])?;
    for (s, a) in assignments.iter().enumerate() {
        for u in 0..a.num_ues() {
            let set = a.serving_set(u).iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([s.to_string(), u.to_string(), a.master(u).to_string(), a.pilot(u).to_string(), set])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Assembles the dataset for `cfg` and writes the dataset, its manifest, the
/// per-setup SE reports and the DCC assignments into `out_dir`.
pub fn generate(cfg: &CaseConfig, out_dir: &Path) -> Result<Assembly> {
    fs::create_dir_all(out_dir)?;
    let assembly = assemble_dataset(cfg.case, &cfg.network, cfg.seeds(), cfg.target_mode)?;
    write_generated(&assembly, out_dir)?;
    Ok(assembly)
}

fn write_generated(assembly: &Assembly, out_dir: &Path) -> Result<()> {
    let manifest = &assembly.dataset.manifest;
    write_dataset(&assembly.dataset, out_dir.join(DATASET_FILE))?;
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    write_tagged_csv(&out_dir.join(SE_REPORTS_FILE), &manifest.config_hash, |w| write_se_csv(w, &assembly.reports()))?;
    let assignments: Vec<&DccAssignment> = assembly.setups.iter().map(|s| &s.assignment).collect();
    write_tagged_csv(&out_dir.join(ASSIGNMENTS_FILE), &manifest.config_hash, |w| write_assignments_csv(w, &assignments))
}

/// A trained network with its provenance.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: SurrogateModel<f32>,
    pub meta: CheckpointMeta,
    pub history: History,
    pub record: RunRecord,
}

/// Splits `data`, trains `arch` on the training part with the validation part
/// monitored, and returns the model with its history and table row.
pub fn train_model(
    data: &Dataset,
    arch: ArchitectureName,
    schedule: &TrainingSchedule,
    split: &SplitSpec,
    init_seed: u64,
) -> Result<TrainedModel> {
    let (train_set, val_set, _) = split_dataset(data, split)?;
    let mut model = match arch {
        ArchitectureName::Dense => build_dense_net::<f32>(data.feature_dim, data.target_dim, init_seed)?,
        ArchitectureName::Conv => build_conv_net::<f32>(data.feature_dim, data.target_dim, init_seed)?,
    };
    let clock = Instant::now();
    let history = train(
        &mut model,
        TensorView { x: &train_set.features, y: &train_set.targets, rows: train_set.len() },
        Some(TensorView { x: &val_set.features, y: &val_set.targets, rows: val_set.len() }),
        schedule,
    )?;
    let runtime_s = clock.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    let record = RunRecord {
        architecture: arch,
        case: data.manifest.case.name().to_string(),
        loss: history.final_train_rmse(),
        val_loss: history.final_val_rmse().unwrap_or(f64::NAN),
        runtime_s,
    };
    let meta = CheckpointMeta {
        architecture: Some(arch),
        schedule: schedule.clone(),
        init_seed,
        split_seed: split.seed,
        dataset_config_hash: data.manifest.config_hash.clone(),
    };
    Ok(TrainedModel { model, meta, history, record })
}

/// Writes the checkpoint to `path` and the history next to it.
pub fn save_trained(trained: &TrainedModel, checkpoint: &Path, history: &Path) -> Result<()> {
    write_checkpoint(&trained.model, &trained.meta, checkpoint)?;
    write_tagged_csv(history, &trained.meta.dataset_config_hash, |w| write_history_csv(w, &trained.history))
}

/// Held-out comparison of a surrogate against simulator targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub architecture: Option<ArchitectureName>,
    pub test_samples: usize,
    pub test_rmse: f64,
    /// K-S distance between predicted and simulated SE over the compared
    /// slots.
    pub ks_distance: f64,
    #[serde(skip)]
    pub predicted: Vec<f64>,
    #[serde(skip)]
    pub reference: Vec<f64>,
}

/// Evaluates `model` on `test`. In served-ue mode only the slots holding a
/// real served-UE value are compared; padding is ignored.
pub fn evaluate_model(model: &SurrogateModel<f32>, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    if model.input_size() != test.feature_dim || model.output_size() != test.target_dim {
        return Err(Error::shape("model dimensions do not match the dataset"));
    }
    let pred = predict(model, &test.features, test.len())?;
    let test_rmse = evaluate_rmse(model, TensorView { x: &test.features, y: &test.targets, rows: test.len() })?;
    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for i in 0..test.len() {
        let slots = test.served_slots(i);
        let row = i * test.target_dim;
        predicted.extend(pred[row..row + slots].iter().map(|&v| v as f64));
        reference.extend(test.targets[row..row + slots].iter().map(|&v| v as f64));
    }
    if predicted.is_empty() {
        return Err(Error::config("no served-UE slots in the evaluation set"));
    }
    let ks = ks_distance(&empirical_cdf(&predicted, "predicted")?, &empirical_cdf(&reference, "reference")?);
    Ok(Evaluation {
        architecture: model.architecture(),
        test_samples: test.len(),
        test_rmse,
        ks_distance: ks,
        predicted,
        reference,
    })
}

/// The held-out test split a checkpoint was trained against.
pub fn test_split(data: &Dataset, meta: &CheckpointMeta) -> Result<Dataset> {
    if meta.dataset_config_hash != data.manifest.config_hash {
        return Err(Error::config(format!(
            "checkpoint was trained on dataset {}, not {}",
            meta.dataset_config_hash, data.manifest.config_hash
        )));
    }
    let idx = split_indices(data.len(), &SplitSpec::standard(meta.split_seed))?;
    Ok(data.select(&idx.test))
}

/// Loads a checkpoint and a dataset, evaluates on the checkpoint's test split
/// and writes `evaluation.json` and `cdf.csv` into `out_dir`.
pub fn evaluate_files(model_path: &Path, dataset_path: &Path, out_dir: &Path) -> Result<Evaluation> {
    let (model, meta) = read_checkpoint(model_path)?;
    let data = read_dataset(dataset_path)?;
    let test = test_split(&data, &meta)?;
    let eval = evaluate_model(&model, &test)?;
    fs::create_dir_all(out_dir)?;
    let hash = &data.manifest.config_hash;
    write_evaluation_json(&out_dir.join(EVALUATION_FILE), hash, std::slice::from_ref(&eval))?;
    let label = model.architecture().map_or("model", |a| a.label());
    let series = [empirical_cdf(&eval.reference, "simulator")?, empirical_cdf(&eval.predicted, label)?];
    write_tagged_csv(&out_dir.join(CDF_FILE), hash, |w| write_cdf_csv(w, &series))?;
    Ok(eval)
}

fn write_evaluation_json(path: &Path, config_hash: &str, evals: &[Evaluation]) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        config_hash: &'a str,
        evaluations: &'a [Evaluation],
    }
    fs::write(path, serde_json::to_string_pretty(&Doc { config_hash, evaluations: evals })?)?;
    Ok(())
}

/// Per-UE SE of every setup of `cfg` under `combiner`, pooled into one CDF.
pub fn se_cdf(cfg: &CaseConfig, combiner: CombinerKind) -> Result<(CdfSeries, Vec<SeReport>, Manifest)> {
    let net = &cfg.network;
    net.validate()?;
    let serving = cfg.case.serving_mode();
    let reports =
        par::try_map_range(net.num_setups, |s| simulate_setup(net, combiner, serving, cfg.seed, s).map(|o| o.report))?;
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.se.iter().copied()).collect();
    let manifest = Manifest::new(cfg.case, net, cfg.seeds(), cfg.target_mode, combiner, serving);
    Ok((empirical_cdf(&pooled, combiner_label(combiner))?, reports, manifest))
}

pub fn write_se_cdf(cfg: &CaseConfig, combiner: CombinerKind, path: &Path) -> Result<CdfSeries> {
    let (series, _, manifest) = se_cdf(cfg, combiner)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_tagged_csv(path, &manifest.config_hash, |w| write_cdf_csv(w, std::slice::from_ref(&series)))?;
    Ok(series)
}

fn combiner_label(kind: CombinerKind) -> &'static str {
    match kind {
        CombinerKind::Mr => "MR",
        CombinerKind::LpMmse => "LP-MMSE",
    }
}

/// Everything a case reproduction produced.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
    pub histories: Vec<(ArchitectureName, History)>,
    pub evaluations: Vec<Evaluation>,
    /// Conventional-combiner CDF first, then one per surrogate.
    pub cdfs: Vec<CdfSeries>,
}

/// assemble → split → train dense → train conv → evaluate → tables and CDFs.
///
/// On failure the error names the stage and an `INCOMPLETE` marker is left
/// in `out_dir`; a successful run removes any stale marker.
pub fn reproduce_case(cfg: &CaseConfig, out_dir: &Path) -> Result<Bundle> {
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(INCOMPLETE_FILE);
    fs::write(&marker, "reproduction in progress\n")?;
    match reproduce_inner(cfg, out_dir) {
        Ok(bundle) => {
            fs::remove_file(&marker)?;
            Ok(bundle)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn reproduce_inner(cfg: &CaseConfig, out_dir: &Path) -> Result<Bundle> {
    let assembly = stage("assemble", assemble_dataset(cfg.case, &cfg.network, cfg.seeds(), cfg.target_mode))?;
    stage("write dataset", write_generated(&assembly, out_dir))?;
    let data = &assembly.dataset;
    let hash = data.manifest.config_hash.clone();
    let split = cfg.split();
    let (_, _, test) = stage("split", split_dataset(data, &split))?;

    let mut records = Vec::new();
    let mut histories = Vec::new();
    let mut evaluations = Vec::new();
    let pooled: Vec<f64> = assembly.setups.iter().flat_map(|s| s.report.se.iter().copied()).collect();
    let mut cdfs = vec![stage("cdf", empirical_cdf(&pooled, combiner_label(cfg.case.combiner())))?];
    for arch in [ArchitectureName::Dense, ArchitectureName::Conv] {
        let name = format!("train {}", arch.label());
        let trained = stage(&name, train_model(data, arch, &cfg.schedule, &split, cfg.init_seed(arch)))?;
        stage(&name, save_trained(&trained, &out_dir.join(checkpoint_file(arch)), &out_dir.join(history_file(arch))))?;
        let eval = stage(&format!("evaluate {}", arch.label()), evaluate_model(&trained.model, &test))?;
        cdfs.push(stage("cdf", empirical_cdf(&eval.predicted, arch.label()))?);
        records.push(trained.record);
        histories.push((arch, trained.history));
        evaluations.push(eval);
    }
    stage("report", write_tagged_csv(&out_dir.join(RESULTS_FILE), &hash, |w| write_results_csv(w, &records)))?;
    stage("report", write_tagged_csv(&out_dir.join(CDF_FILE), &hash, |w| write_cdf_csv(w, &cdfs)))?;
    stage("report", write_evaluation_json(&out_dir.join(EVALUATION_FILE), &hash, &evaluations))?;
    Ok(Bundle { dir: out_dir.to_path_buf(), manifest: data.manifest.clone(), records, histories, evaluations, cdfs })
}
