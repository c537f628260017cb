//! Supervised dataset assembly: one sample per (setup, AP, antenna,
//! realization) with features `[Re ĥ row; Im ĥ row; G row]` and an SE target.

pub(crate) mod format;

pub use format::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, FORMAT_VERSION, MAGIC};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{build_serving_sets, DccAssignment, ServingMode};
use crate::channel::{ChannelSet, EstimationParams, Uncorrelated};
use crate::combining::{compute_uplink_se, CombinerKind, PowerConfig, SeReport};
use crate::geometry::{gain_map, place_network, CaseId, GainMap, NetworkConfig, Placement};
use crate::linalg::C64;
use crate::par;
use crate::rng::{derive_seed, substream, Stream};
use crate::{Error, Result};

pub const FEATURE_ORDERING_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Entry `s` is the mean SE over all UEs of setup `s`.
    SetupSummary,
    /// SE of the UEs served by the sample's AP in its setup, ascending UE
    /// index, zero-padded / truncated to the number of setups.
    ServedUe,
}

impl TargetMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "setup-summary" | "summary" => Ok(TargetMode::SetupSummary),
            "served-ue" | "served" => Ok(TargetMode::ServedUe),
            other => Err(Error::config(format!("unknown target mode '{other}'"))),
        }
    }
}

/// `[Re(ĥ); Im(ĥ); G]` for one `(setup, ap, antenna, realization)` row.
pub fn build_feature_vector(h_hat_row: &[C64], g_row: &[bool]) -> Result<Vec<f32>> {
    if h_hat_row.len() != g_row.len() {
        return Err(Error::shape(format!("estimate row has {} UEs, DCC row has {}", h_hat_row.len(), g_row.len())));
    }
    let mut out = Vec::with_capacity(3 * g_row.len());
    out.extend(h_hat_row.iter().map(|z| z.re as f32));
    out.extend(h_hat_row.iter().map(|z| z.im as f32));
    out.extend(g_row.iter().map(|&g| if g { 1.0f32 } else { 0.0 }));
    Ok(out)
}

/// Which sample a target is built for.
#[derive(Clone, Copy, Debug)]
pub struct TargetContext<'a> {
    pub setup: usize,
    /// UEs served by the sample's AP in `setup`, ascending.
    pub served_ues: &'a [usize],
}

pub fn build_target_vector(
    reports: &[SeReport],
    num_setups: usize,
    mode: TargetMode,
    ctx: TargetContext<'_>,
) -> Result<Vec<f32>> {
    for s in 0..num_setups {
        if !reports.iter().any(|r| r.setup == s) {
            return Err(Error::config(format!("missing SE report for setup {s}")));
        }
    }
    if let Some(first) = reports.first() {
        if reports.iter().any(|r| r.combiner != first.combiner) {
            return Err(Error::config("SE reports mix combiner kinds"));
        }
    }
    let report = |s: usize| reports.iter().find(|r| r.setup == s).expect("checked above");
    Ok(match mode {
        TargetMode::SetupSummary => (0..num_setups).map(|s| report(s).mean() as f32).collect(),
        TargetMode::ServedUe => {
            let r = report(ctx.setup);
            let mut y: Vec<f32> = ctx.served_ues.iter().take(num_setups).map(|&u| r.se[u] as f32).collect();
            y.resize(num_setups, 0.0);
            y
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub case: CaseId,
    #[serde(rename = "P")]
    pub num_aps: usize,
    #[serde(rename = "N")]
    pub antennas: usize,
    #[serde(rename = "U")]
    pub num_ues: usize,
    #[serde(rename = "O")]
    pub realizations: usize,
    #[serde(rename = "S")]
    pub setups: usize,
    pub seeds: Seeds,
    pub target_mode: TargetMode,
    pub combiner: CombinerKind,
    pub serving_mode: ServingMode,
    pub feature_ordering_version: u32,
    pub config: NetworkConfig,
    pub config_hash: String,
}

impl Manifest {
    pub fn new(
        case: CaseId,
        config: &NetworkConfig,
        seeds: Seeds,
        target_mode: TargetMode,
        combiner: CombinerKind,
        serving_mode: ServingMode,
    ) -> Self {
        let mut m = Manifest {
            case,
            num_aps: config.num_aps,
            antennas: config.antennas_per_ap,
            num_ues: config.num_ues,
            realizations: config.num_realizations,
            setups: config.num_setups,
            seeds,
            target_mode,
            combiner,
            serving_mode,
            feature_ordering_version: FEATURE_ORDERING_VERSION,
            config: config.clone(),
            config_hash: String::new(),
        };
        m.config_hash = m.compute_hash();
        m
    }

    /// SHA-256 (hex) of the canonical JSON of every field except the hash.
    pub fn compute_hash(&self) -> String {
        let mut blank = self.clone();
        blank.config_hash.clear();
        let canonical = serde_json::to_vec(&blank).expect("manifest always serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.num_ues
    }

    pub fn sample_count(&self) -> usize {
        self.num_aps * self.antennas * self.realizations * self.setups
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub setup: usize,
    pub ap: usize,
    pub antenna: usize,
    pub realization: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub feature_dim: usize,
    pub target_dim: usize,
    /// Row-major, `len() × feature_dim`.
    pub features: Vec<f32>,
    /// Row-major, `len() × target_dim`.
    pub targets: Vec<f32>,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn target_row(&self, i: usize) -> &[f32] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    /// Copies the listed rows, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.feature_dim);
        let mut targets = Vec::with_capacity(rows.len() * self.target_dim);
        for &i in rows {
            features.extend_from_slice(self.feature_row(i));
            targets.extend_from_slice(self.target_row(i));
        }
        Dataset {
            manifest: self.manifest.clone(),
            feature_dim: self.feature_dim,
            target_dim: self.target_dim,
            features,
            targets,
            provenance: rows.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    /// Number of target slots holding a real served-UE value (the rest are
    /// padding). Derived from the DCC part of the features.
    pub fn served_slots(&self, i: usize) -> usize {
        match self.manifest.target_mode {
            TargetMode::SetupSummary => self.target_dim,
            TargetMode::ServedUe => {
                let u = self.manifest.num_ues;
                let served = self.feature_row(i)[2 * u..].iter().filter(|&&g| g == 1.0).count();
                served.min(self.target_dim)
            }
        }
    }
}

/// Canonical sample order: setup, AP, antenna, realization (fastest).
pub fn canonical_provenance(m: &Manifest) -> Vec<Provenance> {
    let mut out = Vec::with_capacity(m.sample_count());
    for setup in 0..m.setups {
        for ap in 0..m.num_aps {
            for antenna in 0..m.antennas {
                for realization in 0..m.realizations {
                    out.push(Provenance { setup, ap, antenna, realization });
                }
            }
        }
    }
    out
}

/// Everything computed for one Monte-Carlo setup.
#[derive(Clone, Debug)]
pub struct SetupOutcome {
    pub placement: Placement,
    pub gains: GainMap,
    pub assignment: DccAssignment,
    pub report: SeReport,
    pub channels: ChannelSet,
}

/// Runs geometry → association → channels → estimation → SE for one setup.
/// Channels are generated in noise-normalised units (see
/// [`PowerConfig::noise_normalized`]); `gains` stays in physical units.
pub fn simulate_setup(
    cfg: &NetworkConfig,
    combiner: CombinerKind,
    serving: ServingMode,
    master_seed: u64,
    setup: usize,
) -> Result<SetupOutcome> {
    cfg.validate()?;
    let seed = derive_seed(master_seed, Stream::Setup, &[setup as u64]);
    let placement = place_network(cfg, cfg.ap_placement, seed)?;
    let gains = gain_map(cfg, &placement, seed)?;
    let assignment = build_serving_sets(&gains, cfg, serving)?;
    let powers = PowerConfig::noise_normalized(cfg);
    let channels = ChannelSet::generate(
        &gains.scaled(PowerConfig::gain_scale(cfg)),
        cfg.antennas_per_ap,
        cfg.num_realizations,
        &assignment.pilot_book(),
        &EstimationParams { ue_powers: &powers.ue_powers, noise_power: powers.noise_power },
        &Uncorrelated,
        seed,
    )?;
    let report = compute_uplink_se(&channels, &assignment, &powers, combiner, cfg, setup)?;
    Ok(SetupOutcome { placement, gains, assignment, report, channels })
}

/// Lightweight per-setup results kept after assembly.
#[derive(Clone, Debug)]
pub struct SetupSummary {
    pub placement: Placement,
    pub gains: GainMap,
    pub assignment: DccAssignment,
    pub report: SeReport,
}

#[derive(Clone, Debug)]
pub struct Assembly {
    pub dataset: Dataset,
    pub setups: Vec<SetupSummary>,
}

impl Assembly {
    pub fn reports(&self) -> Vec<SeReport> {
        self.setups.iter().map(|s| s.report.clone()).collect()
    }
}

/// Builds the full dataset for `case` with the (possibly overridden) `cfg`.
/// Combiner and serving mode come from the case.
pub fn assemble_dataset(case: CaseId, cfg: &NetworkConfig, seeds: Seeds, target_mode: TargetMode) -> Result<Assembly> {
    let combiner = case.combiner();
    let serving = case.serving_mode();
    cfg.validate()?;
    let manifest = Manifest::new(case, cfg, seeds, target_mode, combiner, serving);
    let (num_aps, n, o, u) = (cfg.num_aps, cfg.antennas_per_ap, cfg.num_realizations, cfg.num_ues);

    let per_setup = par::try_map_range(cfg.num_setups, |s| -> Result<(SetupSummary, Vec<f32>)> {
        let out = simulate_setup(cfg, combiner, serving, seeds.master, s)?;
        let mut feats = Vec::with_capacity(num_aps * n * o * 3 * u);
        for p in 0..num_aps {
            let g_row = out.assignment.g_row(p);
            for k in 0..n {
                for r in 0..o {
                    feats.extend(build_feature_vector(out.channels.h_hat.row(p, k, r), g_row)?);
                }
            }
        }
        let summary =
            SetupSummary { placement: out.placement, gains: out.gains, assignment: out.assignment, report: out.report };
        Ok((summary, feats))
    })?;

    let reports: Vec<SeReport> = per_setup.iter().map(|(s, _)| s.report.clone()).collect();
    let target_dim = cfg.num_setups;
    let mut features = Vec::with_capacity(manifest.sample_count() * 3 * u);
    let mut targets = Vec::with_capacity(manifest.sample_count() * target_dim);
    for (s, (summary, feats)) in per_setup.iter().enumerate() {
        features.extend_from_slice(feats);
        for p in 0..num_aps {
            let served = summary.assignment.served_by(p);
            let y = build_target_vector(
                &reports,
                cfg.num_setups,
                target_mode,
                TargetContext { setup: s, served_ues: &served },
            )?;
            for _ in 0..n * o {
                targets.extend_from_slice(&y);
            }
        }
    }
    let provenance = canonical_provenance(&manifest);
    Ok(Assembly {
        dataset: Dataset { feature_dim: manifest.feature_dim(), target_dim, manifest, features, targets, provenance },
        setups: per_setup.into_iter().map(|(s, _)| s).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> Self {
        SplitSpec { test_fraction: 0.2, validation_fraction_of_train: 0.03125, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(train, validation, test)` sizes for `n` samples.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<(usize, usize, usize)> {
    for f in [spec.test_fraction, spec.validation_fraction_of_train] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(format!("split fraction {f} must lie in (0, 1)")));
        }
    }
    if n < 10 {
        return Err(Error::config(format!("dataset of {n} samples is too small to split")));
    }
    let test = (spec.test_fraction * n as f64).floor() as usize;
    let validation = (spec.validation_fraction_of_train * (n - test) as f64).floor() as usize;
    Ok((n - test - validation, validation, test))
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    let (_, validation, test) = split_sizes(n, spec)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(spec.seed, Stream::Split, &[n as u64]));
    Ok(SplitIndices {
        test: order[..test].to_vec(),
        validation: order[test..test + validation].to_vec(),
        train: order[test + validation..].to_vec(),
    })
}

/// Returns `(train, validation, test)`.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(ds.len(), spec)?;
    Ok((ds.select(&idx.train), ds.select(&idx.validation), ds.select(&idx.test)))
}
