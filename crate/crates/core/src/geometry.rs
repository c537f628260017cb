//! Network configuration, AP/UE placement, and large-scale fading.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::association::ServingMode;
use crate::combining::CombinerKind;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Pathloss at the 1 m reference distance, in dB.
pub const PATHLOSS_AT_1M_DB: f64 = -30.5;
/// Pathloss slope in dB per decade of distance (exponent 3.67).
pub const PATHLOSS_SLOPE_DB: f64 = 36.7;
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementMode {
    Grid,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_ues: usize,
    pub side_length_m: f64,
    pub bandwidth_hz: f64,
    pub pilot_length: usize,
    pub coherence_block: usize,
    pub ul_power_w: f64,
    pub noise_power_w: f64,
    pub serving_threshold_db: f64,
    pub num_setups: usize,
    pub num_realizations: usize,
    pub shadow_std_db: f64,
    pub ap_placement: PlacementMode,
    /// Caps every AP at a single served UE instead of one UE per pilot.
    #[serde(default)]
    pub strict_one_ue_per_ap: bool,
}

/// Thermal noise power in watts for the given bandwidth and noise figure.
pub fn thermal_noise_w(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

impl NetworkConfig {
    /// Base configuration shared by all presets: 20 MHz, 100 mW uplink,
    /// 7 dB noise figure, τ_c = 200, τ_p = 10, −40 dB serving threshold.
    pub fn base(num_aps: usize, antennas_per_ap: usize, num_ues: usize) -> Self {
        let bandwidth_hz = 20e6;
        let side = (num_aps as f64).sqrt();
        NetworkConfig {
            num_aps,
            antennas_per_ap,
            num_ues,
            side_length_m: 2000.0,
            bandwidth_hz,
            pilot_length: 10,
            coherence_block: 200,
            ul_power_w: 0.1,
            noise_power_w: thermal_noise_w(bandwidth_hz, 7.0),
            serving_threshold_db: -40.0,
            num_setups: 12,
            num_realizations: 100,
            shadow_std_db: 4.0,
            ap_placement: if side.fract() == 0.0 { PlacementMode::Grid } else { PlacementMode::Uniform },
            strict_one_ue_per_ap: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_ues", self.num_ues),
            ("pilot_length", self.pilot_length),
            ("num_setups", self.num_setups),
            ("num_realizations", self.num_realizations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.pilot_length >= self.coherence_block {
            return Err(Error::config(format!(
                "pilot length {} must be shorter than the coherence block {}",
                self.pilot_length, self.coherence_block
            )));
        }
        let finite_positive = [
            ("side_length_m", self.side_length_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("ul_power_w", self.ul_power_w),
            ("noise_power_w", self.noise_power_w),
        ];
        for (name, v) in finite_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive and finite")));
            }
        }
        if !(self.shadow_std_db.is_finite() && self.shadow_std_db >= 0.0) {
            return Err(Error::config("shadow_std_db must be non-negative"));
        }
        if !self.serving_threshold_db.is_finite() {
            return Err(Error::config("serving_threshold_db must be finite"));
        }
        Ok(())
    }

    pub fn prelog(&self) -> f64 {
        1.0 - self.pilot_length as f64 / self.coherence_block as f64
    }
}

/// Named presets. Cases 1–3 use the 2 km × 2 km area; `Desk` is a small
/// network for quick runs and tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "desk")]
    Desk,
}

impl CaseId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" | "case1" => Ok(CaseId::One),
            "2" | "case2" => Ok(CaseId::Two),
            "3" | "case3" => Ok(CaseId::Three),
            "desk" => Ok(CaseId::Desk),
            other => Err(Error::config(format!("unknown case '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::One => "1",
            CaseId::Two => "2",
            CaseId::Three => "3",
            CaseId::Desk => "desk",
        }
    }

    pub fn config(self) -> NetworkConfig {
        match self {
            CaseId::One | CaseId::Two => NetworkConfig::base(256, 1, 80),
            CaseId::Three => NetworkConfig::base(32, 8, 80),
            // Same AP density as the paper presets (125 m grid spacing).
            CaseId::Desk => NetworkConfig {
                side_length_m: 500.0,
                pilot_length: 4,
                num_setups: 4,
                num_realizations: 50,
                ..NetworkConfig::base(16, 1, 8)
            },
        }
    }

    pub fn combiner(self) -> CombinerKind {
        match self {
            CaseId::One => CombinerKind::Mr,
            _ => CombinerKind::LpMmse,
        }
    }

    pub fn serving_mode(self) -> ServingMode {
        match self {
            CaseId::One => ServingMode::AllServe,
            _ => ServingMode::Scalable,
        }
    }
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub ap_positions: Vec<(f64, f64)>,
    pub ue_positions: Vec<(f64, f64)>,
}

pub fn place_network(cfg: &NetworkConfig, mode: PlacementMode, seed: u64) -> Result<Placement> {
    cfg.validate()?;
    let side = cfg.side_length_m;
    let ap_positions = match mode {
        PlacementMode::Grid => {
            let per_side = (cfg.num_aps as f64).sqrt().round() as usize;
            if per_side * per_side != cfg.num_aps {
                return Err(Error::config(format!(
                    "grid placement needs a perfect-square AP count, got {}",
                    cfg.num_aps
                )));
            }
            let spacing = side / per_side as f64;
            (0..cfg.num_aps)
                .map(|p| {
                    let (row, col) = (p / per_side, p % per_side);
                    ((col as f64 + 0.5) * spacing, (row as f64 + 0.5) * spacing)
                })
                .collect()
        }
        PlacementMode::Uniform => {
            let mut rng = substream(seed, Stream::Placement, &[0]);
            uniform_points(&mut rng, cfg.num_aps, side)
        }
    };
    let mut rng = substream(seed, Stream::Placement, &[1]);
    let ue_positions = uniform_points(&mut rng, cfg.num_ues, side);
    Ok(Placement { ap_positions, ue_positions })
}

fn uniform_points<R: Rng>(rng: &mut R, n: usize, side: f64) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side)).collect()
}

/// Log-distance pathloss plus a shadowing term, returned as a linear power
/// gain. Distances below [`MIN_DISTANCE_M`] are clamped.
pub fn large_scale_gain(distance_m: f64, shadow_db: f64) -> Result<f64> {
    if !distance_m.is_finite() || !shadow_db.is_finite() {
        return Err(Error::Numerical(format!("non-finite pathloss input (distance {distance_m}, shadow {shadow_db})")));
    }
    let d = distance_m.max(MIN_DISTANCE_M);
    let gain_db = PATHLOSS_AT_1M_DB - PATHLOSS_SLOPE_DB * d.log10() + shadow_db;
    Ok(10f64.powf(gain_db / 10.0))
}

/// Linear large-scale gains, P × U.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMap {
    num_aps: usize,
    num_ues: usize,
    beta: Vec<f64>,
}

impl GainMap {
    pub fn from_rows(num_aps: usize, num_ues: usize, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != num_aps * num_ues {
            return Err(Error::shape(format!(
                "gain table has {} entries, expected {}x{}",
                beta.len(),
                num_aps,
                num_ues
            )));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::Numerical("gains must be positive and finite".into()));
        }
        Ok(GainMap { num_aps, num_ues, beta })
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn get(&self, ap: usize, ue: usize) -> f64 {
        self.beta[ap * self.num_ues + ue]
    }

    /// Gains from every AP to `ue`.
    pub fn column(&self, ue: usize) -> Vec<f64> {
        (0..self.num_aps).map(|p| self.get(p, ue)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    /// Every gain multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> GainMap {
        GainMap { num_aps: self.num_aps, num_ues: self.num_ues, beta: self.beta.iter().map(|b| b * factor).collect() }
    }

    /// Keeps only the listed UEs, in the given order.
    pub fn select_ues(&self, ues: &[usize]) -> GainMap {
        let beta =
            (0..self.num_aps).flat_map(|p| ues.iter().map(move |&u| (p, u))).map(|(p, u)| self.get(p, u)).collect();
        GainMap { num_aps: self.num_aps, num_ues: ues.len(), beta }
    }
}

/// Gains for a placement with i.i.d. log-normal shadowing (σ from `cfg`).
pub fn gain_map(cfg: &NetworkConfig, placement: &Placement, seed: u64) -> Result<GainMap> {
    let shadow =
        Normal::new(0.0, cfg.shadow_std_db).map_err(|e| Error::config(format!("shadowing distribution: {e}")))?;
    let num_ues = placement.ue_positions.len();
    let mut beta = Vec::with_capacity(placement.ap_positions.len() * num_ues);
    for (p, &(ax, ay)) in placement.ap_positions.iter().enumerate() {
        let mut rng = substream(seed, Stream::Shadowing, &[p as u64]);
        for &(ux, uy) in &placement.ue_positions {
            let distance = ((ax - ux).powi(2) + (ay - uy).powi(2)).sqrt();
            let shadow_db = if cfg.shadow_std_db > 0.0 { shadow.sample(&mut rng) } else { 0.0 };
            beta.push(large_scale_gain(distance, shadow_db)?);
        }
    }
    GainMap::from_rows(placement.ap_positions.len(), num_ues, beta)
}

/// Writes `kind,index,x_m,y_m` rows for APs then UEs.
pub fn write_placement_csv<W: Write>(out: W, placement: &Placement) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "index", "x_m", "y_m"])?;
    let rows = placement
        .ap_positions
        .iter()
        .enumerate()
        .map(|(i, p)| ("ap", i, p))
        .chain(placement.ue_positions.iter().enumerate().map(|(i, p)| ("ue", i, p)));
    for (kind, i, (x, y)) in rows {
        w.write_record([kind.to_string(), i.to_string(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `p,u,beta_linear,beta_db` rows.
pub fn write_gains_csv<W: Write>(out: W, gains: &GainMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "u", "beta_linear", "beta_db"])?;
    for p in 0..gains.num_aps {
        for u in 0..gains.num_ues {
            let b = gains.get(p, u);
            w.write_record([p.to_string(), u.to_string(), b.to_string(), (10.0 * b.log10()).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
