//! MR and LP-MMSE receive combining and Monte-Carlo uplink spectral
//! efficiency.
//!
//! Each AP forms local combiners for the UEs it serves; a UE's collective
//! combiner stacks the blocks of its serving APs, which is the serving mask
//! of the DCC matrix. SE is evaluated with the use-and-then-forget bound with
//! expectations replaced by sample means over the setup's realizations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::association::DccAssignment;
use crate::channel::{ChannelSet, ChannelTensor};
use crate::geometry::NetworkConfig;
use crate::linalg::{hermitian_inverse, identity, trace_re, CMatrix, CVector, C64};
use crate::par;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CombinerKind {
    #[serde(rename = "mr")]
    Mr,
    #[serde(rename = "lpmmse")]
    LpMmse,
}

impl CombinerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mr" => Ok(CombinerKind::Mr),
            "lpmmse" | "lp-mmse" => Ok(CombinerKind::LpMmse),
            other => Err(Error::config(format!("unknown combiner '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CombinerKind::Mr => "mr",
            CombinerKind::LpMmse => "lpmmse",
        }
    }
}

/// How `E{‖ĥ_up‖²}` in the MR normalisation is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MrNormalization {
    /// Sample mean over the setup's realizations.
    #[default]
    SampleMean,
    /// `tr(R_up − C_up)`.
    Analytic,
}

/// Which achievable-SE expression to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SeBound {
    /// Use-and-then-forget: only long-term averages of the effective channel.
    #[default]
    UseAndForget,
    /// Per-realization SINR conditioned on the channel estimates,
    /// averaged as `E{log2(1 + SINR)}`.
    SideInformation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerConfig {
    pub ue_powers: Vec<f64>,
    /// MR power coefficients ρ_up, indexed `u * P + p`.
    pub rho: Vec<f64>,
    pub noise_power: f64,
}

impl PowerConfig {
    /// Equal UE powers from `cfg` and ρ_up = 1 everywhere.
    pub fn uniform(cfg: &NetworkConfig) -> Self {
        PowerConfig {
            ue_powers: vec![cfg.ul_power_w; cfg.num_ues],
            rho: vec![1.0; cfg.num_ues * cfg.num_aps],
            noise_power: cfg.noise_power_w,
        }
    }

    /// The same link budget in noise-normalised units: unit noise power and
    /// UE powers in mW. Pair with gains scaled by [`Self::gain_scale`]; every
    /// SINR is unchanged, but channels and estimates come out in units of the
    /// noise amplitude rather than of volts.
    pub fn noise_normalized(cfg: &NetworkConfig) -> Self {
        PowerConfig {
            ue_powers: vec![cfg.ul_power_w * 1e3; cfg.num_ues],
            rho: vec![1.0; cfg.num_ues * cfg.num_aps],
            noise_power: 1.0,
        }
    }

    /// Gain factor matching [`Self::noise_normalized`]: `1 / σ²[mW]`.
    pub fn gain_scale(cfg: &NetworkConfig) -> f64 {
        1.0 / (cfg.noise_power_w * 1e3)
    }

    pub fn rho(&self, ue: usize, ap: usize, num_aps: usize) -> f64 {
        self.rho[ue * num_aps + ap]
    }

    fn validate(&self, num_ues: usize, num_aps: usize) -> Result<()> {
        if self.ue_powers.len() != num_ues || self.rho.len() != num_ues * num_aps {
            return Err(Error::shape("power configuration does not match network size"));
        }
        if self.ue_powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::config("UE powers must be positive"));
        }
        if self.rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("MR coefficients must be non-negative"));
        }
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            return Err(Error::config("noise power must be positive"));
        }
        Ok(())
    }
}

/// MR combiner `√(ρ / E{‖ĥ‖²}) · ĥ`.
pub fn mr_combiner(h_hat: &CVector, rho: f64, mean_sq: f64) -> Result<CVector> {
    if !(mean_sq > 0.0 && mean_sq.is_finite()) {
        return Err(Error::DegenerateChannel(format!("MR normalisation needs E{{|h|^2}} > 0, got {mean_sq}")));
    }
    Ok(h_hat * C64::new((rho / mean_sq).sqrt(), 0.0))
}

/// One served UE's estimate at an AP, as input to [`lpmmse_combiner`].
#[derive(Clone, Copy, Debug)]
pub struct ServedEstimate<'a> {
    pub h_hat: &'a CVector,
    pub error_cov: &'a CMatrix,
    pub power: f64,
}

/// LP-MMSE combiner `p_u (Σ_j p_j (ĥ_j ĥ_jᴴ + C_j) + σ² I)⁻¹ ĥ_u` for the UE at
/// position `target` of `served`.
pub fn lpmmse_combiner(served: &[ServedEstimate<'_>], target: usize, noise_power: f64) -> Result<CVector> {
    let Some(me) = served.get(target) else {
        return Err(Error::config(format!("target {target} is not among the {} served UEs", served.len())));
    };
    if noise_power.is_nan() || noise_power <= 0.0 {
        return Err(Error::config("noise power must be positive"));
    }
    let n = me.h_hat.len();
    let mut m = identity(n) * C64::new(noise_power, 0.0);
    for s in served {
        m += (s.h_hat * s.h_hat.adjoint() + s.error_cov) * C64::new(s.power, 0.0);
    }
    let inv = hermitian_inverse(&m)?;
    Ok(inv * me.h_hat * C64::new(me.power, 0.0))
}

/// Per-UE stacks of per-AP combiner blocks for every realization.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveCombiners {
    pub kind: CombinerKind,
    antennas: usize,
    realizations: usize,
    /// `blocks[u]` = `(ap, flat[o * N + k])` for each `ap ∈ χ_u`, ascending.
    blocks: Vec<Vec<(usize, Vec<C64>)>>,
}

impl CollectiveCombiners {
    pub fn num_ues(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, ue: usize, ap: usize) -> Option<&[C64]> {
        self.blocks[ue].iter().find(|(p, _)| *p == ap).map(|(_, v)| v.as_slice())
    }

    /// Combiner block of `ue` at `ap` in realization `o`.
    pub fn vector(&self, ue: usize, ap: usize, o: usize) -> Option<CVector> {
        let n = self.antennas;
        self.block(ue, ap).map(|v| CVector::from_column_slice(&v[o * n..(o + 1) * n]))
    }

    /// Multiplies the collective combiner of `ue` by `alpha`.
    pub fn scale_ue(&mut self, ue: usize, alpha: f64) {
        for (_, v) in &mut self.blocks[ue] {
            v.iter_mut().for_each(|z| *z *= alpha);
        }
    }

    /// Multiplies one AP's block of `ue` by a per-realization factor.
    pub fn scale_block_per_realization(&mut self, ue: usize, ap: usize, factor: impl Fn(usize) -> f64) {
        let n = self.antennas;
        if let Some((_, v)) = self.blocks[ue].iter_mut().find(|(p, _)| *p == ap) {
            for (i, z) in v.iter_mut().enumerate() {
                *z *= factor(i / n);
            }
        }
    }
}

pub fn build_combiners(
    channels: &ChannelSet,
    assignment: &DccAssignment,
    powers: &PowerConfig,
    kind: CombinerKind,
    normalization: MrNormalization,
) -> Result<CollectiveCombiners> {
    let (num_aps, num_ues) = (channels.num_aps(), channels.num_ues());
    let (n, realizations) = (channels.antennas(), channels.realizations());
    if assignment.num_aps() != num_aps || assignment.num_ues() != num_ues {
        return Err(Error::shape("assignment does not match channel set"));
    }
    powers.validate(num_ues, num_aps)?;
    let h_hat = &channels.h_hat;

    // per_ap[p] = [(u, flat combiners)] for u ∈ S_p.
    let per_ap = par::try_map_range(num_aps, |p| -> Result<Vec<(usize, Vec<C64>)>> {
        let served = assignment.served_by(p);
        match kind {
            CombinerKind::Mr => served
                .iter()
                .map(|&u| {
                    let mean_sq = match normalization {
                        MrNormalization::SampleMean => {
                            (0..realizations).map(|o| h_hat.vector(p, o, u).norm_squared()).sum::<f64>()
                                / realizations as f64
                        }
                        MrNormalization::Analytic => {
                            trace_re(&(channels.correlation.get(u, p) - channels.error_cov.get(u, p)))
                        }
                    };
                    let mut flat = Vec::with_capacity(realizations * n);
                    for o in 0..realizations {
                        let est = h_hat.vector(p, o, u);
                        if mean_sq > 0.0 {
                            flat.extend(mr_combiner(&est, powers.rho(u, p, num_aps), mean_sq)?.iter());
                        } else {
                            flat.extend(std::iter::repeat_n(C64::new(0.0, 0.0), n));
                        }
                    }
                    Ok((u, flat))
                })
                .collect(),
            CombinerKind::LpMmse => {
                let mut base = identity(n) * C64::new(powers.noise_power, 0.0);
                for &j in &served {
                    base += channels.error_cov.get(j, p) * C64::new(powers.ue_powers[j], 0.0);
                }
                let mut out: Vec<(usize, Vec<C64>)> =
                    served.iter().map(|&u| (u, Vec::with_capacity(realizations * n))).collect();
                for o in 0..realizations {
                    let ests: Vec<CVector> = served.iter().map(|&j| h_hat.vector(p, o, j)).collect();
                    let mut m = base.clone();
                    for (&j, e) in served.iter().zip(&ests) {
                        m += e * e.adjoint() * C64::new(powers.ue_powers[j], 0.0);
                    }
                    let inv = hermitian_inverse(&m).map_err(|e| Error::Numerical(format!("LP-MMSE at AP {p}: {e}")))?;
                    for ((u, flat), e) in out.iter_mut().zip(&ests) {
                        let v = &inv * e * C64::new(powers.ue_powers[*u], 0.0);
                        flat.extend(v.iter());
                    }
                }
                Ok(out)
            }
        }
    })?;

    let mut blocks: Vec<Vec<(usize, Vec<C64>)>> = vec![Vec::new(); num_ues];
    for (p, list) in per_ap.into_iter().enumerate() {
        for (u, flat) in list {
            blocks[u].push((p, flat));
        }
    }
    Ok(CollectiveCombiners { kind, antennas: n, realizations, blocks })
}

/// Per-UE uplink SE for one setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub setup: usize,
    pub combiner: CombinerKind,
    pub prelog: f64,
    /// bit/s/Hz, one entry per UE.
    pub se: Vec<f64>,
    /// UEs whose SINR estimate was clamped to zero.
    pub clamped: usize,
}

impl SeReport {
    pub fn mean(&self) -> f64 {
        self.se.iter().sum::<f64>() / self.se.len() as f64
    }
}

/// Evaluates SE for given combiners and true channels.
pub fn se_from_combiners(
    h: &ChannelTensor,
    channels: &ChannelSet,
    combiners: &CollectiveCombiners,
    powers: &PowerConfig,
    prelog: f64,
    bound: SeBound,
    setup: usize,
) -> Result<SeReport> {
    let (num_ues, n, realizations) = (h.num_ues(), h.antennas(), h.realizations());
    if combiners.num_ues() != num_ues || combiners.realizations != realizations || combiners.antennas != n {
        return Err(Error::shape("combiners do not match channel tensor"));
    }
    if realizations < 2 {
        return Err(Error::config("SE estimation needs at least two realizations"));
    }
    powers.validate(num_ues, h.num_aps())?;
    let sinrs = par::map_range(num_ues, |u| match bound {
        SeBound::UseAndForget => uatf_sinr(h, combiners, powers, u).map(|s| (prelog * (1.0 + s).log2(), s == 0.0)),
        SeBound::SideInformation => Some((prelog * side_information_rate(channels, combiners, powers, u), false)),
    });
    let mut se = Vec::with_capacity(num_ues);
    let mut clamped = 0;
    for s in sinrs {
        match s {
            Some((v, _)) => se.push(v),
            None => {
                clamped += 1;
                se.push(0.0);
            }
        }
    }
    Ok(SeReport { setup, combiner: combiners.kind, prelog, se, clamped })
}

/// Returns `None` when the estimated denominator is not positive.
fn uatf_sinr(h: &ChannelTensor, comb: &CollectiveCombiners, powers: &PowerConfig, u: usize) -> Option<f64> {
    let (num_ues, n, realizations) = (h.num_ues(), h.antennas(), h.realizations());
    let blocks = &comb.blocks[u];
    let mut signal = C64::new(0.0, 0.0);
    let mut received = vec![0.0; num_ues];
    let mut combiner_norm = 0.0;
    let mut z = vec![C64::new(0.0, 0.0); num_ues];
    for o in 0..realizations {
        z.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for (p, flat) in blocks {
            for k in 0..n {
                let vc = flat[o * n + k].conj();
                combiner_norm += vc.norm_sqr();
                for (zj, hj) in z.iter_mut().zip(h.row(*p, k, o)) {
                    *zj += vc * hj;
                }
            }
        }
        signal += z[u];
        for (acc, zj) in received.iter_mut().zip(&z) {
            *acc += zj.norm_sqr();
        }
    }
    let inv_o = 1.0 / realizations as f64;
    let numerator = powers.ue_powers[u] * (signal * inv_o).norm_sqr();
    if numerator == 0.0 {
        return Some(0.0);
    }
    let total: f64 = received.iter().zip(&powers.ue_powers).map(|(r, p)| p * r * inv_o).sum();
    let denominator = total - numerator + powers.noise_power * combiner_norm * inv_o;
    if denominator > 0.0 && denominator.is_finite() {
        Some(numerator / denominator)
    } else {
        None
    }
}

fn side_information_rate(channels: &ChannelSet, comb: &CollectiveCombiners, powers: &PowerConfig, u: usize) -> f64 {
    let (num_ues, realizations) = (channels.num_ues(), channels.realizations());
    let blocks = &comb.blocks[u];
    let mut rate = 0.0;
    for o in 0..realizations {
        let mut vh = vec![C64::new(0.0, 0.0); num_ues];
        let mut error_term = 0.0;
        let mut combiner_norm = 0.0;
        for (p, _) in blocks {
            let v = comb.vector(u, *p, o).expect("block exists");
            combiner_norm += v.norm_squared();
            for (j, acc) in vh.iter_mut().enumerate() {
                *acc += v.dotc(&channels.h_hat.vector(*p, o, j));
                let cv = channels.error_cov.get(j, *p) * &v;
                error_term += powers.ue_powers[j] * v.dotc(&cv).re;
            }
        }
        let signal = powers.ue_powers[u] * vh[u].norm_sqr();
        let interference: f64 = (0..num_ues).filter(|&j| j != u).map(|j| powers.ue_powers[j] * vh[j].norm_sqr()).sum();
        let denominator = interference + error_term + powers.noise_power * combiner_norm;
        if signal > 0.0 && denominator > 0.0 {
            rate += (1.0 + signal / denominator).log2();
        }
    }
    rate / realizations as f64
}

/// Use-and-then-forget SE per UE with sample-mean MR normalisation.
pub fn compute_uplink_se(
    channels: &ChannelSet,
    assignment: &DccAssignment,
    powers: &PowerConfig,
    kind: CombinerKind,
    cfg: &NetworkConfig,
    setup: usize,
) -> Result<SeReport> {
    let combiners = build_combiners(channels, assignment, powers, kind, MrNormalization::SampleMean)?;
    se_from_combiners(&channels.h, channels, &combiners, powers, cfg.prelog(), SeBound::UseAndForget, setup)
}

/// Sanity ceiling `prelog · log2(1 + p_u · mean‖h_u,χ_u‖² / σ²)`, which the
/// use-and-then-forget SE never exceeds.
pub fn se_upper_bound(
    h: &ChannelTensor,
    assignment: &DccAssignment,
    powers: &PowerConfig,
    prelog: f64,
    ue: usize,
) -> f64 {
    let o = h.realizations();
    let energy: f64 = assignment
        .serving_set(ue)
        .iter()
        .map(|&p| (0..o).map(|i| h.vector(p, i, ue).norm_squared()).sum::<f64>())
        .sum::<f64>()
        / o as f64;
    prelog * (1.0 + powers.ue_powers[ue] * energy / powers.noise_power).log2()
}

/// Writes `setup,ue,combiner,se_bits_per_hz` rows.
pub fn write_se_csv<W: Write>(out: W, reports: &[SeReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setup", "ue", "combiner", "se_bits_per_hz"])?;
    for r in reports {
        for (u, se) in r.se.iter().enumerate() {
            w.write_record([r.setup.to_string(), u.to_string(), r.combiner.name().into(), se.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
