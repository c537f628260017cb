//! Spatial correlation, correlated Rayleigh channel realizations, and MMSE
//! channel estimation from pilot observations.
//!
//! Channel tensors are laid out as `(ap, antenna, realization, ue)` with the UE
//! index fastest, so one `(ap, antenna, realization)` row across all UEs is a
//! contiguous slice.

use crate::geometry::GainMap;
use crate::linalg::{complex_normal, hermitian_inverse, identity, psd_sqrt, CMatrix, CVector, C64};
use crate::par;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Generator of per-link N × N spatial correlation matrices.
///
/// Implementations must return a Hermitian PSD matrix with trace `N·beta`.
pub trait CorrelationModel: Sync {
    fn correlation(&self, beta: f64, antennas: usize) -> Result<CMatrix>;
}

/// `R = beta · I_N`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Uncorrelated;

impl CorrelationModel for Uncorrelated {
    fn correlation(&self, beta: f64, antennas: usize) -> Result<CMatrix> {
        spatial_correlation(beta, antennas)
    }
}

/// Uncorrelated spatial correlation matrix `beta · I_N`.
pub fn spatial_correlation(beta: f64, antennas: usize) -> Result<CMatrix> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Numerical(format!("large-scale gain must be positive, got {beta}")));
    }
    if antennas == 0 {
        return Err(Error::config("antenna count must be at least 1"));
    }
    Ok(identity(antennas) * C64::new(beta, 0.0))
}

/// One N × N matrix per (UE, AP) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkMatrices {
    num_ues: usize,
    num_aps: usize,
    antennas: usize,
    mats: Vec<CMatrix>,
}

impl LinkMatrices {
    pub fn new(num_ues: usize, num_aps: usize, antennas: usize, mats: Vec<CMatrix>) -> Result<Self> {
        if mats.len() != num_ues * num_aps {
            return Err(Error::shape(format!("{} link matrices for {num_ues} UEs and {num_aps} APs", mats.len())));
        }
        if mats.iter().any(|m| m.nrows() != antennas || m.ncols() != antennas) {
            return Err(Error::shape(format!("link matrices must be {antennas}x{antennas}")));
        }
        Ok(LinkMatrices { num_ues, num_aps, antennas, mats })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn get(&self, ue: usize, ap: usize) -> &CMatrix {
        &self.mats[ue * self.num_aps + ap]
    }
}

/// Spatial correlations for every link of a gain map.
pub fn correlation_set(gains: &GainMap, antennas: usize, model: &dyn CorrelationModel) -> Result<LinkMatrices> {
    let (num_aps, num_ues) = (gains.num_aps(), gains.num_ues());
    let mut mats = Vec::with_capacity(num_aps * num_ues);
    for u in 0..num_ues {
        for p in 0..num_aps {
            mats.push(model.correlation(gains.get(p, u), antennas)?);
        }
    }
    LinkMatrices::new(num_ues, num_aps, antennas, mats)
}

/// Complex tensor indexed `(ap, antenna, realization, ue)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    num_aps: usize,
    antennas: usize,
    realizations: usize,
    num_ues: usize,
    data: Vec<C64>,
}

impl ChannelTensor {
    pub fn zeros(num_aps: usize, antennas: usize, realizations: usize, num_ues: usize) -> Self {
        ChannelTensor {
            num_aps,
            antennas,
            realizations,
            num_ues,
            data: vec![C64::new(0.0, 0.0); num_aps * antennas * realizations * num_ues],
        }
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    #[inline]
    fn index(&self, ap: usize, antenna: usize, realization: usize, ue: usize) -> usize {
        ((ap * self.antennas + antenna) * self.realizations + realization) * self.num_ues + ue
    }

    #[inline]
    pub fn get(&self, ap: usize, antenna: usize, realization: usize, ue: usize) -> C64 {
        self.data[self.index(ap, antenna, realization, ue)]
    }

    #[inline]
    pub fn set(&mut self, ap: usize, antenna: usize, realization: usize, ue: usize, value: C64) {
        let i = self.index(ap, antenna, realization, ue);
        self.data[i] = value;
    }

    /// All UEs' entries for one `(ap, antenna, realization)`.
    #[inline]
    pub fn row(&self, ap: usize, antenna: usize, realization: usize) -> &[C64] {
        let start = self.index(ap, antenna, realization, 0);
        &self.data[start..start + self.num_ues]
    }

    /// The N-vector `h_{ue,ap}` in one realization.
    pub fn vector(&self, ap: usize, realization: usize, ue: usize) -> CVector {
        CVector::from_iterator(self.antennas, (0..self.antennas).map(|n| self.get(ap, n, realization, ue)))
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn map_in_place(&mut self, f: impl Fn(C64) -> C64) {
        self.data.iter_mut().for_each(|z| *z = f(*z));
    }
}

/// Draws `realizations` i.i.d. CN(0, R) samples for every link. Link `(u, p)`
/// uses its own substream keyed by `(u, p)`.
pub fn realize_channels(r: &LinkMatrices, realizations: usize, seed: u64) -> Result<ChannelTensor> {
    if realizations == 0 {
        return Err(Error::config("at least one channel realization is required"));
    }
    let (num_ues, num_aps, n) = (r.num_ues, r.num_aps, r.antennas);
    let blocks = par::map_range(num_ues * num_aps, |link| {
        let (u, p) = (link / num_aps, link % num_aps);
        let root = psd_sqrt(r.get(u, p));
        let mut rng = substream(seed, Stream::Channel, &[u as u64, p as u64]);
        let mut out = Vec::with_capacity(realizations * n);
        for _ in 0..realizations {
            let z = CVector::from_iterator(n, (0..n).map(|_| complex_normal(&mut rng)));
            out.extend((&root * z).iter().copied());
        }
        out
    });
    let mut h = ChannelTensor::zeros(num_aps, n, realizations, num_ues);
    for (link, block) in blocks.into_iter().enumerate() {
        let (u, p) = (link / num_aps, link % num_aps);
        for o in 0..realizations {
            for k in 0..n {
                h.set(p, k, o, u, block[o * n + k]);
            }
        }
    }
    Ok(h)
}

/// Pilot index of every UE.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PilotBook {
    pilot_length: usize,
    pilot_of_ue: Vec<usize>,
}

impl PilotBook {
    pub fn new(pilot_length: usize, pilot_of_ue: Vec<usize>) -> Result<Self> {
        if pilot_length == 0 {
            return Err(Error::config("pilot length must be at least 1"));
        }
        if let Some(bad) = pilot_of_ue.iter().find(|&&t| t >= pilot_length) {
            return Err(Error::config(format!("pilot index {bad} out of range for {pilot_length} pilots")));
        }
        Ok(PilotBook { pilot_length, pilot_of_ue })
    }

    pub fn pilot_length(&self) -> usize {
        self.pilot_length
    }

    pub fn pilot(&self, ue: usize) -> usize {
        self.pilot_of_ue[ue]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.pilot_of_ue
    }

    /// UEs sharing pilot `t`, ascending.
    pub fn ues_on(&self, t: usize) -> Vec<usize> {
        (0..self.pilot_of_ue.len()).filter(|&u| self.pilot_of_ue[u] == t).collect()
    }
}

#[derive(Clone, Debug)]
pub struct EstimationParams<'a> {
    pub ue_powers: &'a [f64],
    pub noise_power: f64,
}

/// Output of [`mmse_estimate`]: estimates with the same layout as the true
/// channels, plus the N × N estimation-error covariance of every link.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimates {
    pub h_hat: ChannelTensor,
    pub error_cov: LinkMatrices,
}

/// MMSE estimation from despread pilot observations
/// `y_tp = Σ_{j on t} √(p_j τ_p) h_jp + n_tp`, `n_tp ~ CN(0, σ² I_N)`.
///
/// The noise for `(ap, pilot)` comes from substream `(ap, pilot)`, so UEs on
/// other pilots never influence an estimate.
pub fn mmse_estimate(
    h: &ChannelTensor,
    r: &LinkMatrices,
    pilots: &PilotBook,
    params: &EstimationParams<'_>,
    seed: u64,
) -> Result<Estimates> {
    let (num_aps, n, realizations, num_ues) = (h.num_aps, h.antennas, h.realizations, h.num_ues);
    if r.num_aps != num_aps || r.num_ues != num_ues || r.antennas != n {
        return Err(Error::shape("correlation set does not match channel tensor"));
    }
    if pilots.as_slice().len() != num_ues || params.ue_powers.len() != num_ues {
        return Err(Error::shape("pilot book / power vector length must equal UE count"));
    }
    if !(params.noise_power.is_finite() && params.noise_power > 0.0)
        || params.ue_powers.iter().any(|p| !(p.is_finite() && *p > 0.0))
    {
        return Err(Error::config("transmit and noise powers must be positive"));
    }
    let tau_p = pilots.pilot_length() as f64;
    let sigma2 = params.noise_power;
    let groups: Vec<Vec<usize>> = (0..pilots.pilot_length()).map(|t| pilots.ues_on(t)).collect();

    // Per AP: (estimates indexed [u][o*n + k], error covariances indexed [u]).
    let per_ap = par::try_map_range(num_aps, |p| -> Result<(Vec<Vec<C64>>, Vec<CMatrix>)> {
        let mut est = vec![Vec::new(); num_ues];
        let mut cov = vec![CMatrix::zeros(n, n); num_ues];
        for (t, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let mut psi = identity(n) * C64::new(sigma2, 0.0);
            for &j in group {
                psi += r.get(j, p) * C64::new(params.ue_powers[j] * tau_p, 0.0);
            }
            let psi_inv = hermitian_inverse(&psi)
                .map_err(|e| Error::Numerical(format!("pilot covariance at AP {p}, pilot {t}: {e}")))?;
            let mut rng = substream(seed, Stream::PilotNoise, &[p as u64, t as u64]);
            let noise_scale = C64::new(sigma2.sqrt(), 0.0);
            let mut y = Vec::with_capacity(realizations);
            for o in 0..realizations {
                let mut yo = CVector::from_iterator(n, (0..n).map(|_| complex_normal(&mut rng) * noise_scale));
                for &j in group {
                    let amp = C64::new((params.ue_powers[j] * tau_p).sqrt(), 0.0);
                    for k in 0..n {
                        yo[k] += amp * h.get(p, k, o, j);
                    }
                }
                y.push(yo);
            }
            for &u in group {
                let r_up = r.get(u, p);
                let pu_tau = params.ue_powers[u] * tau_p;
                let gain = r_up * &psi_inv * C64::new(pu_tau.sqrt(), 0.0);
                let mut flat = Vec::with_capacity(realizations * n);
                for yo in &y {
                    flat.extend((&gain * yo).iter().copied());
                }
                est[u] = flat;
                cov[u] = r_up - r_up * &psi_inv * r_up * C64::new(pu_tau, 0.0);
            }
        }
        Ok((est, cov))
    })?;

    let mut h_hat = ChannelTensor::zeros(num_aps, n, realizations, num_ues);
    let mut covs = vec![CMatrix::zeros(n, n); num_ues * num_aps];
    for (p, (est, cov)) in per_ap.into_iter().enumerate() {
        for (u, (flat, c)) in est.into_iter().zip(cov).enumerate() {
            for o in 0..realizations {
                for k in 0..n {
                    h_hat.set(p, k, o, u, flat[o * n + k]);
                }
            }
            covs[u * num_aps + p] = c;
        }
    }
    Ok(Estimates { h_hat, error_cov: LinkMatrices::new(num_ues, num_aps, n, covs)? })
}

/// True channels, estimates, and the second-order statistics behind them for
/// one Monte-Carlo setup.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    pub correlation: LinkMatrices,
    pub h: ChannelTensor,
    pub h_hat: ChannelTensor,
    pub error_cov: LinkMatrices,
}

impl ChannelSet {
    pub fn generate(
        gains: &GainMap,
        antennas: usize,
        realizations: usize,
        pilots: &PilotBook,
        params: &EstimationParams<'_>,
        model: &dyn CorrelationModel,
        seed: u64,
    ) -> Result<Self> {
        let correlation = correlation_set(gains, antennas, model)?;
        let h = realize_channels(&correlation, realizations, seed)?;
        let Estimates { h_hat, error_cov } = mmse_estimate(&h, &correlation, pilots, params, seed)?;
        Ok(ChannelSet { correlation, h, h_hat, error_cov })
    }

    pub fn num_aps(&self) -> usize {
        self.h.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.h.num_ues
    }

    pub fn antennas(&self) -> usize {
        self.h.antennas
    }

    pub fn realizations(&self) -> usize {
        self.h.realizations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_psd, trace_re};

    fn single_link(beta: f64, antennas: usize) -> LinkMatrices {
        LinkMatrices::new(1, 1, antennas, vec![spatial_correlation(beta, antennas).unwrap()]).unwrap()
    }

    #[test]
    fn uncorrelated_model_scales_identity() {
        let r = spatial_correlation(0.5, 1).unwrap();
        assert_eq!(r[(0, 0)], C64::new(0.5, 0.0));
        let r = spatial_correlation(2.0, 3).unwrap();
        assert_eq!(r, identity(3) * C64::new(2.0, 0.0));
        assert_eq!(trace_re(&r), 6.0);
        assert!(spatial_correlation(0.0, 2).is_err());
        assert!(spatial_correlation(-1.0, 2).is_err());
    }

    #[test]
    fn zero_realizations_rejected() {
        assert!(matches!(realize_channels(&single_link(1.0, 2), 0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn channel_sample_statistics_match_correlation() {
        let o = 100_000;
        let beta = 1.7;
        let r = single_link(beta, 2);
        let h = realize_channels(&r, o, 42).unwrap();
        let bound = 4.0 / (o as f64).sqrt();
        let mut cov = CMatrix::zeros(2, 2);
        for k in 0..2 {
            let mean: C64 = (0..o).map(|i| h.get(0, k, i, 0)).sum::<C64>() / o as f64;
            assert!(mean.norm() / beta.sqrt() < bound, "mean {mean}");
        }
        for i in 0..o {
            let v = h.vector(0, i, 0);
            cov += &v * v.adjoint();
        }
        cov /= C64::new(o as f64, 0.0);
        let rel = (cov - r.get(0, 0)).norm() / r.get(0, 0).norm();
        assert!(rel < 0.03, "relative Frobenius error {rel}");
    }

    #[test]
    fn realizations_are_deterministic() {
        let r = single_link(1.0, 3);
        assert_eq!(realize_channels(&r, 64, 5).unwrap(), realize_channels(&r, 64, 5).unwrap());
        assert_ne!(realize_channels(&r, 64, 5).unwrap(), realize_channels(&r, 64, 6).unwrap());
    }

    #[test]
    fn noiseless_estimate_recovers_channel() {
        let r = single_link(1e-8, 2);
        let h = realize_channels(&r, 100, 3).unwrap();
        let pilots = PilotBook::new(1, vec![0]).unwrap();
        let powers = [0.1];
        let est =
            mmse_estimate(&h, &r, &pilots, &EstimationParams { ue_powers: &powers, noise_power: 1e-12 * 1e-8 }, 3)
                .unwrap();
        for o in 0..100 {
            let (a, b) = (h.vector(0, o, 0), est.h_hat.vector(0, o, 0));
            assert!((a - &b).norm() / b.norm() < 1e-4);
        }
    }

    #[test]
    fn shared_pilot_error_covariance_closed_form() {
        let (beta, p, sigma2, tau) = (2.0, 0.5, 0.3, 3.0);
        let r = LinkMatrices::new(
            2,
            1,
            1,
            vec![spatial_correlation(beta, 1).unwrap(), spatial_correlation(beta, 1).unwrap()],
        )
        .unwrap();
        let h = realize_channels(&r, 10, 1).unwrap();
        let pilots = PilotBook::new(3, vec![1, 1]).unwrap();
        let powers = [p, p];
        let est =
            mmse_estimate(&h, &r, &pilots, &EstimationParams { ue_powers: &powers, noise_power: sigma2 }, 1).unwrap();
        let expected = beta - p * tau * beta * beta / (2.0 * p * tau * beta + sigma2);
        for u in 0..2 {
            assert!((est.error_cov.get(u, 0)[(0, 0)].re - expected).abs() < 1e-12);
        }
        // Both UEs see the same observation, so their estimates coincide.
        for o in 0..10 {
            assert_eq!(est.h_hat.get(0, 0, o, 0), est.h_hat.get(0, 0, o, 1));
        }
    }

    #[test]
    fn error_covariance_is_psd_and_dominated_by_r() {
        let mats: Vec<CMatrix> = (0..6).map(|i| spatial_correlation(0.2 + i as f64, 4).unwrap()).collect();
        let r = LinkMatrices::new(3, 2, 4, mats).unwrap();
        let h = realize_channels(&r, 8, 2).unwrap();
        let pilots = PilotBook::new(2, vec![0, 1, 0]).unwrap();
        let powers = [1.0, 0.5, 2.0];
        let est =
            mmse_estimate(&h, &r, &pilots, &EstimationParams { ue_powers: &powers, noise_power: 0.7 }, 2).unwrap();
        for u in 0..3 {
            for p in 0..2 {
                let c = est.error_cov.get(u, p);
                assert!(is_psd(c, 1e-10));
                assert!(is_psd(&(r.get(u, p) - c), 1e-10));
            }
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let r = single_link(1.0, 1);
        let h = realize_channels(&r, 4, 1).unwrap();
        let pilots = PilotBook::new(1, vec![0, 0]).unwrap();
        let powers = [1.0, 1.0];
        assert!(mmse_estimate(&h, &r, &pilots, &EstimationParams { ue_powers: &powers, noise_power: 1.0 }, 1).is_err());
        assert!(PilotBook::new(2, vec![2]).is_err());
    }
}
