//! Dynamic cooperation clustering: master-AP selection, pilot assignment,
//! serving sets, the block DCC matrix, and the per-AP combining cost.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::PilotBook;
use crate::geometry::{GainMap, NetworkConfig};
use crate::linalg::{identity, CMatrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServingMode {
    /// Sequential user-centric association with per-pilot AP capacity.
    Scalable,
    /// Every AP serves every UE.
    AllServe,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DccAssignment {
    num_aps: usize,
    pilot_length: usize,
    master_of_ue: Vec<usize>,
    pilot_of_ue: Vec<usize>,
    serving_sets: Vec<Vec<usize>>,
    /// `g[p * U + u]` ⇔ AP `p` serves UE `u`.
    g: Vec<bool>,
}

impl DccAssignment {
    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.master_of_ue.len()
    }

    pub fn pilot_length(&self) -> usize {
        self.pilot_length
    }

    pub fn master(&self, ue: usize) -> usize {
        self.master_of_ue[ue]
    }

    pub fn pilot(&self, ue: usize) -> usize {
        self.pilot_of_ue[ue]
    }

    /// Serving set χ_u, ascending AP indices.
    pub fn serving_set(&self, ue: usize) -> &[usize] {
        &self.serving_sets[ue]
    }

    #[inline]
    pub fn serves(&self, ap: usize, ue: usize) -> bool {
        self.g[ap * self.num_ues() + ue]
    }

    /// Row `p` of the boolean DCC matrix.
    pub fn g_row(&self, ap: usize) -> &[bool] {
        let u = self.num_ues();
        &self.g[ap * u..(ap + 1) * u]
    }

    /// S_p: UEs served by AP `p`, ascending.
    pub fn served_by(&self, ap: usize) -> Vec<usize> {
        (0..self.num_ues()).filter(|&u| self.serves(ap, u)).collect()
    }

    pub fn pilot_book(&self) -> PilotBook {
        PilotBook::new(self.pilot_length, self.pilot_of_ue.clone()).expect("assignment pilots are always in range")
    }
}

/// Strongest AP for a UE; ties go to the lowest index.
pub fn select_master(beta_column: &[f64]) -> Result<usize> {
    if beta_column.is_empty() {
        return Err(Error::config("cannot select a master AP from an empty gain column"));
    }
    let mut best = 0;
    for (p, &b) in beta_column.iter().enumerate() {
        if !b.is_finite() {
            return Err(Error::Numerical(format!("non-finite gain at AP {p}")));
        }
        if b > beta_column[best] {
            best = p;
        }
    }
    Ok(best)
}

/// Pilot with the least contamination `Σ_{j on t} beta[master][j]` over the
/// already-assigned UEs; ties go to the lowest index.
pub fn assign_pilot(master: usize, assigned: &[Option<usize>], gains: &GainMap, pilot_length: usize) -> Result<usize> {
    assign_pilot_among(master, assigned, gains, pilot_length, |_| true)
}

/// [`assign_pilot`] restricted to pilots for which `allowed` holds.
pub fn assign_pilot_among(
    master: usize,
    assigned: &[Option<usize>],
    gains: &GainMap,
    pilot_length: usize,
    allowed: impl Fn(usize) -> bool,
) -> Result<usize> {
    if pilot_length == 0 {
        return Err(Error::config("pilot length must be at least 1"));
    }
    if master >= gains.num_aps() {
        return Err(Error::config(format!("master AP {master} out of range")));
    }
    let mut contamination = vec![0.0; pilot_length];
    for (j, t) in assigned.iter().enumerate() {
        if let Some(t) = *t {
            contamination[t] += gains.get(master, j);
        }
    }
    (0..pilot_length)
        .filter(|&t| allowed(t))
        .fold(None, |best: Option<usize>, t| match best {
            Some(b) if contamination[b] <= contamination[t] => Some(b),
            _ => Some(t),
        })
        .ok_or_else(|| Error::config(format!("no pilot available at master AP {master}")))
}

/// Runs the association procedure over UEs in ascending index order.
///
/// Scalable mode works in two passes. First every UE, in order, gets a master
/// (the strongest AP that is not yet master for a UE on every pilot) and the
/// least-contaminated pilot among those its master is not already anchoring.
/// Then, again in UE order, every other AP joins χ_u iff it serves no UE on
/// that pilot yet and its gain is within `serving_threshold_db` of the
/// master's. Reserving master slots first keeps late UEs from finding every AP
/// already full of helpers. All-serve mode assigns masters and pilots without
/// the slot restriction and lets every AP serve every UE.
pub fn build_serving_sets(gains: &GainMap, cfg: &NetworkConfig, mode: ServingMode) -> Result<DccAssignment> {
    cfg.validate()?;
    let (num_aps, num_ues, tau_p) = (gains.num_aps(), gains.num_ues(), cfg.pilot_length);
    if num_aps != cfg.num_aps || num_ues != cfg.num_ues {
        return Err(Error::shape(format!(
            "gain map is {num_aps}x{num_ues}, config expects {}x{}",
            cfg.num_aps, cfg.num_ues
        )));
    }
    let capacity = if cfg.strict_one_ue_per_ap { 1 } else { tau_p };
    let mut occupied = vec![false; num_aps * tau_p];
    let mut load = vec![0usize; num_aps];
    let mut assigned: Vec<Option<usize>> = vec![None; num_ues];
    let mut master_of_ue = Vec::with_capacity(num_ues);

    for u in 0..num_ues {
        let column = gains.column(u);
        let (master, pilot) = match mode {
            ServingMode::AllServe => {
                let master = select_master(&column)?;
                (master, assign_pilot(master, &assigned, gains, tau_p)?)
            }
            ServingMode::Scalable => {
                let has_room = |p: usize| load[p] < capacity && (0..tau_p).any(|t| !occupied[p * tau_p + t]);
                let masked: Vec<f64> =
                    column.iter().enumerate().map(|(p, &b)| if has_room(p) { b } else { f64::NEG_INFINITY }).collect();
                if masked.iter().all(|b| *b == f64::NEG_INFINITY) {
                    return Err(Error::config(format!("no AP can anchor UE {u}: every AP is master on all pilots")));
                }
                let master = select_master_masked(&masked);
                let pilot = assign_pilot_among(master, &assigned, gains, tau_p, |t| !occupied[master * tau_p + t])?;
                occupied[master * tau_p + pilot] = true;
                load[master] += 1;
                (master, pilot)
            }
        };
        assigned[u] = Some(pilot);
        master_of_ue.push(master);
    }
    let pilot_of_ue: Vec<usize> = assigned.into_iter().map(|t| t.expect("every UE assigned")).collect();

    let mut serving_sets = Vec::with_capacity(num_ues);
    let mut g = vec![false; num_aps * num_ues];
    for u in 0..num_ues {
        let (master, pilot) = (master_of_ue[u], pilot_of_ue[u]);
        let set: Vec<usize> = match mode {
            ServingMode::AllServe => (0..num_aps).collect(),
            ServingMode::Scalable => {
                let master_gain = gains.get(master, u);
                let mut set = Vec::new();
                for p in 0..num_aps {
                    let joins = p == master
                        || (!occupied[p * tau_p + pilot]
                            && load[p] < capacity
                            && 10.0 * (gains.get(p, u) / master_gain).log10() >= cfg.serving_threshold_db);
                    if joins {
                        if p != master {
                            occupied[p * tau_p + pilot] = true;
                            load[p] += 1;
                        }
                        set.push(p);
                    }
                }
                set
            }
        };
        for &p in &set {
            g[p * num_ues + u] = true;
        }
        serving_sets.push(set);
    }

    Ok(DccAssignment { num_aps, pilot_length: tau_p, master_of_ue, pilot_of_ue, serving_sets, g })
}

fn select_master_masked(masked: &[f64]) -> usize {
    let mut best = 0;
    for (p, &b) in masked.iter().enumerate() {
        if b > masked[best] {
            best = p;
        }
    }
    best
}

/// Block DCC matrix: `G_up = I_N` if `p ∈ χ_u`, else the N × N zero matrix.
/// Stored as the boolean P × U pattern plus N.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DccMatrix {
    num_aps: usize,
    num_ues: usize,
    antennas: usize,
    g: Vec<bool>,
}

pub fn dcc_matrix(assignment: &DccAssignment, antennas: usize) -> DccMatrix {
    DccMatrix { num_aps: assignment.num_aps, num_ues: assignment.num_ues(), antennas, g: assignment.g.clone() }
}

impl DccMatrix {
    pub fn is_identity_block(&self, ue: usize, ap: usize) -> bool {
        self.g[ap * self.num_ues + ue]
    }

    pub fn block(&self, ue: usize, ap: usize) -> CMatrix {
        if self.is_identity_block(ue, ap) {
            identity(self.antennas)
        } else {
            CMatrix::zeros(self.antennas, self.antennas)
        }
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }
}

/// Complex multiplications for AP `p` to form its LP-MMSE combiners:
/// `|S_p|·N²` for the Gram accumulation plus `N³` for one inversion.
pub fn combining_complexity(assignment: &DccAssignment, ap: usize, antennas: usize) -> u64 {
    let served = assignment.served_by(ap).len() as u64;
    let n = antennas as u64;
    served * n * n + n * n * n
}

/// Writes `u,master,pilot,serving_set` rows; the serving set is `;`-separated.
pub fn write_assignment_csv<W: Write>(out: W, assignment: &DccAssignment) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["u", "master", "pilot", "serving_set"])?;
    for u in 0..assignment.num_ues() {
        let set = assignment.serving_sets[u].iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            u.to_string(),
            assignment.master_of_ue[u].to_string(),
            assignment.pilot_of_ue[u].to_string(),
            set,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Checks the structural invariants of an assignment; returns a description
/// of the first violation.
pub fn check_invariants(assignment: &DccAssignment, mode: ServingMode) -> std::result::Result<(), String> {
    let (num_aps, num_ues, tau_p) = (assignment.num_aps, assignment.num_ues(), assignment.pilot_length);
    for u in 0..num_ues {
        let set = &assignment.serving_sets[u];
        if set.is_empty() {
            return Err(format!("UE {u} has an empty serving set"));
        }
        if !set.contains(&assignment.master_of_ue[u]) {
            return Err(format!("master of UE {u} is not in its serving set"));
        }
        if set.iter().any(|&p| p >= num_aps) || set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("serving set of UE {u} is not an ordered subset of APs"));
        }
        if assignment.pilot_of_ue[u] >= tau_p {
            return Err(format!("UE {u} has pilot out of range"));
        }
        for p in 0..num_aps {
            if assignment.serves(p, u) != set.contains(&p) {
                return Err(format!("G[{p}][{u}] disagrees with the serving set"));
            }
        }
    }
    if mode == ServingMode::Scalable {
        for p in 0..num_aps {
            let served = assignment.served_by(p);
            if served.len() > tau_p {
                return Err(format!("AP {p} serves {} UEs with {tau_p} pilots", served.len()));
            }
            for t in 0..tau_p {
                let on_t = served.iter().filter(|&&u| assignment.pilot_of_ue[u] == t).count();
                if on_t > 1 {
                    return Err(format!("AP {p} serves {on_t} UEs on pilot {t}"));
                }
            }
        }
    }
    Ok(())
}
