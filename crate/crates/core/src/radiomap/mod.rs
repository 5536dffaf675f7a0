//! Offline learning databases over the learning-point (LP) grid.
//!
//! Three L×N matrices indexed `[lp][ap]`:
//! - Ψ: long-term WiFi RSS of each AP at each LP, dBm;
//! - Φ: best 60 GHz sector id of each AP at each LP, `None` when the AP cannot cover the LP;
//! - P_OFF: received power through that best sector, mW, exactly 0 where Φ is `None`.

mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{
    self, db_to_linear, Environment, Position, PropagationError, SectorCodebook,
};

pub use io::{Database, FORMAT_NAME, FORMAT_VERSION};

/// Codebook sector id.
pub type SectorId = u16;

#[derive(Debug, Error)]
pub enum RadioMapError {
    #[error("empty sector power list")]
    EmptyPowers,
    #[error("radio map needs at least one LP and one AP")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("LP {lp} / AP column {ap}: {reason}")]
    Inconsistent { lp: usize, ap: usize, reason: String },
    #[error("unknown AP id {0}")]
    UnknownAp(u16),
    #[error("unsupported database format {format:?} version {version}")]
    Format { format: String, version: u32 },
    #[error("exemplar set does not match the radio map: {0}")]
    Exemplars(String),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("reading database: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing database: {0}")]
    Parse(#[from] serde_json::Error),
}

/// A surveyed position. `index` is 1-based and contiguous over the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub index: usize,
    pub position: Position,
}

/// An installed AP with its sector codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSite {
    pub id: u16,
    pub position: Position,
    pub codebook: SectorCodebook,
}

/// Transmit powers and the coverage threshold used when surveying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveyParams {
    pub wifi_tx_dbm: f64,
    pub wigig_tx_dbm: f64,
    /// Below this best-sector power the AP is considered unable to cover the LP.
    pub coverage_threshold_dbm: f64,
}

/// `nx × ny` LPs at cell centres of the room floor plan, at height `z`.
/// Indices run x-fastest.
pub fn uniform_grid(env: &Environment, nx: usize, ny: usize, z: f64) -> Vec<LearningPoint> {
    let (dx, dy) = (env.width_m / nx as f64, env.depth_m / ny as f64);
    (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .enumerate()
        .map(|(k, (i, j))| LearningPoint {
            index: k + 1,
            position: Position::new((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy, z),
        })
        .collect()
}

/// Index (1-based codebook position) of the strongest sector, or `None` when
/// even the strongest is below `threshold_dbm`. Ties go to the lowest id.
pub fn best_sector_id(powers_dbm: &[f64], threshold_dbm: f64) -> Result<Option<SectorId>, RadioMapError> {
    if powers_dbm.is_empty() {
        return Err(RadioMapError::EmptyPowers);
    }
    let mut best = 0;
    for (i, p) in powers_dbm.iter().enumerate().skip(1) {
        if *p > powers_dbm[best] {
            best = i;
        }
    }
    if powers_dbm[best] >= threshold_dbm {
        Ok(Some(best as SectorId + 1))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    ap_ids: Vec<u16>,
    sectors_per_ap: Vec<usize>,
    lps: Vec<LearningPoint>,
    psi: Vec<Vec<f64>>,
    phi: Vec<Vec<Option<SectorId>>>,
    p_off_mw: Vec<Vec<f64>>,
    noise_mw: f64,
}

impl RadioMap {
    /// Assemble a map from its matrices, enforcing every structural invariant.
    pub fn from_parts(
        ap_ids: Vec<u16>,
        sectors_per_ap: Vec<usize>,
        lps: Vec<LearningPoint>,
        psi: Vec<Vec<f64>>,
        phi: Vec<Vec<Option<SectorId>>>,
        p_off_mw: Vec<Vec<f64>>,
        noise_mw: f64,
    ) -> Result<Self, RadioMapError> {
        let (l, n) = (lps.len(), ap_ids.len());
        if l == 0 || n == 0 {
            return Err(RadioMapError::Empty);
        }
        if sectors_per_ap.len() != n {
            return Err(RadioMapError::Dimension(format!(
                "{} sector counts for {n} APs",
                sectors_per_ap.len()
            )));
        }
        for (name, rows) in [("psi", psi.len()), ("phi", phi.len()), ("p_off", p_off_mw.len())] {
            if rows != l {
                return Err(RadioMapError::Dimension(format!("{name} has {rows} rows, expected L = {l}")));
            }
        }
        for lp in 0..l {
            if psi[lp].len() != n || phi[lp].len() != n || p_off_mw[lp].len() != n {
                return Err(RadioMapError::Dimension(format!("row {lp} does not have N = {n} columns")));
            }
        }
        for (k, lp) in lps.iter().enumerate() {
            if lp.index != k + 1 {
                return Err(RadioMapError::Dimension(format!(
                    "LP indices must be contiguous from 1; found {} at row {k}",
                    lp.index
                )));
            }
        }
        if !(noise_mw > 0.0) {
            return Err(RadioMapError::Dimension("noise power must be positive".into()));
        }
        for lp in 0..l {
            for ap in 0..n {
                let bad = |reason: &str| RadioMapError::Inconsistent {
                    lp,
                    ap,
                    reason: reason.to_string(),
                };
                if !psi[lp][ap].is_finite() {
                    return Err(bad("non-finite fingerprint"));
                }
                let p = p_off_mw[lp][ap];
                match phi[lp][ap] {
                    None if p != 0.0 => return Err(bad("null sector with non-zero power")),
                    Some(_) if !(p > 0.0 && p.is_finite()) => {
                        return Err(bad("covered sector with non-positive power"))
                    }
                    Some(s) if s == 0 || usize::from(s) > sectors_per_ap[ap] => {
                        return Err(bad("sector id outside the codebook"))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            ap_ids,
            sectors_per_ap,
            lps,
            psi,
            phi,
            p_off_mw,
            noise_mw,
        })
    }

    /// Survey every LP from every AP.
    pub fn build(
        env: &Environment,
        aps: &[ApSite],
        lps: &[LearningPoint],
        params: SurveyParams,
    ) -> Result<Self, RadioMapError> {
        if aps.is_empty() || lps.is_empty() {
            return Err(RadioMapError::Empty);
        }
        for lp in lps {
            env.check_inside(&lp.position)?;
        }
        let mut psi = vec![vec![0.0; aps.len()]; lps.len()];
        let mut phi = vec![vec![None; aps.len()]; lps.len()];
        let mut p_off = vec![vec![0.0; aps.len()]; lps.len()];
        let wavelength = env.wigig_wavelength_m();
        for (l, lp) in lps.iter().enumerate() {
            for (n, ap) in aps.iter().enumerate() {
                psi[l][n] =
                    propagation::wifi_rss_dbm(env, &ap.position, &lp.position, params.wifi_tx_dbm, 0.0);
                let rays = propagation::trace_rays(env, &ap.position, &lp.position, env.max_reflections)?;
                let powers: Vec<f64> = ap
                    .codebook
                    .sectors
                    .iter()
                    .map(|s| {
                        params.wigig_tx_dbm
                            + propagation::linear_to_db(propagation::path_gain_linear(
                                &rays,
                                wavelength,
                                Some(s),
                                None,
                            ))
                    })
                    .collect();
                if let Some(pos) = best_sector_id(&powers, params.coverage_threshold_dbm)? {
                    let idx = usize::from(pos) - 1;
                    phi[l][n] = Some(ap.codebook.sectors[idx].id);
                    p_off[l][n] = db_to_linear(powers[idx]);
                }
            }
        }
        let sectors_per_ap = aps.iter().map(|a| a.codebook.len()).collect();
        Self::from_parts(
            aps.iter().map(|a| a.id).collect(),
            sectors_per_ap,
            lps.to_vec(),
            psi,
            phi,
            p_off,
            env.noise_power_mw,
        )
    }

    /// Keep only the columns of the listed APs, in the given order.
    pub fn select_aps(&self, ids: &[u16]) -> Result<Self, RadioMapError> {
        let cols: Vec<usize> = ids
            .iter()
            .map(|id| self.column_of(*id).ok_or(RadioMapError::UnknownAp(*id)))
            .collect::<Result<_, _>>()?;
        let pick = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect()
        };
        Self::from_parts(
            ids.to_vec(),
            cols.iter().map(|&c| self.sectors_per_ap[c]).collect(),
            self.lps.clone(),
            pick(&self.psi),
            self.phi.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            pick(&self.p_off_mw),
            self.noise_mw,
        )
    }

    pub fn num_lps(&self) -> usize {
        self.lps.len()
    }

    pub fn num_aps(&self) -> usize {
        self.ap_ids.len()
    }

    pub fn ap_ids(&self) -> &[u16] {
        &self.ap_ids
    }

    pub fn column_of(&self, ap_id: u16) -> Option<usize> {
        self.ap_ids.iter().position(|a| *a == ap_id)
    }

    pub fn sectors_per_ap(&self) -> &[usize] {
        &self.sectors_per_ap
    }

    pub fn learning_points(&self) -> &[LearningPoint] {
        &self.lps
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    /// Ψ row of one LP: the fingerprint seen by all APs.
    pub fn fingerprint(&self, lp: usize) -> &[f64] {
        &self.psi[lp]
    }

    pub fn psi(&self, lp: usize, ap: usize) -> f64 {
        self.psi[lp][ap]
    }

    pub fn best_sector(&self, lp: usize, ap: usize) -> Option<SectorId> {
        self.phi[lp][ap]
    }

    pub fn power_mw(&self, lp: usize, ap: usize) -> f64 {
        self.p_off_mw[lp][ap]
    }

    /// Sector ids of AP column `ap` that occur in Φ, ascending.
    pub fn occurring_sectors(&self, ap: usize) -> Vec<SectorId> {
        let mut ids: Vec<SectorId> = self.phi.iter().filter_map(|r| r[ap]).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// LPs served by sector `d_n` of AP `n` and by sector `d_m` of AP `m`.
    pub fn overlapped_lps(&self, n: usize, d_n: SectorId, m: usize, d_m: SectorId) -> Vec<usize> {
        debug_assert_ne!(n, m);
        (0..self.lps.len())
            .filter(|&l| self.phi[l][n] == Some(d_n) && self.phi[l][m] == Some(d_m))
            .collect()
    }
}
