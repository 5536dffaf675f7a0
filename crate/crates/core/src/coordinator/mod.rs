//! AP controller decisions made from the offline databases.
//!
//! Given an online fingerprint the controller picks an unused AP, ranks that
//! AP's best-sector groups by exemplar distance, and works out which sectors
//! of the other APs would push an existing link down the MCS ladder. BID
//! reports from established links refine those bad-beam sets.

mod mcs;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::learning::{squared_distance, ExemplarSet};
use crate::propagation::{db_to_linear, linear_to_db};
use crate::radiomap::{RadioMap, SectorId};

pub use mcs::{Mcs, McsEntry, McsTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinatorError {
    #[error("LP {lp} is not served by AP column {ap} sector {beam}")]
    NotCovered { lp: usize, ap: usize, beam: SectorId },
    #[error("beam {beam} not in the codebook of AP column {ap}")]
    UnknownBeam { ap: usize, beam: SectorId },
    #[error("AP columns must differ (got {0} twice)")]
    SameAp(usize),
    #[error("invalid MCS table: {0}")]
    McsTable(String),
}

/// Victim beam of AP n → sectors of one other AP that degrade it.
pub type BadBeamSets = BTreeMap<SectorId, BTreeSet<SectorId>>;

/// Output of one association decision.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPlan {
    pub ue: usize,
    /// Radio-map column of the chosen AP.
    pub ap: usize,
    /// Best beams in ranked order, at most X long.
    pub best_beams: Vec<SectorId>,
    /// For every other AP column, bad-beam candidates against each best beam.
    pub bad_beams: BTreeMap<usize, BadBeamSets>,
}

/// Payload of a BID frame: the link as actually established.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveLinkRecord {
    pub ap: usize,
    pub beam: SectorId,
    pub rx_power_dbm: f64,
    pub mcs: Mcs,
}

/// Exemplar distances of each best-sector group of AP column `ap`,
/// ascending, ties by sector id.
pub fn ranked_beams(psi: &[f64], ap: usize, exemplars: &ExemplarSet) -> Vec<(SectorId, f64)> {
    let mut ranked: Vec<(SectorId, f64)> = exemplars
        .groups(ap)
        .iter()
        .filter_map(|g| {
            g.clusters
                .iter()
                .map(|c| squared_distance(psi, &c.exemplar))
                .min_by(f64::total_cmp)
                .map(|d| (g.sector, d))
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked
}

/// The first `x` sector ids of [`ranked_beams`].
pub fn select_best_beams(psi: &[f64], ap: usize, exemplars: &ExemplarSet, x: usize) -> Vec<SectorId> {
    ranked_beams(psi, ap, exemplars)
        .into_iter()
        .take(x)
        .map(|(s, _)| s)
        .collect()
}

/// Among `unused` AP columns with at least one sector group, the one holding
/// the exemplar nearest to `psi`. Ties go to the lowest column.
pub fn associate_ue(psi: &[f64], exemplars: &ExemplarSet, unused: &BTreeSet<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &ap in unused {
        if ap >= exemplars.num_aps() {
            continue;
        }
        let nearest = exemplars
            .groups(ap)
            .iter()
            .flat_map(|g| g.clusters.iter())
            .map(|c| squared_distance(psi, &c.exemplar))
            .min_by(f64::total_cmp);
        if let Some(d) = nearest {
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((ap, d));
            }
        }
    }
    best.map(|(ap, _)| ap)
}

/// Offline power AP `ap` delivers at the LP of the exemplar nearest to `psi`.
pub fn predicted_power_mw(map: &RadioMap, exemplars: &ExemplarSet, psi: &[f64], ap: usize) -> Option<f64> {
    if ap >= exemplars.num_aps() {
        return None;
    }
    exemplars
        .groups(ap)
        .iter()
        .flat_map(|g| g.clusters.iter())
        .map(|c| (squared_distance(psi, &c.exemplar), c.exemplar_lp))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, lp)| map.power_mw(lp, ap))
}

fn covered_power(map: &RadioMap, lp: usize, ap: usize, beam: SectorId) -> Result<f64, CoordinatorError> {
    let p = map.power_mw(lp, ap);
    if map.best_sector(lp, ap) != Some(beam) || p <= 0.0 {
        return Err(CoordinatorError::NotCovered { lp, ap, beam });
    }
    Ok(p)
}

/// Interference-free SNR (linear) at LP `lp` for AP `ap` on `beam`.
pub fn snr_at_lp(map: &RadioMap, lp: usize, ap: usize, beam: SectorId) -> Result<f64, CoordinatorError> {
    Ok(covered_power(map, lp, ap, beam)? / map.noise_mw())
}

/// SINR (linear) at LP `lp` for the victim `(n, beam)` while `(m, d_m)` transmits.
pub fn sinr_at_lp(
    map: &RadioMap,
    lp: usize,
    victim: (usize, SectorId),
    interferer: (usize, SectorId),
) -> Result<f64, CoordinatorError> {
    if victim.0 == interferer.0 {
        return Err(CoordinatorError::SameAp(victim.0));
    }
    let signal = covered_power(map, lp, victim.0, victim.1)?;
    let interference = covered_power(map, lp, interferer.0, interferer.1)?;
    Ok(signal / (interference + map.noise_mw()))
}

/// Whether `d_m` of AP `m` lowers the MCS of `(n, beam)` at some LP they both serve.
fn degrades(map: &RadioMap, n: usize, beam: SectorId, m: usize, d_m: SectorId, table: &McsTable) -> bool {
    map.overlapped_lps(n, beam, m, d_m).into_iter().any(|z| {
        let snr = snr_at_lp(map, z, n, beam).expect("overlapped LP is covered");
        let sinr = sinr_at_lp(map, z, (n, beam), (m, d_m)).expect("overlapped LP is covered");
        table.mcs_from_snr(linear_to_db(sinr)) < table.mcs_from_snr(linear_to_db(snr))
    })
}

/// Bad-beam candidates of AP `m` against each of AP `n`'s best beams.
///
/// A sector of `m` is a candidate against a beam if, at one or more LPs both
/// serve, the SINR-derived MCS falls below the SNR-derived MCS.
pub fn bad_beam_candidates(
    map: &RadioMap,
    n: usize,
    best_beams: &[SectorId],
    m: usize,
    table: &McsTable,
) -> Result<BadBeamSets, CoordinatorError> {
    if n == m {
        return Err(CoordinatorError::SameAp(n));
    }
    let sectors_m = map.occurring_sectors(m);
    Ok(best_beams
        .iter()
        .map(|&beam| {
            let bad = sectors_m
                .iter()
                .copied()
                .filter(|&d_m| degrades(map, n, beam, m, d_m, table))
                .collect();
            (beam, bad)
        })
        .collect())
}

/// Bad beams of AP `m` against an established link, re-evaluated with the
/// link's reported power and MCS in place of the offline values.
///
/// A sector outside the offline candidate set is only added where the
/// reported power is below the offline power at the flagging LP, so the
/// result never grows beyond the offline set when the link is at least as
/// strong as the map predicted.
pub fn refine_bad_beams(
    map: &RadioMap,
    bid: &ActiveLinkRecord,
    m: usize,
    table: &McsTable,
) -> Result<BTreeSet<SectorId>, CoordinatorError> {
    let n = bid.ap;
    if n == m {
        return Err(CoordinatorError::SameAp(n));
    }
    if bid.beam == 0 || usize::from(bid.beam) > map.sectors_per_ap()[n] {
        return Err(CoordinatorError::UnknownBeam { ap: n, beam: bid.beam });
    }
    let offline = bad_beam_candidates(map, n, &[bid.beam], m, table)?
        .remove(&bid.beam)
        .unwrap_or_default();
    let actual_mw = db_to_linear(bid.rx_power_dbm);
    let mut refined = BTreeSet::new();
    for d_m in map.occurring_sectors(m) {
        let flagged = map.overlapped_lps(n, bid.beam, m, d_m).into_iter().any(|z| {
            let sinr = actual_mw / (map.power_mw(z, m) + map.noise_mw());
            table.mcs_from_snr(linear_to_db(sinr)) < bid.mcs
                && (offline.contains(&d_m) || actual_mw < map.power_mw(z, n))
        });
        if flagged {
            refined.insert(d_m);
        }
    }
    Ok(refined)
}

/// `best` minus every sector in `bad_sets`, keeping the original order.
pub fn eliminate_bad_beams<'a>(
    best: &[SectorId],
    bad_sets: impl IntoIterator<Item = &'a BTreeSet<SectorId>>,
) -> Vec<SectorId> {
    let bad: BTreeSet<SectorId> = bad_sets.into_iter().flatten().copied().collect();
    best.iter().copied().filter(|b| !bad.contains(b)).collect()
}

#[derive(Debug, Clone)]
struct ActiveLink {
    record: ActiveLinkRecord,
    /// Refined bad beams per AP column (empty for the link's own AP).
    bad_for: Vec<BTreeSet<SectorId>>,
}

/// Stateful controller: the one place association and link bookkeeping
/// happen. Lookups into the databases are read-only.
#[derive(Debug, Clone)]
pub struct Coordinator<'a> {
    map: &'a RadioMap,
    exemplars: &'a ExemplarSet,
    table: &'a McsTable,
    best_beam_count: usize,
    association_margin_db: Option<f64>,
    active: BTreeMap<usize, ActiveLink>,
}

impl<'a> Coordinator<'a> {
    pub fn new(map: &'a RadioMap, exemplars: &'a ExemplarSet, table: &'a McsTable, best_beam_count: usize) -> Self {
        Self {
            map,
            exemplars,
            table,
            best_beam_count,
            association_margin_db: None,
            active: BTreeMap::new(),
        }
    }

    /// Only let a UE take an unused AP whose predicted power is within
    /// `margin_db` of the best AP overall; otherwise it waits.
    pub fn with_association_margin(mut self, margin_db: Option<f64>) -> Self {
        self.association_margin_db = margin_db;
        self
    }

    /// The unused APs a UE with fingerprint `psi` may be associated with.
    pub fn eligible_aps(&self, psi: &[f64], unused: &BTreeSet<usize>) -> BTreeSet<usize> {
        let Some(margin) = self.association_margin_db else {
            return unused.clone();
        };
        let predicted: Vec<Option<f64>> = (0..self.map.num_aps())
            .map(|n| predicted_power_mw(self.map, self.exemplars, psi, n).filter(|&p| p > 0.0))
            .collect();
        let Some(best) = predicted.iter().flatten().copied().max_by(f64::total_cmp) else {
            return BTreeSet::new();
        };
        let floor = linear_to_db(best) - margin;
        unused
            .iter()
            .copied()
            .filter(|&n| predicted.get(n).copied().flatten().is_some_and(|p| linear_to_db(p) >= floor))
            .collect()
    }

    pub fn map(&self) -> &RadioMap {
        self.map
    }

    pub fn table(&self) -> &McsTable {
        self.table
    }

    /// Associate and plan beams; `None` when no unused AP covers the UE.
    pub fn plan(&self, ue: usize, psi: &[f64], unused: &BTreeSet<usize>) -> Option<BeamPlan> {
        let ap = associate_ue(psi, self.exemplars, &self.eligible_aps(psi, unused))?;
        let best_beams = select_best_beams(psi, ap, self.exemplars, self.best_beam_count);
        let bad_beams = (0..self.map.num_aps())
            .filter(|&m| m != ap)
            .map(|m| {
                let sets = bad_beam_candidates(self.map, ap, &best_beams, m, self.table)
                    .expect("distinct columns");
                (m, sets)
            })
            .collect();
        Some(BeamPlan {
            ue,
            ap,
            best_beams,
            bad_beams,
        })
    }

    /// Record a BID and refine every other AP's bad beams against it.
    pub fn register_link(&mut self, record: ActiveLinkRecord) -> Result<(), CoordinatorError> {
        let bad_for = (0..self.map.num_aps())
            .map(|m| {
                if m == record.ap {
                    Ok(BTreeSet::new())
                } else {
                    refine_bad_beams(self.map, &record, m, self.table)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.active.insert(record.ap, ActiveLink { record, bad_for });
        Ok(())
    }

    pub fn release_link(&mut self, ap: usize) {
        self.active.remove(&ap);
    }

    pub fn active_links(&self) -> impl Iterator<Item = &ActiveLinkRecord> {
        self.active.values().map(|l| &l.record)
    }

    /// Sectors of `ap` flagged bad against any currently active link.
    pub fn bad_beams_for(&self, ap: usize) -> BTreeSet<SectorId> {
        self.active
            .values()
            .filter(|l| l.record.ap != ap)
            .flat_map(|l| l.bad_for[ap].iter().copied())
            .collect()
    }

    /// BRP training list for `ap`: its best beams without the bad ones.
    pub fn training_list(&self, ap: usize, best_beams: &[SectorId]) -> Vec<SectorId> {
        let bad = self.bad_beams_for(ap);
        eliminate_bad_beams(best_beams, [&bad])
    }
}
