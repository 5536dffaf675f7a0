//! Offline statistical learning: fingerprints are grouped by the best
//! sector id of each AP and every group is summarised by affinity
//! propagation exemplars.

mod affinity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radiomap::{RadioMap, RadioMapError, SectorId};

pub use affinity::{affinity_propagation, AffinityParams, Clustering};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    Empty,
    #[error("similarity matrix is not square: {rows} rows but row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("damping {0} outside [0.5, 1)")]
    Damping(f64),
    #[error("non-finite similarity or preference")]
    NonFinite,
}

/// WiFi RSS vector, one dBm value per AP column.
pub type Fingerprint = Vec<f64>;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Negative squared Euclidean distance between every pair.
pub fn similarity_matrix(points: &[&[f64]]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| points.iter().map(|q| -squared_distance(p, q)).collect())
        .collect()
}

/// Median of the off-diagonal entries; 0 for a single point.
pub fn median_preference(s: &[Vec<f64>]) -> f64 {
    let mut off: Vec<f64> = s
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v))
        .collect();
    if off.is_empty() {
        return 0.0;
    }
    off.sort_by(|a, b| a.total_cmp(b));
    let mid = off.len() / 2;
    if off.len() % 2 == 1 {
        off[mid]
    } else {
        0.5 * (off[mid - 1] + off[mid])
    }
}

/// Partition the covered LPs of AP column `ap` by best sector id.
pub fn group_by_sector(map: &RadioMap, ap: usize) -> BTreeMap<SectorId, Vec<(usize, Fingerprint)>> {
    let mut groups: BTreeMap<SectorId, Vec<(usize, Fingerprint)>> = BTreeMap::new();
    for lp in 0..map.num_lps() {
        if let Some(sector) = map.best_sector(lp, ap) {
            groups.entry(sector).or_default().push((lp, map.fingerprint(lp).to_vec()));
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 0-based LP row whose fingerprint is the exemplar.
    pub exemplar_lp: usize,
    pub exemplar: Fingerprint,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorGroup {
    pub sector: SectorId,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApExemplars {
    pub ap_id: u16,
    /// Ascending by sector id.
    pub groups: Vec<SectorGroup>,
}

/// Exemplars for every (AP, best sector) group, in radio-map column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub aps: Vec<ApExemplars>,
}

impl ExemplarSet {
    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }

    pub fn groups(&self, ap: usize) -> &[SectorGroup] {
        &self.aps[ap].groups
    }

    /// Check that the set was learned on a map with this shape.
    pub fn validate_against(&self, map: &RadioMap) -> Result<(), RadioMapError> {
        let bad = |m: String| Err(RadioMapError::Exemplars(m));
        let ids: Vec<u16> = self.aps.iter().map(|a| a.ap_id).collect();
        if ids != map.ap_ids() {
            return bad(format!("AP ids {ids:?} vs map {:?}", map.ap_ids()));
        }
        for (n, ap) in self.aps.iter().enumerate() {
            for g in &ap.groups {
                if g.sector == 0 || usize::from(g.sector) > map.sectors_per_ap()[n] {
                    return bad(format!("AP {} sector {} outside codebook", ap.ap_id, g.sector));
                }
                if g.clusters.is_empty() {
                    return bad(format!("AP {} sector {} has no exemplar", ap.ap_id, g.sector));
                }
                for c in &g.clusters {
                    if c.exemplar.len() != map.num_aps() {
                        return bad(format!("exemplar of length {} for N = {}", c.exemplar.len(), map.num_aps()));
                    }
                    if c.exemplar_lp >= map.num_lps() || c.members.iter().any(|m| *m >= map.num_lps()) {
                        return bad("LP index out of range".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cluster one group of fingerprints.
pub fn cluster_group(
    members: &[(usize, Fingerprint)],
    params: &AffinityParams,
) -> Result<Vec<Cluster>, ClusterError> {
    let points: Vec<&[f64]> = members.iter().map(|(_, f)| f.as_slice()).collect();
    let s = similarity_matrix(&points);
    let clustering = affinity_propagation(&s, median_preference(&s), params)?;
    Ok(clustering
        .exemplars
        .iter()
        .map(|&e| Cluster {
            exemplar_lp: members[e].0,
            exemplar: members[e].1.clone(),
            members: (0..members.len())
                .filter(|&i| clustering.labels[i] == e)
                .map(|i| members[i].0)
                .collect(),
        })
        .collect())
}

/// Group and cluster the fingerprints of every AP column of `map`.
pub fn build_exemplars(map: &RadioMap, params: &AffinityParams) -> Result<ExemplarSet, ClusterError> {
    let aps = (0..map.num_aps())
        .map(|n| {
            let groups = group_by_sector(map, n)
                .into_iter()
                .map(|(sector, members)| {
                    Ok(SectorGroup {
                        sector,
                        clusters: cluster_group(&members, params)?,
                    })
                })
                .collect::<Result<Vec<_>, ClusterError>>()?;
            Ok(ApExemplars {
                ap_id: map.ap_ids()[n],
                groups,
            })
        })
        .collect::<Result<Vec<_>, ClusterError>>()?;
    Ok(ExemplarSet { aps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomap::LearningPoint;
    use crate::propagation::Position;

    fn map_with_column(phi: &[Option<SectorId>]) -> RadioMap {
        let l = phi.len();
        RadioMap::from_parts(
            vec![1],
            vec![12],
            (0..l)
                .map(|i| LearningPoint {
                    index: i + 1,
                    position: Position::new(i as f64, 0.0, 1.0),
                })
                .collect(),
            (0..l).map(|i| vec![-40.0 - i as f64]).collect(),
            phi.iter().map(|p| vec![*p]).collect(),
            phi.iter().map(|p| vec![if p.is_some() { 1e-6 } else { 0.0 }]).collect(),
            1e-10,
        )
        .unwrap()
    }

    #[test]
    fn grouping_partitions_covered_lps() {
        let map = map_with_column(&[Some(5), Some(5), None, Some(9)]);
        let g = group_by_sector(&map, 0);
        assert_eq!(g.keys().copied().collect::<Vec<_>>(), vec![5, 9]);
        assert_eq!(g[&5].iter().map(|m| m.0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(g[&9].iter().map(|m| m.0).collect::<Vec<_>>(), vec![3]);
        assert_eq!(g.values().map(Vec::len).sum::<usize>(), 3);
        assert!(group_by_sector(&map_with_column(&[None, None]), 0).is_empty());
    }

    #[test]
    fn singleton_and_duplicate_groups() {
        let one = cluster_group(&[(4, vec![-50.0, -60.0])], &AffinityParams::default()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].exemplar_lp, 4);
        let dup = cluster_group(
            &[(0, vec![-50.0, -60.0]), (1, vec![-50.0, -60.0])],
            &AffinityParams::default(),
        )
        .unwrap();
        assert_eq!(dup.len(), 1);
        assert_eq!(dup[0].members, vec![0, 1]);
    }

    #[test]
    fn median_of_off_diagonal() {
        let s = vec![vec![0.0, -1.0, -4.0], vec![-1.0, 0.0, -9.0], vec![-4.0, -9.0, 0.0]];
        assert_eq!(median_preference(&s), -4.0);
        assert_eq!(median_preference(&[vec![0.0]]), 0.0);
    }

    #[test]
    fn exemplar_validation_catches_mismatch() {
        let map = map_with_column(&[Some(5), Some(5), None, Some(9)]);
        let mut ex = build_exemplars(&map, &AffinityParams::default()).unwrap();
        assert!(ex.validate_against(&map).is_ok());
        ex.aps[0].ap_id = 3;
        assert!(ex.validate_against(&map).is_err());
    }
}
