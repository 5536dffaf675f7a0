//! Random radio maps and exhaustive reference implementations shared by
//! the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wigig_coord::coordinator::{associate_ue, bad_beam_candidates, select_best_beams, McsTable};
use wigig_coord::learning::{build_exemplars, AffinityParams, ExemplarSet};
use wigig_coord::propagation::Position;
use wigig_coord::radiomap::{LearningPoint, RadioMap, SectorId};

pub const NOISE_MW: f64 = 7.0e-8;

pub struct Instance {
    pub map: RadioMap,
    pub psi: Vec<Vec<f64>>,
    pub phi: Vec<Vec<Option<SectorId>>>,
    pub p: Vec<Vec<f64>>,
    pub sectors: Vec<usize>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let l = rng.gen_range(2..=30);
    let n = rng.gen_range(1..=3);
    let sectors: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=12)).collect();
    let lps = (0..l)
        .map(|i| LearningPoint {
            index: i + 1,
            position: Position::new(i as f64 * 0.5, 1.0, 1.0),
        })
        .collect();
    let psi: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..n).map(|_| rng.gen_range(-90.0..-30.0)).collect())
        .collect();
    let mut phi = vec![vec![None; n]; l];
    let mut p = vec![vec![0.0; n]; l];
    for z in 0..l {
        for a in 0..n {
            if rng.gen_bool(0.85) {
                phi[z][a] = Some(rng.gen_range(1..=sectors[a]) as SectorId);
                // -80 .. -40 dBm straddles the whole MCS ladder above noise.
                p[z][a] = 10f64.powf(rng.gen_range(-8.0..-4.0));
            }
        }
    }
    let map = RadioMap::from_parts(
        (1..=n as u16).collect(),
        sectors.clone(),
        lps,
        psi.clone(),
        phi.clone(),
        p.clone(),
        NOISE_MW,
    )
    .unwrap();
    Instance {
        map,
        psi,
        phi,
        p,
        sectors,
    }
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mcs_oracle(table: &McsTable, snr_db: f64) -> u8 {
    let mut best = 0;
    for e in table.entries() {
        if snr_db >= e.min_snr_db {
            best = best.max(e.index);
        }
    }
    best
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn query(rng: &mut ChaCha8Rng, inst: &Instance) -> Vec<f64> {
    let base = &inst.psi[rng.gen_range(0..inst.psi.len())];
    base.iter().map(|v| v + rng.gen_range(-6.0..6.0)).collect()
}

pub fn assoc_oracle(ex: &ExemplarSet, psi: &[f64], unused: &BTreeSet<usize>) -> Option<usize> {
    let mut all = Vec::new();
    for &a in unused {
        for g in &ex.aps[a].groups {
            for c in &g.clusters {
                all.push((sq(psi, &c.exemplar), a));
            }
        }
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    all.first().map(|x| x.1)
}

pub fn best_beams_oracle(ex: &ExemplarSet, psi: &[f64], ap: usize, x: usize) -> Vec<SectorId> {
    let mut per_sector: BTreeMap<SectorId, f64> = BTreeMap::new();
    for g in &ex.aps[ap].groups {
        for c in &g.clusters {
            let d = sq(psi, &c.exemplar);
            let e = per_sector.entry(g.sector).or_insert(f64::INFINITY);
            *e = e.min(d);
        }
    }
    let mut v: Vec<(SectorId, f64)> = per_sector.into_iter().collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(x).map(|(s, _)| s).collect()
}

pub fn bad_oracle(inst: &Instance, table: &McsTable, n: usize, beam: SectorId, m: usize) -> BTreeSet<SectorId> {
    let mut out = BTreeSet::new();
    for d_m in 1..=inst.sectors[m] as SectorId {
        for z in 0..inst.phi.len() {
            if inst.phi[z][n] != Some(beam) || inst.phi[z][m] != Some(d_m) {
                continue;
            }
            let snr = inst.p[z][n] / NOISE_MW;
            let sinr = inst.p[z][n] / (inst.p[z][m] + NOISE_MW);
            if mcs_oracle(table, db(sinr)) < mcs_oracle(table, db(snr)) {
                out.insert(d_m);
            }
        }
    }
    out
}

/// Best partition into two clusters around two medoids, by exhaustive search.
pub fn two_medoid_labels(s: &[Vec<f64>]) -> Vec<usize> {
    let k = s.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for a in 0..k {
        for b in a + 1..k {
            let labels: Vec<usize> = (0..k)
                .map(|i| if s[i][a] >= s[i][b] { a } else { b })
                .collect();
            let total: f64 = (0..k).filter(|&i| labels[i] != i).map(|i| s[i][labels[i]]).sum();
            if best.as_ref().is_none_or(|(t, _)| total > *t) {
                best = Some((total, labels));
            }
        }
    }
    best.unwrap().1
}

pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Two tight, far-apart triplets of 2-D fingerprints.
pub fn two_triplets() -> Vec<Vec<f64>> {
    vec![
        vec![-50.0, -60.0],
        vec![-50.1, -60.05],
        vec![-49.95, -59.9],
        vec![-70.0, -45.0],
        vec![-70.08, -45.1],
        vec![-69.9, -44.95],
    ]
}

/// Mismatches between the library and the exhaustive scans of association,
/// best-beam ranking and bad-beam candidates over `count` random maps.
pub fn random_map_mismatches(seed: u64, count: usize) -> usize {
    let table = McsTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..count {
        let inst = random_instance(&mut rng);
        let ex = build_exemplars(&inst.map, &AffinityParams::default()).unwrap();
        let n_aps = inst.sectors.len();
        let psi = query(&mut rng, &inst);
        let unused: BTreeSet<usize> = (0..n_aps).filter(|_| rng.gen_bool(0.8)).collect();

        if associate_ue(&psi, &ex, &unused) != assoc_oracle(&ex, &psi, &unused) {
            mismatches += 1;
        }
        for ap in 0..n_aps {
            let x = rng.gen_range(1..=8);
            let best = select_best_beams(&psi, ap, &ex, x);
            if best != best_beams_oracle(&ex, &psi, ap, x) {
                mismatches += 1;
            }
            for m in (0..n_aps).filter(|&m| m != ap) {
                let sets = bad_beam_candidates(&inst.map, ap, &best, m, &table).unwrap();
                for &b in &best {
                    if sets[&b] != bad_oracle(&inst, &table, ap, b, m) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    mismatches
}
