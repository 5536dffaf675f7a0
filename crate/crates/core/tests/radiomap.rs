use std::collections::BTreeSet;

use wigig_coord::coordinator::snr_at_lp;
use wigig_coord::harness::{ApConfig, LpGridConfig, ScenarioConfig};
use wigig_coord::learning::build_exemplars;
use wigig_coord::propagation::{wigig_rx_power_dbm, Position};
use wigig_coord::radiomap::{Database, RadioMap};

fn single_ap_map(nx: usize, ny: usize) -> (ScenarioConfig, RadioMap) {
    let cfg = ScenarioConfig {
        aps: vec![ApConfig {
            id: 1,
            position: Position::new(14.0, 3.5, 3.0),
        }],
        learning_points: LpGridConfig { nx, ny, z_m: 1.0 },
        sweep: vec![vec![1]],
        ..ScenarioConfig::default()
    };
    cfg.validate().unwrap();
    let map = cfg.build_radio_map().unwrap();
    (cfg, map)
}

#[test]
fn single_ceiling_ap_paints_contiguous_sector_regions() {
    let (nx, ny) = (36, 20);
    let (_, map) = single_ap_map(nx, ny);
    let at = |i: usize, j: usize| map.best_sector(j * nx + i, 0);
    let mut covered = 0;
    let mut with_same_neighbour = 0;
    let mut ids = BTreeSet::new();
    for j in 0..ny {
        for i in 0..nx {
            let Some(s) = at(i, j) else { continue };
            covered += 1;
            ids.insert(s);
            let neighbours = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            if neighbours
                .iter()
                .any(|&(a, b)| a < nx && b < ny && at(a, b) == Some(s))
            {
                with_same_neighbour += 1;
            }
        }
    }
    assert!(covered > nx * ny / 2, "{covered} of {} LPs covered", nx * ny);
    assert!(ids.len() >= 8, "only {} sector ids", ids.len());
    let share = with_same_neighbour as f64 / covered as f64;
    assert!(share > 0.9, "{share}");
}

#[test]
fn stored_power_and_snr_match_a_fresh_link_budget() {
    let (cfg, map) = single_ap_map(15, 6);
    let site = &cfg.ap_sites()[0];
    let lps = cfg.lps();
    for (l, lp) in lps.iter().enumerate() {
        let best = (0..site.codebook.len())
            .map(|k| {
                let s = &site.codebook.sectors[k];
                let p = wigig_rx_power_dbm(&cfg.environment, &site.position, s, &lp.position, cfg.sim.wigig_tx_dbm)
                    .unwrap()
                    .unwrap_or(f64::NEG_INFINITY);
                (s.id, p)
            })
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        match map.best_sector(l, 0) {
            Some(id) => {
                assert_eq!(id, best.0);
                let snr = snr_at_lp(&map, l, 0, id).unwrap();
                let expected = 10f64.powf(best.1 / 10.0) / cfg.environment.noise_power_mw;
                assert!((snr / expected - 1.0).abs() < 1e-9);
            }
            None => {
                assert!(best.1 < cfg.coverage_threshold_dbm());
                assert_eq!(map.power_mw(l, 0), 0.0);
            }
        }
    }
}

#[test]
fn database_file_round_trip() {
    let cfg = ScenarioConfig::default();
    let map = cfg.build_radio_map().unwrap();
    let mut db = Database::new(map);
    db.exemplars = Some(build_exemplars(&db.map, &cfg.affinity).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.json");
    db.save(&path).unwrap();
    let back = Database::load(&path).unwrap();
    assert_eq!(back.map, db.map);
    assert_eq!(back.exemplars, db.exemplars);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(Database::load(&path).is_err());
}
