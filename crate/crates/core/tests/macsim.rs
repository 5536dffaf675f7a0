use std::collections::BTreeMap;

use wigig_coord::coordinator::select_best_beams;
use wigig_coord::harness::{compute_metrics, ApConfig, PreparedSubset, ScenarioConfig};
use wigig_coord::macsim::{frame_outcome, sinr_db, Channel, FrameOutcome, Mode, Node, RunOptions, SimError};
use wigig_coord::propagation::{wigig_rx_power_dbm, Position};
use wigig_coord::radiomap::Database;

const TRACE: RunOptions = RunOptions {
    trace: true,
    ignore_nav: false,
};

fn config(ues: Vec<Position>, duration_s: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        ues,
        ..ScenarioConfig::default()
    };
    cfg.sim.duration_s = duration_s;
    cfg
}

fn prepare(cfg: &ScenarioConfig, ids: &[u16]) -> PreparedSubset {
    let db = Database::new(cfg.build_radio_map().unwrap());
    PreparedSubset::new(cfg, &db, ids).unwrap()
}

#[derive(Debug, Clone)]
struct Line {
    t: u64,
    node: String,
    action: String,
    outcome: String,
}

fn parse(trace: &[String]) -> Vec<Line> {
    trace
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            Line {
                t: f[0].parse().unwrap(),
                node: f[1].to_string(),
                action: f[2].to_string(),
                outcome: f[4].to_string(),
            }
        })
        .collect()
}

/// `(node, start, end, ok)` of every frame of `action`.
fn frames(lines: &[Line], action: &str) -> Vec<(String, u64, u64, bool)> {
    let mut open: BTreeMap<String, u64> = BTreeMap::new();
    let mut out = Vec::new();
    for l in lines.iter().filter(|l| l.action == action) {
        if l.outcome == "start" {
            open.insert(l.node.clone(), l.t);
        } else if let Some(s) = open.remove(&l.node) {
            out.push((l.node.clone(), s, l.t, l.outcome == "ok"));
        }
    }
    out
}

fn overlaps(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn two_far_ues() -> Vec<Position> {
    vec![Position::new(2.25, 2.5, 1.0), Position::new(15.75, 7.5, 1.0)]
}

#[test]
fn zero_offered_load_gives_zero_throughput_and_drops() {
    let mut cfg = config(ScenarioConfig::default().ues, 0.05);
    cfg.sim.offered_load_bps = 0.0;
    let p = prepare(&cfg, &[1, 2, 7, 8]);
    for mode in [Mode::Coordinated, Mode::Uncoordinated] {
        let m = compute_metrics(&p.run(mode, 1, RunOptions::default()).unwrap().stats);
        assert_eq!(m.throughput_gbps, 0.0);
        assert_eq!((m.ns, m.nd), (0, 0));
    }
}

#[test]
fn same_seed_same_run_and_trace() {
    let cfg = config(ScenarioConfig::default().ues, 0.03);
    let p = prepare(&cfg, &[1, 2, 7, 8]);
    for mode in [Mode::Coordinated, Mode::Uncoordinated] {
        let a = p.run(mode, 5, TRACE).unwrap();
        let b = p.run(mode, 5, TRACE).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.trace, b.trace);
        let c = p.run(mode, 6, TRACE).unwrap();
        assert_ne!(a.trace, c.trace);
    }
}

#[test]
fn packets_are_conserved_per_ue() {
    let cfg = config(ScenarioConfig::default().ues, 0.05);
    let p = prepare(&cfg, &cfg.ap_ids());
    for mode in [Mode::Coordinated, Mode::Uncoordinated] {
        for seed in 1..=3 {
            let out = p.run(mode, seed, RunOptions::default()).unwrap();
            for u in &out.stats.per_ue {
                assert_eq!(u.generated, u.delivered + u.dropped + u.in_flight);
            }
            let ap_total: u64 = out.stats.per_ap.iter().map(|a| a.delivered).sum();
            let ue_total: u64 = out.stats.per_ue.iter().map(|u| u.delivered).sum();
            assert_eq!(ap_total, ue_total);
        }
    }
}

#[test]
fn dropped_packets_reach_the_drop_rate() {
    let cfg = config(ScenarioConfig::default().ues, 0.1);
    let p = prepare(&cfg, &cfg.ap_ids());
    let out = p.run(Mode::Uncoordinated, 1, RunOptions::default()).unwrap();
    let m = compute_metrics(&out.stats);
    let dropped: u64 = out.stats.per_ue.iter().map(|u| u.dropped).sum();
    assert!(dropped > 0);
    assert_eq!(m.nd, dropped);
    let expected = m.nd as f64 * 100.0 / (m.ns + m.nd) as f64;
    assert!((m.drop_rate_pct - expected).abs() < 1e-12);
}

#[test]
fn nav_guard_fires_only_when_the_nav_is_ignored() {
    let cfg = config(ScenarioConfig::default().ues, 0.05);
    let p = prepare(&cfg, &cfg.ap_ids());
    assert!(p.run(Mode::Coordinated, 1, RunOptions::default()).is_ok());
    let hooked = RunOptions {
        trace: false,
        ignore_nav: true,
    };
    match p.run(Mode::Coordinated, 1, hooked) {
        Err(wigig_coord::Error::Sim(SimError::NavGuard { aps, dump, .. })) => {
            assert!(aps.len() >= 2);
            assert!(!dump.is_empty());
        }
        other => panic!("expected the NAV guard to fire, got {other:?}"),
    }
}

#[test]
fn noiseless_ue_at_an_exemplar_gets_the_rank_one_beam() {
    let base = ScenarioConfig {
        aps: vec![ApConfig {
            id: 1,
            position: Position::new(5.3, 3.7, 2.9),
        }],
        sweep: vec![vec![1]],
        ..config(vec![Position::new(1.0, 1.0, 1.0)], 0.01)
    };
    let probe = prepare(&base, &[1]);
    let mut checked = 0;
    for g in probe.exemplars.groups(0).iter().step_by(3) {
        let c = &g.clusters[0];
        let mut cfg = base.clone();
        cfg.ues = vec![probe.map.learning_points()[c.exemplar_lp].position];
        cfg.sim.shadowing_std_db = 0.0;
        let p = prepare(&cfg, &[1]);
        let rank1 = select_best_beams(&c.exemplar, 0, &p.exemplars, 6)[0];
        assert_eq!(rank1, g.sector);
        let out = p.run(Mode::Coordinated, 1, TRACE).unwrap();
        let link = parse(out.trace.as_ref().unwrap())
            .into_iter()
            .find(|l| l.action == "link")
            .expect("a link is formed");
        assert!(link.outcome.starts_with(&format!("sector={rank1},")), "{link:?} vs {rank1}");
        checked += 1;
    }
    assert!(checked >= 3);
}

#[test]
fn nav_serialises_refinement_while_data_overlaps() {
    let cfg = config(two_far_ues(), 0.05);
    let p = prepare(&cfg, &[1, 8]);
    let lines = parse(p.run(Mode::Coordinated, 1, TRACE).unwrap().trace.as_ref().unwrap());

    // Refinement window of an AP: its NAVset through the matching FBK.
    let mut windows: Vec<(String, u64, u64)> = Vec::new();
    let mut open: BTreeMap<String, u64> = BTreeMap::new();
    let mut last_nav: Option<String> = None;
    for l in &lines {
        if l.action == "NAVset" && l.outcome == "ok" {
            open.insert(l.node.clone(), l.t);
            last_nav = Some(l.node.clone());
        }
        if l.action == "FBK" && l.outcome != "start" {
            let ap = last_nav.take().expect("FBK follows a NAVset");
            windows.push((ap.clone(), open.remove(&ap).unwrap(), l.t));
        }
    }
    assert!(windows.iter().any(|w| w.0 == "AP1") && windows.iter().any(|w| w.0 == "AP8"));
    for (i, a) in windows.iter().enumerate() {
        for b in &windows[i + 1..] {
            assert!(!overlaps((a.1, a.2), (b.1, b.2)), "{a:?} overlaps {b:?}");
        }
    }
    let data = frames(&lines, "Data");
    let concurrent = data.iter().any(|a| {
        a.0 == "AP1" && data.iter().any(|b| b.0 == "AP8" && overlaps((a.1, a.2), (b.1, b.2)))
    });
    assert!(concurrent);
}

#[test]
fn sector_sweeps_of_blind_aps_run_concurrently() {
    let cfg = config(two_far_ues(), 0.05);
    let p = prepare(&cfg, &[1, 8]);
    let lines = parse(p.run(Mode::Uncoordinated, 1, TRACE).unwrap().trace.as_ref().unwrap());
    let ssw = frames(&lines, "SSW");
    assert!(ssw.iter().any(|a| {
        a.0 == "AP1" && ssw.iter().any(|b| b.0 == "AP8" && overlaps((a.1, a.2), (b.1, b.2)))
    }));
    assert!(lines.iter().any(|l| l.node == "AP1" && l.action == "link"));
    assert!(lines.iter().any(|l| l.node == "AP8" && l.action == "link"));
}

#[test]
fn overlapping_sector_sweeps_corrupt_each_other_and_are_retried() {
    // One UE next to each of two neighbouring APs, on the line between them,
    // so each AP's sweep lights up the other AP's UE.
    let cfg = config(vec![Position::new(3.6, 2.5, 1.0), Position::new(5.4, 2.5, 1.0)], 0.05);
    let p = prepare(&cfg, &[1, 3]);
    let sectors = cfg.ap_sites()[0].codebook.len();
    let mut clean: BTreeMap<(String, String, usize), bool> = BTreeMap::new();
    let mut corrupted = 0;
    let mut retried = 0;
    for seed in 1..=5 {
        let lines = parse(p.run(Mode::Uncoordinated, seed, TRACE).unwrap().trace.as_ref().unwrap());
        let busy: Vec<(String, u64, u64)> = ["SSW", "SSW-FB", "BRP", "FBK", "Data", "Ack", "Beacon"]
            .iter()
            .flat_map(|a| frames(&lines, a))
            .map(|f| (f.0, f.1, f.2))
            .collect();
        let ssw = frames(&lines, "SSW");
        let feedback = frames(&lines, "SSW-FB");
        // Sweeps run every sector in order; the UE swept answers right after.
        let mut per_ap: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for f in &ssw {
            per_ap.entry(f.0.clone()).or_default().push(f.clone());
        }
        let mut tagged = Vec::new();
        for (ap, list) in &per_ap {
            for (n, sweep) in list.chunks(sectors).enumerate() {
                if sweep.len() < sectors {
                    continue;
                }
                let end = sweep[sectors - 1].2;
                let Some(fb) = feedback.iter().filter(|b| b.1 >= end).min_by_key(|b| b.1 - end) else {
                    continue;
                };
                let next_sweep = list.get((n + 1) * sectors).map(|f| f.1);
                for (sector, f) in sweep.iter().enumerate() {
                    tagged.push(((ap.clone(), fb.0.clone(), sector), f.clone(), next_sweep));
                }
            }
        }
        for (key, f, _) in &tagged {
            let alone = !busy.iter().any(|b| b.0 != f.0 && overlaps((f.1, f.2), (b.1, b.2)));
            if alone {
                let prev = clean.insert(key.clone(), f.3);
                assert!(prev.is_none_or(|v| v == f.3), "static channel gives one outcome per sector {key:?} {f:?}");
            }
        }
        for (key, f, next_sweep) in &tagged {
            let hit = ssw.iter().any(|b| b.0 != f.0 && overlaps((f.1, f.2), (b.1, b.2)));
            if hit && !f.3 && clean.get(key) == Some(&true) {
                corrupted += 1;
                retried += usize::from(next_sweep.is_some());
            }
        }
    }
    assert!(corrupted > 0);
    assert!(retried > 0);
}

#[test]
fn lone_ap_setup_is_longer_without_coordination() {
    let cfg = config(vec![Position::new(4.0, 3.5, 1.0)], 0.05);
    let p = prepare(&cfg, &[1]);
    let mut setup = Vec::new();
    for mode in [Mode::Coordinated, Mode::Uncoordinated] {
        let out = p.run(mode, 1, TRACE).unwrap();
        let m = compute_metrics(&out.stats);
        assert!(m.ns > 0);
        assert_eq!(m.nd, 0);
        let lines = parse(out.trace.as_ref().unwrap());
        let first = lines[0].t;
        let link = lines.iter().find(|l| l.action == "link").unwrap().t;
        setup.push(link - first);
    }
    assert!(setup[0] < setup[1], "{setup:?}");
}

#[test]
fn data_frame_sinr_matches_a_hand_computed_link_budget() {
    let cfg = ScenarioConfig::default();
    let sites = cfg.ap_sites();
    let (a, b) = (&sites[0], &sites[2]);
    let ue = Position::new(4.0, 2.5, 1.0);
    let ch = Channel::build(&cfg.environment, &[a.clone(), b.clone()], &[ue], cfg.sim.wigig_tx_dbm).unwrap();
    let noise = cfg.environment.noise_power_mw;
    let mw = |dbm: f64| 10f64.powf(dbm / 10.0);
    let direct = |site: &wigig_coord::radiomap::ApSite, k: usize| {
        wigig_rx_power_dbm(&cfg.environment, &site.position, &site.codebook.sectors[k], &ue, cfg.sim.wigig_tx_dbm)
            .unwrap()
            .map_or(0.0, mw)
    };
    let serving = ch.ideal_sector(0, 0);
    let signal = direct(a, serving);
    assert!((ch.power_mw(Node::Ap(0), Some(serving), Node::Ue(0), None) - signal).abs() <= 1e-9 * signal);
    let mut fails = 0;
    for k in 0..b.codebook.len() {
        let interference = direct(b, k);
        assert!((ch.power_mw(Node::Ap(1), Some(k), Node::Ue(0), None) - interference).abs() <= 1e-9 * interference);
        let hand = 10.0 * (signal / (interference + noise)).log10();
        assert!((sinr_db(signal, &[interference], noise) - hand).abs() < 1e-9);
        let threshold = 15.0;
        let expected = if hand >= threshold { FrameOutcome::Delivered } else { FrameOutcome::Corrupted };
        assert_eq!(frame_outcome(signal, &[interference], noise, threshold), expected);
        fails += usize::from(expected == FrameOutcome::Corrupted);
    }
    // The interferer's beams towards the UE must actually break the link.
    assert!(fails > 0 && fails < b.codebook.len());
}
