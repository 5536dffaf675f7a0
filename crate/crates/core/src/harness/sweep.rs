use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ScenarioConfig};
use super::metrics::{compute_metrics, MetricsReport};
use crate::learning::{build_exemplars, ExemplarSet};
use crate::macsim::{self, Channel, Databases, Mode, RunOptions, Scenario, SimOutcome};
use crate::radiomap::{Database, RadioMap};
use crate::Result;

pub const CSV_HEADER: [&str; 9] = [
    "ap_count",
    "mode",
    "throughput_gbps",
    "delay_ms",
    "drop_rate_pct",
    "throughput_std",
    "delay_std",
    "drop_std",
    "seeds",
];

/// AP id subsets, one simulated configuration each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub subsets: Vec<Vec<u16>>,
}

impl SweepSpec {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            subsets: config.sweep.clone(),
        }
    }
}

/// Mean and standard deviation over seeds of one (AP count, mode) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub ap_count: usize,
    pub mode: Mode,
    pub throughput_gbps: f64,
    pub delay_ms: Option<f64>,
    pub drop_rate_pct: f64,
    pub throughput_std: f64,
    pub delay_std: Option<f64>,
    pub drop_std: f64,
    pub seeds: usize,
    /// Per-seed reports behind the aggregates (not written to CSV).
    pub runs: Vec<MetricsReport>,
}

/// Sample mean and (n − 1) standard deviation; the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Everything needed to run one AP subset, built once and shared by seeds.
pub struct PreparedSubset {
    pub ap_ids: Vec<u16>,
    pub scenario: Scenario,
    pub channel: Channel,
    pub map: RadioMap,
    pub exemplars: ExemplarSet,
}

impl PreparedSubset {
    /// Restrict the full database to `ap_ids`. Exemplars are relearned on
    /// the restricted fingerprints unless the subset is the whole database
    /// and exemplars are already stored.
    pub fn new(config: &ScenarioConfig, db: &Database, ap_ids: &[u16]) -> Result<Self> {
        let scenario = config.scenario(ap_ids)?;
        let map = db.map.select_aps(ap_ids)?;
        let exemplars = match &db.exemplars {
            Some(ex) if db.map.ap_ids() == ap_ids => ex.clone(),
            _ => build_exemplars(&map, &config.affinity)?,
        };
        let channel = Channel::build(&scenario.env, &scenario.aps, &scenario.ues, scenario.params.wigig_tx_dbm)?;
        Ok(Self {
            ap_ids: ap_ids.to_vec(),
            scenario,
            channel,
            map,
            exemplars,
        })
    }

    pub fn run(&self, mode: Mode, seed: u64, options: RunOptions) -> Result<SimOutcome> {
        let db = Databases {
            map: &self.map,
            exemplars: &self.exemplars,
        };
        Ok(macsim::run_with_channel(
            &self.scenario,
            &self.channel,
            mode,
            seed,
            Some(db),
            options,
        )?)
    }
}

/// One run of the listed APs.
pub fn simulate(
    config: &ScenarioConfig,
    db: &Database,
    ap_ids: &[u16],
    mode: Mode,
    seed: u64,
    options: RunOptions,
) -> Result<SimOutcome> {
    PreparedSubset::new(config, db, ap_ids)?.run(mode, seed, options)
}

/// Every (subset, mode, seed) combination, aggregated over seeds.
/// Runs execute in parallel; rows come out in subset-then-mode order.
pub fn run_sweep(
    config: &ScenarioConfig,
    db: &Database,
    spec: &SweepSpec,
    modes: &[Mode],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(ConfigError::Field {
            field: "seeds".into(),
            message: "at least one seed is required".into(),
        }
        .into());
    }
    let prepared = spec
        .subsets
        .iter()
        .map(|ids| PreparedSubset::new(config, db, ids))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Mode, u64)> = (0..prepared.len())
        .flat_map(|i| modes.iter().flat_map(move |&m| seeds.iter().map(move |&s| (i, m, s))))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(i, mode, seed)| {
            prepared[i]
                .run(mode, seed, RunOptions::default())
                .map(|o| compute_metrics(&o.stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (cell, chunk) in reports.chunks(seeds.len()).enumerate() {
        let (i, mode, _) = jobs[cell * seeds.len()];
        let pick = |f: fn(&MetricsReport) -> f64| chunk.iter().map(f).collect::<Vec<_>>();
        let (t, t_sd) = mean_std(&pick(|r| r.throughput_gbps)).expect("non-empty");
        let (d, d_sd) = mean_std(&pick(|r| r.drop_rate_pct)).expect("non-empty");
        let delays: Vec<f64> = chunk.iter().filter_map(|r| r.delay_ms).collect();
        let delay = mean_std(&delays);
        rows.push(SweepRow {
            ap_count: prepared[i].ap_ids.len(),
            mode,
            throughput_gbps: t,
            delay_ms: delay.map(|x| x.0),
            drop_rate_pct: d,
            throughput_std: t_sd,
            delay_std: delay.map(|x| x.1),
            drop_std: d_sd,
            seeds: seeds.len(),
            runs: chunk.to_vec(),
        });
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.ap_count.to_string(),
            r.mode.to_string(),
            r.throughput_gbps.to_string(),
            fmt_opt(r.delay_ms),
            r.drop_rate_pct.to_string(),
            r.throughput_std.to_string(),
            fmt_opt(r.delay_std),
            r.drop_std.to_string(),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

/// Parse a file written by [`write_csv`]; per-seed runs are not stored.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |m: String| ConfigError::Parse(m);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(bad(format!("unexpected CSV header {header:?}")).into());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad number '{s}': {e}")));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(SweepRow {
            ap_count: f(0).parse().map_err(|e| bad(format!("bad ap_count: {e}")))?,
            mode: f(1).parse().map_err(bad)?,
            throughput_gbps: num(f(2))?,
            delay_ms: opt(f(3))?,
            drop_rate_pct: num(f(4))?,
            throughput_std: num(f(5))?,
            delay_std: opt(f(6))?,
            drop_std: num(f(7))?,
            seeds: f(8).parse().map_err(|e| bad(format!("bad seeds: {e}")))?,
            runs: Vec::new(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ap_count: usize, delay: Option<f64>) -> SweepRow {
        SweepRow {
            ap_count,
            mode: Mode::Coordinated,
            throughput_gbps: 1.234567891,
            delay_ms: delay,
            drop_rate_pct: 0.5,
            throughput_std: 0.01,
            delay_std: delay.map(|_| 0.2),
            drop_std: 0.0,
            seeds: 10,
            runs: Vec::new(),
        }
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[3.5]), Some((3.5, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_results_give_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(1, Some(12.25)), row(8, None)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("8,coordinated,1.234567891,,0.5"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }
}
