use serde::{Deserialize, Serialize};

use crate::macsim::RunStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApMetrics {
    pub ap_id: u16,
    pub throughput_gbps: f64,
    pub delivered: u64,
    pub dropped: u64,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub throughput_gbps: f64,
    /// Mean generation-to-reception delay; `None` when nothing was delivered.
    pub delay_ms: Option<f64>,
    pub drop_rate_pct: f64,
    /// False when NS + ND = 0 and the rate is reported as 0 by convention.
    pub drop_rate_defined: bool,
    /// Successfully received packets.
    pub ns: u64,
    /// Packets discarded at the retransmission limit.
    pub nd: u64,
    pub generated: u64,
    pub in_flight: u64,
    pub per_ap: Vec<ApMetrics>,
}

/// `ND × 100 / (NS + ND)`, with 0/0 reported as 0 and flagged.
pub fn drop_rate_pct(ns: u64, nd: u64) -> (f64, bool) {
    if ns + nd == 0 {
        (0.0, false)
    } else {
        (nd as f64 * 100.0 / (ns + nd) as f64, true)
    }
}

pub fn compute_metrics(stats: &RunStats) -> MetricsReport {
    let ns: u64 = stats.per_ue.iter().map(|u| u.delivered).sum();
    let nd: u64 = stats.per_ue.iter().map(|u| u.dropped).sum();
    let delay_sum: u128 = stats.per_ue.iter().map(|u| u.delay_sum_ns).sum();
    let gbps = |packets: u64| packets as f64 * stats.packet_bits / stats.duration_s / 1e9;
    let (drop_rate_pct, drop_rate_defined) = drop_rate_pct(ns, nd);
    MetricsReport {
        throughput_gbps: gbps(ns),
        delay_ms: (ns > 0).then(|| delay_sum as f64 / ns as f64 / 1e6),
        drop_rate_pct,
        drop_rate_defined,
        ns,
        nd,
        generated: stats.per_ue.iter().map(|u| u.generated).sum(),
        in_flight: stats.per_ue.iter().map(|u| u.in_flight).sum(),
        per_ap: stats
            .ap_ids
            .iter()
            .zip(&stats.per_ap)
            .map(|(&ap_id, c)| ApMetrics {
                ap_id,
                throughput_gbps: gbps(c.delivered),
                delivered: c.delivered,
                dropped: c.dropped,
                sessions: c.sessions,
            })
            .collect(),
    }
}
