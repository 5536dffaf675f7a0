//! Discrete-event MAC engine.
//!
//! Two operating modes share the same channel, traffic and data-phase code:
//!
//! - coordinated: WiFi measurement exchange, controller association and
//!   beam planning, NAV-protected BRP over the bad-beam-free training list,
//!   BID announcement, then 60 GHz data;
//! - uncoordinated: strongest-beacon association, directional carrier
//!   sense, full sector sweep, BRP over the strongest swept sectors, then
//!   60 GHz data.

mod channel;
mod csma;
mod engine;
mod event;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{ActiveLinkRecord, CoordinatorError, McsTable};
use crate::learning::ExemplarSet;
use crate::propagation::{linear_to_db, Environment, Position, PropagationError};
use crate::radiomap::{ApSite, RadioMap, SectorId};

pub use channel::{Channel, Node};
pub use csma::{draw_slots, next_cw, Backoff};
pub use event::{ns_from_s, ns_from_us, EventQueue, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("coordinated mode needs a radio map and exemplars")]
    MissingDatabases,
    #[error("databases do not match the scenario: {0}")]
    DatabaseMismatch(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("NAV guard: APs {aps:?} in BF refinement together at t = {time_ns} ns")]
    NavGuard {
        time_ns: SimTime,
        aps: Vec<u16>,
        dump: Vec<String>,
    },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Coordinated,
    Uncoordinated,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Coordinated => "coordinated",
            Mode::Uncoordinated => "uncoordinated",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coordinated" | "coord" => Ok(Mode::Coordinated),
            "uncoordinated" | "uncoord" => Ok(Mode::Uncoordinated),
            other => Err(format!("unknown mode '{other}' (expected coordinated or uncoordinated)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Band {
    Wifi,
    Wigig,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Wifi => "5GHz",
            Band::Wigig => "60GHz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    WifiMReq,
    WifiMResp,
    SwitchOn,
    NavSet,
    Brp,
    Fbk,
    Bid,
    Ssw,
    SswFeedback,
    Data,
    Ack,
    Beacon,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::WifiMReq => "MReq",
            FrameKind::WifiMResp => "MResp",
            FrameKind::SwitchOn => "SwitchOn",
            FrameKind::NavSet => "NAVset",
            FrameKind::Brp => "BRP",
            FrameKind::Fbk => "FBK",
            FrameKind::Bid => "BID",
            FrameKind::Ssw => "SSW",
            FrameKind::SswFeedback => "SSW-FB",
            FrameKind::Data => "Data",
            FrameKind::Ack => "Ack",
            FrameKind::Beacon => "Beacon",
        }
    }

    pub fn band(self) -> Band {
        match self {
            FrameKind::WifiMReq | FrameKind::WifiMResp | FrameKind::SwitchOn | FrameKind::NavSet | FrameKind::Bid => {
                Band::Wifi
            }
            _ => Band::Wigig,
        }
    }
}

/// MAC timing constants. Durations in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub wifi_slot_us: f64,
    pub wifi_sifs_us: f64,
    pub wifi_pifs_us: f64,
    pub wifi_difs_us: f64,
    pub wifi_cw_min: u32,
    pub wifi_cw_max: u32,
    pub mreq_us: f64,
    pub mresp_us: f64,
    pub switch_on_us: f64,
    pub navset_us: f64,
    pub bid_us: f64,
    pub wigig_slot_us: f64,
    pub wigig_sifs_us: f64,
    pub wigig_sbifs_us: f64,
    pub wigig_difs_us: f64,
    pub wigig_cw_min: u32,
    pub wigig_cw_max: u32,
    pub ssw_us: f64,
    pub ssw_feedback_us: f64,
    pub brp_us: f64,
    pub fbk_us: f64,
    pub ack_us: f64,
    pub data_preamble_us: f64,
    pub beacon_interval_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            wifi_slot_us: 9.0,
            wifi_sifs_us: 16.0,
            wifi_pifs_us: 25.0,
            wifi_difs_us: 34.0,
            wifi_cw_min: 15,
            wifi_cw_max: 1023,
            mreq_us: 28.0,
            mresp_us: 28.0,
            switch_on_us: 28.0,
            navset_us: 28.0,
            bid_us: 32.0,
            wigig_slot_us: 5.0,
            wigig_sifs_us: 3.0,
            wigig_sbifs_us: 1.0,
            wigig_difs_us: 13.0,
            wigig_cw_min: 15,
            wigig_cw_max: 1023,
            ssw_us: 16.0,
            ssw_feedback_us: 16.0,
            brp_us: 4.0,
            fbk_us: 4.0,
            ack_us: 3.0,
            data_preamble_us: 2.0,
            beacon_interval_s: 1.0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("wifi_slot_us", self.wifi_slot_us),
            ("wifi_sifs_us", self.wifi_sifs_us),
            ("wifi_pifs_us", self.wifi_pifs_us),
            ("wifi_difs_us", self.wifi_difs_us),
            ("mreq_us", self.mreq_us),
            ("mresp_us", self.mresp_us),
            ("switch_on_us", self.switch_on_us),
            ("navset_us", self.navset_us),
            ("bid_us", self.bid_us),
            ("wigig_slot_us", self.wigig_slot_us),
            ("wigig_sifs_us", self.wigig_sifs_us),
            ("wigig_sbifs_us", self.wigig_sbifs_us),
            ("wigig_difs_us", self.wigig_difs_us),
            ("ssw_us", self.ssw_us),
            ("ssw_feedback_us", self.ssw_feedback_us),
            ("brp_us", self.brp_us),
            ("fbk_us", self.fbk_us),
            ("ack_us", self.ack_us),
            ("data_preamble_us", self.data_preamble_us),
            ("beacon_interval_s", self.beacon_interval_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.wifi_cw_min > self.wifi_cw_max || self.wigig_cw_min > self.wigig_cw_max {
            return Err("contention window minimum exceeds maximum".into());
        }
        if !(self.wifi_sifs_us < self.wifi_pifs_us && self.wifi_pifs_us < self.wifi_difs_us) {
            return Err("WiFi IFS must satisfy SIFS < PIFS < DIFS".into());
        }
        if self.wigig_sifs_us >= self.wigig_difs_us {
            return Err("60 GHz IFS must satisfy SIFS < DIFS".into());
        }
        Ok(())
    }

    /// Declared NAV: X BRP frames with their SIFS gaps, then FBK and BID.
    pub fn nav_duration_us(&self, beams: usize) -> f64 {
        beams as f64 * (self.brp_us + self.wigig_sifs_us) + self.fbk_us + self.bid_us
    }

    /// 60 GHz airtime of BRP over `beams` candidates followed by FBK.
    pub fn brp_phase_us(&self, beams: usize) -> f64 {
        beams as f64 * (self.brp_us + self.wigig_sifs_us) + self.fbk_us
    }

    /// 60 GHz airtime of a sweep over `sectors` sectors, its feedback, and
    /// the BRP phase over `beams` candidates.
    pub fn sls_brp_phase_us(&self, sectors: usize, beams: usize) -> f64 {
        sectors as f64 * self.ssw_us
            + sectors.saturating_sub(1) as f64 * self.wigig_sbifs_us
            + self.wigig_sifs_us
            + self.ssw_feedback_us
            + self.wigig_sifs_us
            + self.brp_phase_us(beams)
    }
}

/// Traffic, power and protocol parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub duration_s: f64,
    /// Offered load of each UE.
    pub offered_load_bps: f64,
    pub packet_size_octets: u32,
    pub max_retransmissions: u32,
    pub ampdu_max_packets: usize,
    pub txop_limit_us: f64,
    pub best_beam_count: usize,
    pub cs_threshold_dbm: f64,
    pub shadowing_std_db: f64,
    pub wifi_tx_dbm: f64,
    pub wigig_tx_dbm: f64,
    /// Base delay before a failed beamforming attempt is retried; doubled
    /// on every consecutive failure up to `holdoff_max_us`.
    pub holdoff_us: f64,
    pub holdoff_max_us: f64,
    /// Coordinated association only considers unused APs whose predicted
    /// power is within this many dB of the best AP; `None` disables the gate.
    pub association_margin_db: Option<f64>,
    /// Data MCS is picked for the measured SINR minus this margin.
    pub mcs_margin_db: f64,
    /// Step the data MCS down by one after every failed A-MPDU.
    pub rate_fallback: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            duration_s: 1.0,
            offered_load_bps: 1e9,
            packet_size_octets: 1500,
            max_retransmissions: 10,
            ampdu_max_packets: 64,
            txop_limit_us: 500.0,
            best_beam_count: 6,
            cs_threshold_dbm: -60.0,
            shadowing_std_db: 1.0,
            wifi_tx_dbm: 20.0,
            wigig_tx_dbm: 10.0,
            holdoff_us: 100.0,
            holdoff_max_us: 5000.0,
            association_margin_db: Some(1.0),
            mcs_margin_db: 2.0,
            rate_fallback: true,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.offered_load_bps.is_finite() && self.offered_load_bps >= 0.0) {
            return Err("offered_load_bps must be finite and non-negative".into());
        }
        if self.packet_size_octets == 0 {
            return Err("packet_size_octets must be positive".into());
        }
        if self.max_retransmissions == 0 {
            return Err("max_retransmissions must be positive".into());
        }
        if self.ampdu_max_packets == 0 || self.best_beam_count == 0 {
            return Err("ampdu_max_packets and best_beam_count must be positive".into());
        }
        for (name, v) in [
            ("txop_limit_us", self.txop_limit_us),
            ("holdoff_us", self.holdoff_us),
            ("holdoff_max_us", self.holdoff_max_us),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.association_margin_db.is_some_and(|m| !(m.is_finite() && m >= 0.0)) {
            return Err("association_margin_db must be non-negative".into());
        }
        if !(self.mcs_margin_db.is_finite() && self.mcs_margin_db >= 0.0) {
            return Err("mcs_margin_db must be non-negative".into());
        }
        if !(self.shadowing_std_db.is_finite() && self.shadowing_std_db >= 0.0) {
            return Err("shadowing_std_db must be non-negative".into());
        }
        Ok(())
    }

    pub fn packet_bits(&self) -> f64 {
        8.0 * f64::from(self.packet_size_octets)
    }
}

/// Everything a run needs besides the databases.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub env: Environment,
    /// Active APs, in radio-map column order.
    pub aps: Vec<ApSite>,
    pub ues: Vec<Position>,
    pub timing: TimingConfig,
    pub params: SimParams,
    pub mcs: McsTable,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = SimError::InvalidScenario;
        if self.aps.is_empty() {
            return Err(bad("no active APs".into()));
        }
        self.env.validate()?;
        for ap in &self.aps {
            self.env.check_inside(&ap.position)?;
            if ap.codebook.is_empty() {
                return Err(bad(format!("AP {} has an empty codebook", ap.id)));
            }
        }
        for ue in &self.ues {
            self.env.check_inside(ue)?;
        }
        self.timing.validate().map_err(bad)?;
        self.params.validate().map_err(bad)?;
        Ok(())
    }

    pub fn ap_ids(&self) -> Vec<u16> {
        self.aps.iter().map(|a| a.id).collect()
    }
}

/// Offline databases for coordinated mode.
#[derive(Debug, Clone, Copy)]
pub struct Databases<'a> {
    pub map: &'a RadioMap,
    pub exemplars: &'a ExemplarSet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
    /// Test hook: let APs start BF refinement while another AP holds the NAV.
    pub ignore_nav: bool,
}

/// One BRP phase as started, with the links that were active at that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BrpAudit {
    pub time_ns: SimTime,
    /// Radio-map column.
    pub ap: usize,
    pub ue: usize,
    pub beams: Vec<SectorId>,
    pub active_links: Vec<ActiveLinkRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UeCounters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    /// Sum of generation-to-reception delays of delivered packets.
    pub delay_sum_ns: u128,
    pub min_delay_ns: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApCounters {
    pub delivered: u64,
    pub dropped: u64,
    pub sessions: u64,
}

/// Raw counters of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub duration_s: f64,
    pub packet_bits: f64,
    pub ap_ids: Vec<u16>,
    pub per_ue: Vec<UeCounters>,
    pub per_ap: Vec<ApCounters>,
    pub events: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub stats: RunStats,
    pub trace: Option<Vec<String>>,
    pub audit: Vec<BrpAudit>,
}

/// Run one simulation.
pub fn run(
    scenario: &Scenario,
    mode: Mode,
    seed: u64,
    databases: Option<Databases<'_>>,
    options: RunOptions,
) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let channel = Channel::build(&scenario.env, &scenario.aps, &scenario.ues, scenario.params.wigig_tx_dbm)?;
    run_with_channel(scenario, &channel, mode, seed, databases, options)
}

/// [`run`] with a prebuilt channel table (reused across seeds).
pub fn run_with_channel(
    scenario: &Scenario,
    channel: &Channel,
    mode: Mode,
    seed: u64,
    databases: Option<Databases<'_>>,
    options: RunOptions,
) -> Result<SimOutcome, SimError> {
    if channel.num_aps() != scenario.aps.len() || channel.num_ues() != scenario.ues.len() {
        return Err(SimError::InvalidScenario("channel table built for another scenario".into()));
    }
    if mode == Mode::Coordinated {
        let db = databases.ok_or(SimError::MissingDatabases)?;
        if db.map.ap_ids() != scenario.ap_ids().as_slice() {
            return Err(SimError::DatabaseMismatch(format!(
                "map APs {:?}, scenario APs {:?}",
                db.map.ap_ids(),
                scenario.ap_ids()
            )));
        }
        for (n, ap) in scenario.aps.iter().enumerate() {
            if db.map.sectors_per_ap()[n] != ap.codebook.len() {
                return Err(SimError::DatabaseMismatch(format!("AP {} codebook size", ap.id)));
            }
        }
        db.exemplars
            .validate_against(db.map)
            .map_err(|e| SimError::DatabaseMismatch(e.to_string()))?;
    }
    engine::Engine::new(scenario, channel, mode, seed, databases, options).run()
}

/// Decision after a failed transmission attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryDecision {
    Retry,
    Drop,
}

/// `failures` counts the failed attempts so far, including this one.
pub fn retransmit_policy(failures: u32, max_retransmissions: u32) -> RetryDecision {
    if failures < max_retransmissions {
        RetryDecision::Retry
    } else {
        RetryDecision::Drop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOutcome {
    Delivered,
    Corrupted,
}

pub fn sinr_db(signal_mw: f64, interference_mw: &[f64], noise_mw: f64) -> f64 {
    linear_to_db(signal_mw / (interference_mw.iter().sum::<f64>() + noise_mw))
}

/// 60 GHz reception rule: delivered iff SINR reaches the frame threshold.
pub fn frame_outcome(signal_mw: f64, interference_mw: &[f64], noise_mw: f64, threshold_db: f64) -> FrameOutcome {
    if sinr_db(signal_mw, interference_mw, noise_mw) >= threshold_db {
        FrameOutcome::Delivered
    } else {
        FrameOutcome::Corrupted
    }
}

/// Single shared 5 GHz channel: any time overlap corrupts both frames.
pub fn wifi_frame_outcome(overlapped: bool) -> FrameOutcome {
    if overlapped {
        FrameOutcome::Corrupted
    } else {
        FrameOutcome::Delivered
    }
}

/// At most one AP may be in BF refinement; returns the offending columns.
pub fn nav_guard(in_refinement: &[bool]) -> Result<(), Vec<usize>> {
    let aps: Vec<usize> = (0..in_refinement.len()).filter(|&a| in_refinement[a]).collect();
    if aps.len() > 1 {
        Err(aps)
    } else {
        Ok(())
    }
}
