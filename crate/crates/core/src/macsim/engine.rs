use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::channel::{Channel, Node};
use super::csma::{draw_slots, next_cw, Backoff};
use super::event::{ns_from_s, ns_from_us, EventQueue, SimTime};
use super::{
    nav_guard, retransmit_policy, wifi_frame_outcome, ApCounters, Band, BrpAudit, Databases, FrameKind, FrameOutcome,
    Mode, RetryDecision, RunOptions, RunStats, Scenario, SimError, SimOutcome, UeCounters,
};
use crate::coordinator::{ActiveLinkRecord, Coordinator, Mcs};
use crate::propagation::{self, linear_to_db};
use crate::radiomap::SectorId;

/// Mutable session of UE `$u`, borrowing only the UE table.
macro_rules! sess {
    ($e:ident, $u:expr) => {
        $e.ues[$u].session.as_mut().expect("active session")
    };
}

/// Failed beamforming attempts (uncoordinated) before the AP gives up
/// on the UE for one hold-off period.
const MAX_BF_ATTEMPTS: u32 = 4;
const RING: usize = 64;

#[derive(Debug, Clone, Copy)]
struct Packet {
    generated: SimTime,
    failures: u32,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Wake { ue: usize, token: u64 },
    Grant { ue: usize, token: u64 },
    TxEnd { id: u64 },
    Beacon { ap: usize },
    BeaconFrame { ap: usize, k: usize },
    NavExpire { token: u64 },
}

/// What a UE session does when its pending wake-up fires.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    StartSession,
    Associate,
    SendMResp,
    SendSwitchOn,
    SendSsw(usize),
    SendSswFeedback,
    SendBrp(usize),
    SendFbk,
    SendData,
    SendAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Measure,
    SwitchOn,
    NavSet,
    Bid,
    Sweep,
}

#[derive(Debug, Clone, Copy)]
enum Sense {
    Wifi,
    Directional { ap: usize, sector: usize },
}

#[derive(Debug, Clone)]
struct Contender {
    purpose: Purpose,
    band: Band,
    backoff: Backoff,
    sense: Sense,
    token: u64,
}

#[derive(Debug, Clone, Copy)]
struct Link {
    sector: usize,
    mcs: Mcs,
    rate_bps: f64,
    txop_start: SimTime,
    registered: bool,
}

#[derive(Debug, Clone, Default)]
struct Session {
    ap: Option<usize>,
    /// Sender of the measurement request.
    meas_ap: usize,
    psi: Option<Vec<f64>>,
    best: Vec<SectorId>,
    train: Vec<usize>,
    /// (sector index, power, SINR dB) of delivered training frames.
    sweep: Vec<(usize, f64, f64)>,
    brp: Vec<(usize, f64, f64)>,
    brp_done: usize,
    chosen: Option<(usize, f64, f64)>,
    cw: u32,
    attempts: u32,
    link: Option<Link>,
    batch: usize,
    data_end: SimTime,
}

#[derive(Debug)]
struct Ue {
    queue: VecDeque<Packet>,
    next_arrival: Option<SimTime>,
    arrival_s: f64,
    rng: ChaCha12Rng,
    session: Option<Session>,
    contender: Option<Contender>,
    step: Option<Step>,
    token: u64,
    failures_in_row: u32,
    counters: UeCounters,
}

#[derive(Debug, Default, Clone)]
struct Ap {
    reserved: Option<usize>,
    in_bf: bool,
    beaconing: bool,
    fifo: VecDeque<usize>,
    counters: ApCounters,
}

#[derive(Debug, Clone)]
struct Tx {
    id: u64,
    kind: FrameKind,
    from: Node,
    from_sector: Option<usize>,
    to: Option<(Node, Option<usize>)>,
    owner: Option<usize>,
    signal_mw: f64,
    threshold_db: f64,
    min_sinr_db: f64,
    corrupted: bool,
    end: SimTime,
}

#[derive(Debug, Clone, Copy)]
struct Nav {
    holder: usize,
    expiry: SimTime,
    token: u64,
}

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Start,
    Ok,
    Fail,
    Count(u64),
    Link(SectorId, Mcs),
}

#[derive(Debug, Clone, Copy)]
struct TraceRec {
    time: SimTime,
    node: Node,
    action: &'static str,
    band: Band,
    outcome: Outcome,
}

struct TraceLine<'a> {
    rec: &'a TraceRec,
    ap_ids: &'a [u16],
}

impl fmt::Display for TraceLine<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.rec;
        write!(f, "{} ", r.time)?;
        match r.node {
            Node::Ap(a) => write!(f, "AP{}", self.ap_ids[a])?,
            Node::Ue(u) => write!(f, "UE{}", u + 1)?,
        }
        write!(f, " {} {} ", r.action, r.band.as_str())?;
        match r.outcome {
            Outcome::Start => write!(f, "start"),
            Outcome::Ok => write!(f, "ok"),
            Outcome::Fail => write!(f, "fail"),
            Outcome::Count(n) => write!(f, "n={n}"),
            Outcome::Link(s, m) => write!(f, "sector={s},mcs={m}"),
        }
    }
}

pub(super) struct Engine<'a> {
    sc: &'a Scenario,
    ch: &'a Channel,
    mode: Mode,
    coord: Option<Coordinator<'a>>,
    options: RunOptions,
    q: EventQueue<Ev>,
    end: SimTime,
    ues: Vec<Ue>,
    aps: Vec<Ap>,
    assoc: Vec<Option<usize>>,
    ongoing: Vec<Tx>,
    nav: Option<Nav>,
    nav_waiters: Vec<usize>,
    ap_waiters: BTreeSet<usize>,
    /// UEs waiting for a fingerprint measurement, served one at a time.
    meas_queue: VecDeque<usize>,
    measuring: Option<usize>,
    rng_mac: ChaCha12Rng,
    rng_shadow: ChaCha12Rng,
    normal: Normal<f64>,
    next_token: u64,
    next_tx: u64,
    trace: Option<Vec<TraceRec>>,
    ring: VecDeque<TraceRec>,
    audit: Vec<BrpAudit>,
    events: u64,
    // Cached timing in ns.
    wifi_slot: SimTime,
    wifi_sifs: SimTime,
    wifi_pifs: SimTime,
    wifi_difs: SimTime,
    wigig_slot: SimTime,
    wigig_sifs: SimTime,
    wigig_sbifs: SimTime,
    wigig_difs: SimTime,
    control_threshold_db: f64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_MAC: u64 = 1 << 32;
const STREAM_SHADOW: u64 = (1 << 32) + 1;
const STREAM_BEACON: u64 = (1 << 32) + 2;

impl<'a> Engine<'a> {
    pub(super) fn new(
        sc: &'a Scenario,
        ch: &'a Channel,
        mode: Mode,
        seed: u64,
        db: Option<Databases<'a>>,
        options: RunOptions,
    ) -> Self {
        let p = &sc.params;
        let t = &sc.timing;
        let coord = match (mode, db) {
            (Mode::Coordinated, Some(d)) => {
                Some(Coordinator::new(d.map, d.exemplars, &sc.mcs, p.best_beam_count).with_association_margin(p.association_margin_db))
            }
            _ => None,
        };
        let ues = (0..sc.ues.len())
            .map(|u| Ue {
                queue: VecDeque::new(),
                next_arrival: None,
                arrival_s: 0.0,
                rng: rng_for(seed, u as u64),
                session: None,
                contender: None,
                step: None,
                token: 0,
                failures_in_row: 0,
                counters: UeCounters::default(),
            })
            .collect();
        // Strongest-beacon association for the autonomous baseline.
        let coverage_mw = propagation::db_to_linear(sc.env_coverage_dbm());
        let assoc = (0..sc.ues.len())
            .map(|u| {
                (0..sc.aps.len())
                    .map(|a| (a, ch.best_power_mw(a, u)))
                    .filter(|&(_, p)| p >= coverage_mw)
                    .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
                    .map(|(a, _)| a)
            })
            .collect();
        Self {
            sc,
            ch,
            mode,
            coord,
            options,
            q: EventQueue::new(),
            end: ns_from_s(p.duration_s),
            ues,
            aps: vec![Ap::default(); sc.aps.len()],
            assoc,
            ongoing: Vec::new(),
            nav: None,
            nav_waiters: Vec::new(),
            ap_waiters: BTreeSet::new(),
            meas_queue: VecDeque::new(),
            measuring: None,
            rng_mac: rng_for(seed, STREAM_MAC),
            rng_shadow: rng_for(seed, STREAM_SHADOW),
            normal: Normal::new(0.0, p.shadowing_std_db).expect("validated std"),
            next_token: 1,
            next_tx: 1,
            trace: options.trace.then(Vec::new),
            ring: VecDeque::with_capacity(RING),
            audit: Vec::new(),
            events: 0,
            wifi_slot: ns_from_us(t.wifi_slot_us),
            wifi_sifs: ns_from_us(t.wifi_sifs_us),
            wifi_pifs: ns_from_us(t.wifi_pifs_us),
            wifi_difs: ns_from_us(t.wifi_difs_us),
            wigig_slot: ns_from_us(t.wigig_slot_us),
            wigig_sifs: ns_from_us(t.wigig_sifs_us),
            wigig_sbifs: ns_from_us(t.wigig_sbifs_us),
            wigig_difs: ns_from_us(t.wigig_difs_us),
            control_threshold_db: sc.mcs.lowest_threshold_db(),
        }
    }

    fn now(&self) -> SimTime {
        self.q.now()
    }

    fn token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    fn record(&mut self, node: Node, action: &'static str, band: Band, outcome: Outcome) {
        let rec = TraceRec {
            time: self.now(),
            node,
            action,
            band,
            outcome,
        };
        if self.ring.len() == RING {
            self.ring.pop_front();
        }
        self.ring.push_back(rec);
        if let Some(t) = self.trace.as_mut() {
            t.push(rec);
        }
    }

    fn format_records<'r>(&self, recs: impl Iterator<Item = &'r TraceRec>) -> Vec<String> {
        let ap_ids = self.sc.ap_ids();
        recs.map(|rec| {
            TraceLine {
                rec,
                ap_ids: &ap_ids,
            }
            .to_string()
        })
        .collect()
    }

    pub(super) fn run(mut self) -> Result<SimOutcome, SimError> {
        let lambda = self.sc.params.offered_load_bps / self.sc.params.packet_bits();
        let exp = (lambda > 0.0).then(|| Exp::new(lambda).expect("positive rate"));
        for u in 0..self.ues.len() {
            if let Some(exp) = &exp {
                let ue = &mut self.ues[u];
                ue.arrival_s = exp.sample(&mut ue.rng);
                ue.next_arrival = Some(ns_from_s(ue.arrival_s));
            }
            self.schedule_idle_wake(u);
        }
        if self.mode == Mode::Uncoordinated {
            let mut rng = rng_for(0, STREAM_BEACON);
            let interval = self.sc.timing.beacon_interval_s;
            for a in 0..self.aps.len() {
                let offset: f64 = rand::Rng::gen_range(&mut rng, 0.0..interval);
                self.q.push(ns_from_s(offset), Ev::Beacon { ap: a });
            }
        }
        while let Some(t) = self.q.peek_time() {
            if t > self.end {
                break;
            }
            let (_, ev) = self.q.pop().expect("peeked");
            self.events += 1;
            self.handle(ev, exp.as_ref())?;
            if self.mode == Mode::Coordinated {
                let in_bf: Vec<bool> = self.aps.iter().map(|a| a.in_bf).collect();
                if let Err(cols) = nav_guard(&in_bf) {
                    return Err(SimError::NavGuard {
                        time_ns: self.now(),
                        aps: cols.iter().map(|&c| self.sc.aps[c].id).collect(),
                        dump: self.format_records(self.ring.iter()),
                    });
                }
            }
        }
        let end = self.end;
        for u in 0..self.ues.len() {
            self.pull_arrivals(u, end, exp.as_ref());
            let ue = &mut self.ues[u];
            ue.counters.in_flight = ue.queue.len() as u64;
        }
        let trace = self.trace.as_ref().map(|t| self.format_records(t.iter()));
        Ok(SimOutcome {
            stats: RunStats {
                duration_s: self.sc.params.duration_s,
                packet_bits: self.sc.params.packet_bits(),
                ap_ids: self.sc.ap_ids(),
                per_ue: self.ues.iter().map(|u| u.counters).collect(),
                per_ap: self.aps.iter().map(|a| a.counters).collect(),
                events: self.events,
            },
            trace,
            audit: self.audit,
        })
    }

    fn pull_arrivals(&mut self, u: usize, until: SimTime, exp: Option<&Exp<f64>>) {
        let Some(exp) = exp else { return };
        let ue = &mut self.ues[u];
        while let Some(t) = ue.next_arrival {
            if t > until {
                break;
            }
            ue.queue.push_back(Packet {
                generated: t,
                failures: 0,
            });
            ue.counters.generated += 1;
            ue.arrival_s += exp.sample(&mut ue.rng);
            ue.next_arrival = Some(ns_from_s(ue.arrival_s));
        }
    }

    fn handle(&mut self, ev: Ev, exp: Option<&Exp<f64>>) -> Result<(), SimError> {
        match ev {
            Ev::Wake { ue, token } => {
                if self.ues[ue].token != token {
                    return Ok(());
                }
                let now = self.now();
                self.pull_arrivals(ue, now, exp);
                if let Some(step) = self.ues[ue].step.take() {
                    self.on_step(ue, step)?;
                }
            }
            Ev::Grant { ue, token } => {
                let matches = self.ues[ue]
                    .contender
                    .as_ref()
                    .is_some_and(|c| c.token == token && c.backoff.grant_time() == Some(self.now()));
                if matches {
                    let c = self.ues[ue].contender.take().expect("checked");
                    self.on_grant(ue, c.purpose)?;
                }
            }
            Ev::TxEnd { id } => self.end_tx(id, exp)?,
            Ev::Beacon { ap } => self.on_beacon(ap),
            Ev::BeaconFrame { ap, k } => self.send_beacon_frame(ap, k),
            Ev::NavExpire { token } => {
                if let Some(nav) = self.nav {
                    if nav.token == token && !self.aps[nav.holder].in_bf {
                        self.release_nav();
                    }
                }
            }
        }
        Ok(())
    }

    // ---- scheduling helpers ----

    fn wake_at(&mut self, u: usize, at: SimTime, step: Step) {
        let token = self.token();
        let ue = &mut self.ues[u];
        ue.token = token;
        ue.step = Some(step);
        self.q.push(at, Ev::Wake { ue: u, token });
    }

    fn schedule_idle_wake(&mut self, u: usize) {
        if let Some(t) = self.ues[u].next_arrival {
            if t <= self.end {
                let at = t.max(self.now());
                self.wake_at(u, at, Step::StartSession);
            }
        }
    }

    fn holdoff(&mut self, u: usize, step: Step) {
        let p = &self.sc.params;
        let k = self.ues[u].failures_in_row.min(16);
        let us = (p.holdoff_us * f64::from(1u32 << k)).min(p.holdoff_max_us);
        self.ues[u].failures_in_row += 1;
        let at = self.now() + ns_from_us(us);
        self.wake_at(u, at, step);
    }

    fn session_ap(&self, u: usize) -> usize {
        self.ues[u].session.as_ref().and_then(|s| s.ap).expect("reserved AP")
    }

    // ---- contention ----

    fn sensed_busy(&self, band: Band, sense: Sense) -> bool {
        match sense {
            Sense::Wifi => self.ongoing.iter().any(|t| t.kind.band() == Band::Wifi),
            Sense::Directional { ap, sector } => {
                let p: f64 = self
                    .ongoing
                    .iter()
                    .filter(|t| t.kind.band() == band)
                    .map(|t| self.ch.power_mw(t.from, t.from_sector, Node::Ap(ap), Some(sector)))
                    .sum();
                p > 0.0 && linear_to_db(p) > self.sc.params.cs_threshold_dbm
            }
        }
    }

    fn contend(&mut self, u: usize, purpose: Purpose) {
        let cw = self.ues[u].session.as_ref().map_or(0, |s| s.cw);
        let (band, ifs, slot, slots, sense) = match purpose {
            Purpose::Measure | Purpose::SwitchOn | Purpose::NavSet => {
                (Band::Wifi, self.wifi_difs, self.wifi_slot, draw_slots(&mut self.rng_mac, cw), Sense::Wifi)
            }
            Purpose::Bid => {
                // Priority access: PIFS and no backoff unless a BID collided.
                let slots = if cw == 0 { 0 } else { draw_slots(&mut self.rng_mac, cw) };
                (Band::Wifi, self.wifi_pifs, self.wifi_slot, slots, Sense::Wifi)
            }
            Purpose::Sweep => {
                let ap = self.session_ap(u);
                let sector = self.ch.ideal_sector(ap, u);
                (
                    Band::Wigig,
                    self.wigig_difs,
                    self.wigig_slot,
                    draw_slots(&mut self.rng_mac, cw),
                    Sense::Directional { ap, sector },
                )
            }
        };
        self.ues[u].contender = Some(Contender {
            purpose,
            band,
            backoff: Backoff::new(slots, ifs, slot),
            sense,
            token: 0,
        });
        self.refresh_one(u);
    }

    fn refresh_one(&mut self, u: usize) {
        let Some(c) = self.ues[u].contender.as_ref() else { return };
        let busy = self.sensed_busy(c.band, c.sense);
        let counting = c.backoff.is_counting();
        let now = self.now();
        if busy && counting {
            self.ues[u].contender.as_mut().expect("present").backoff.freeze(now);
        } else if !busy && !counting {
            let token = self.token();
            let c = self.ues[u].contender.as_mut().expect("present");
            let grant = c.backoff.resume(now);
            c.token = token;
            self.q.push(grant, Ev::Grant { ue: u, token });
        }
    }

    fn refresh_contenders(&mut self, band: Band) {
        for u in 0..self.ues.len() {
            if self.ues[u].contender.as_ref().is_some_and(|c| c.band == band) {
                self.refresh_one(u);
            }
        }
    }

    // ---- transmissions ----

    #[allow(clippy::too_many_arguments)]
    fn start_tx(
        &mut self,
        kind: FrameKind,
        from: Node,
        from_sector: Option<usize>,
        to: Option<(Node, Option<usize>)>,
        owner: Option<usize>,
        duration: SimTime,
        threshold_db: f64,
    ) -> u64 {
        let id = self.next_tx;
        self.next_tx += 1;
        let band = kind.band();
        let signal_mw = to.map_or(0.0, |(rx, rs)| self.ch.power_mw(from, from_sector, rx, rs));
        let now = self.now();
        let end = now + duration.max(1);
        let mut tx = Tx {
            id,
            kind,
            from,
            from_sector,
            to,
            owner,
            signal_mw,
            threshold_db,
            min_sinr_db: f64::INFINITY,
            corrupted: false,
            end,
        };
        // Frames ending at this very instant are already off the air.
        match band {
            Band::Wifi => {
                for other in self.ongoing.iter_mut().filter(|t| t.kind.band() == Band::Wifi && t.end > now) {
                    other.corrupted = true;
                    tx.corrupted = true;
                }
                self.ongoing.push(tx);
            }
            Band::Wigig => {
                self.ongoing.push(tx);
                self.update_sinr();
            }
        }
        self.record(from, kind.as_str(), band, Outcome::Start);
        self.q.push(end, Ev::TxEnd { id });
        self.refresh_contenders(band);
        id
    }

    /// Fold the current interference into every ongoing 60 GHz reception.
    fn update_sinr(&mut self) {
        let noise = self.ch.noise_mw();
        let now = self.now();
        let on_air = |t: &Tx| t.kind.band() == Band::Wigig && t.end > now;
        let n = self.ongoing.len();
        for i in 0..n {
            let t = &self.ongoing[i];
            if !on_air(t) {
                continue;
            }
            let Some((rx, rs)) = t.to else { continue };
            let interference: f64 = (0..n)
                .filter(|&j| j != i && on_air(&self.ongoing[j]))
                .map(|j| {
                    let o = &self.ongoing[j];
                    self.ch.power_mw(o.from, o.from_sector, rx, rs)
                })
                .sum();
            let sinr = linear_to_db(t.signal_mw / (interference + noise));
            let t = &mut self.ongoing[i];
            t.min_sinr_db = t.min_sinr_db.min(sinr);
        }
    }

    fn end_tx(&mut self, id: u64, exp: Option<&Exp<f64>>) -> Result<(), SimError> {
        let pos = self.ongoing.iter().position(|t| t.id == id).expect("ongoing tx");
        let tx = self.ongoing.swap_remove(pos);
        // Keep a stable order for deterministic interference sums.
        self.ongoing.sort_by_key(|t| t.id);
        let band = tx.kind.band();
        let ok = match band {
            Band::Wifi => wifi_frame_outcome(tx.corrupted) == FrameOutcome::Delivered,
            Band::Wigig => tx.to.is_some() && tx.min_sinr_db >= tx.threshold_db,
        };
        let outcome = if (tx.to.is_none() && band == Band::Wigig) || ok {
            Outcome::Ok
        } else {
            Outcome::Fail
        };
        self.record(tx.from, tx.kind.as_str(), band, outcome);
        self.refresh_contenders(band);
        if let Some(u) = tx.owner {
            let now = self.now();
            self.pull_arrivals(u, now, exp);
            self.on_tx_end(u, &tx, ok)?;
        }
        Ok(())
    }

    // ---- beacons (uncoordinated) ----

    fn on_beacon(&mut self, ap: usize) {
        let next = self.now() + ns_from_s(self.sc.timing.beacon_interval_s);
        self.q.push(next, Ev::Beacon { ap });
        if self.aps[ap].reserved.is_some() || self.aps[ap].beaconing {
            return;
        }
        self.aps[ap].beaconing = true;
        self.send_beacon_frame(ap, 0);
    }

    fn send_beacon_frame(&mut self, ap: usize, k: usize) {
        let d = self.ch.sectors(ap);
        if k == d {
            self.aps[ap].beaconing = false;
            self.ap_next(ap);
            return;
        }
        let dur = ns_from_us(self.sc.timing.ssw_us);
        self.start_tx(FrameKind::Beacon, Node::Ap(ap), Some(k), None, None, dur, 0.0);
        let at = self.now() + dur + self.wigig_sbifs;
        self.q.push(at, Ev::BeaconFrame { ap, k: k + 1 });
    }

    // ---- session control ----

    fn unused_aps(&self) -> BTreeSet<usize> {
        (0..self.aps.len()).filter(|&a| self.aps[a].reserved.is_none()).collect()
    }

    fn on_step(&mut self, u: usize, step: Step) -> Result<(), SimError> {
        let t = &self.sc.timing;
        match step {
            Step::StartSession => self.start_session(u),
            Step::Associate => self.contend(u, Purpose::SwitchOn),
            Step::SendMResp => {
                let dur = ns_from_us(t.mresp_us);
                self.start_tx(FrameKind::WifiMResp, Node::Ue(u), None, None, Some(u), dur, 0.0);
            }
            Step::SendSwitchOn => self.send_switch_on(u),
            Step::SendSsw(k) => {
                let ap = self.session_ap(u);
                let dur = ns_from_us(t.ssw_us);
                let thr = self.control_threshold_db;
                self.start_tx(FrameKind::Ssw, Node::Ap(ap), Some(k), Some((Node::Ue(u), None)), Some(u), dur, thr);
            }
            Step::SendSswFeedback => {
                if sess!(self, u).sweep.is_empty() {
                    return self.bf_fail(u);
                }
                let ap = self.session_ap(u);
                // The AP listens through the strongest swept sector.
                let best = sess!(self, u)
                    .sweep
                    .iter()
                    .copied()
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .expect("non-empty sweep")
                    .0;
                let dur = ns_from_us(t.ssw_feedback_us);
                let thr = self.control_threshold_db;
                self.start_tx(
                    FrameKind::SswFeedback,
                    Node::Ue(u),
                    None,
                    Some((Node::Ap(ap), Some(best))),
                    Some(u),
                    dur,
                    thr,
                );
            }
            Step::SendBrp(k) => {
                let ap = self.session_ap(u);
                let sector = sess!(self, u).train[k];
                let dur = ns_from_us(t.brp_us);
                let thr = self.control_threshold_db;
                self.start_tx(FrameKind::Brp, Node::Ap(ap), Some(sector), Some((Node::Ue(u), None)), Some(u), dur, thr);
            }
            Step::SendFbk => {
                let s = sess!(self, u);
                let best = s
                    .brp
                    .iter()
                    .copied()
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                let Some(best) = best else { return self.bf_fail(u) };
                s.chosen = Some(best);
                let ap = self.session_ap(u);
                let dur = ns_from_us(t.fbk_us);
                let thr = self.control_threshold_db;
                self.start_tx(FrameKind::Fbk, Node::Ue(u), None, Some((Node::Ap(ap), Some(best.0))), Some(u), dur, thr);
            }
            Step::SendData => self.send_data(u),
            Step::SendAck => {
                let ap = self.session_ap(u);
                let sector = sess!(self, u).link.expect("link").sector;
                let dur = ns_from_us(t.ack_us);
                let thr = self.control_threshold_db;
                self.start_tx(FrameKind::Ack, Node::Ue(u), None, Some((Node::Ap(ap), Some(sector))), Some(u), dur, thr);
            }
        }
        Ok(())
    }

    fn start_session(&mut self, u: usize) {
        if self.ues[u].queue.is_empty() {
            self.schedule_idle_wake(u);
            return;
        }
        match self.mode {
            Mode::Coordinated => {
                if self.measuring != Some(u) && !self.meas_queue.contains(&u) {
                    self.meas_queue.push_back(u);
                }
                self.measure_next();
            }
            Mode::Uncoordinated => {
                // UEs no AP covers never get a session; their packets stay queued.
                let Some(ap) = self.assoc[u] else { return };
                self.ues[u].session = Some(Session {
                    ap: Some(ap),
                    cw: self.sc.timing.wigig_cw_min,
                    ..Session::default()
                });
                self.aps[ap].fifo.push_back(u);
                self.ap_next(ap);
            }
        }
    }

    /// Uncoordinated: let an idle AP take the next queued UE.
    fn ap_next(&mut self, ap: usize) {
        if self.mode != Mode::Uncoordinated || self.aps[ap].reserved.is_some() || self.aps[ap].beaconing {
            return;
        }
        let Some(u) = self.aps[ap].fifo.pop_front() else { return };
        self.aps[ap].reserved = Some(u);
        let s = sess!(self, u);
        s.attempts = 0;
        s.cw = self.sc.timing.wigig_cw_min;
        self.contend(u, Purpose::Sweep);
    }

    /// Coordinated: one unused AP runs the next fingerprint measurement.
    fn measure_next(&mut self) {
        if self.measuring.is_some() || self.unused_aps().is_empty() {
            return;
        }
        let Some(u) = self.meas_queue.pop_front() else { return };
        self.measuring = Some(u);
        self.ues[u].session = Some(Session {
            cw: self.sc.timing.wifi_cw_min,
            ..Session::default()
        });
        self.contend(u, Purpose::Measure);
    }

    fn wake_ap_waiters(&mut self) {
        self.measure_next();
        let now = self.now();
        for u in std::mem::take(&mut self.ap_waiters) {
            let step = if self.ues[u].session.as_ref().is_some_and(|s| s.psi.is_some()) {
                if let Some(s) = self.ues[u].session.as_mut() {
                    s.cw = self.sc.timing.wifi_cw_min;
                }
                Step::Associate
            } else {
                Step::StartSession
            };
            self.wake_at(u, now, step);
        }
    }

    fn on_grant(&mut self, u: usize, purpose: Purpose) -> Result<(), SimError> {
        let t = &self.sc.timing;
        match purpose {
            Purpose::Measure => {
                let Some(&sender) = self.unused_aps().iter().next() else {
                    self.measuring = None;
                    self.ues[u].session = None;
                    self.meas_queue.push_front(u);
                    return Ok(());
                };
                sess!(self, u).meas_ap = sender;
                let dur = ns_from_us(t.mreq_us);
                self.start_tx(FrameKind::WifiMReq, Node::Ap(sender), None, None, Some(u), dur, 0.0);
            }
            Purpose::SwitchOn => {
                if sess!(self, u).ap.is_none() && !self.associate(u) {
                    return Ok(());
                }
                self.send_switch_on(u);
            }
            Purpose::NavSet => {
                if !self.options.ignore_nav && self.nav_busy() {
                    self.nav_waiters.push(u);
                    return Ok(());
                }
                let ap = self.session_ap(u);
                let dur = ns_from_us(t.navset_us);
                self.start_tx(FrameKind::NavSet, Node::Ap(ap), None, None, Some(u), dur, 0.0);
            }
            Purpose::Bid => {
                let ap = self.session_ap(u);
                let dur = ns_from_us(t.bid_us);
                self.start_tx(FrameKind::Bid, Node::Ap(ap), None, None, Some(u), dur, 0.0);
            }
            Purpose::Sweep => {
                sess!(self, u).sweep.clear();
                self.on_step(u, Step::SendSsw(0))?;
            }
        }
        Ok(())
    }

    /// Ask the controller for an AP and beam plan; park the UE if none.
    fn associate(&mut self, u: usize) -> bool {
        let unused = self.unused_aps();
        let coord = self.coord.as_ref().expect("coordinated");
        let psi = self.ues[u].session.as_ref().and_then(|s| s.psi.clone()).expect("measured");
        match coord.plan(u, &psi, &unused) {
            None => {
                self.ap_waiters.insert(u);
                false
            }
            Some(plan) => {
                self.aps[plan.ap].reserved = Some(u);
                let s = sess!(self, u);
                s.ap = Some(plan.ap);
                s.best = plan.best_beams;
                true
            }
        }
    }

    fn send_switch_on(&mut self, u: usize) {
        let ap = self.session_ap(u);
        let dur = ns_from_us(self.sc.timing.switch_on_us);
        self.start_tx(FrameKind::SwitchOn, Node::Ap(ap), None, Some((Node::Ue(u), None)), Some(u), dur, 0.0);
    }

    fn nav_busy(&self) -> bool {
        self.nav
            .is_some_and(|n| self.now() < n.expiry || self.aps[n.holder].in_bf)
    }

    fn release_nav(&mut self) {
        self.nav = None;
        for u in std::mem::take(&mut self.nav_waiters) {
            sess!(self, u).cw = self.sc.timing.wifi_cw_min;
            self.contend(u, Purpose::NavSet);
        }
    }

    fn end_bf(&mut self, ap: usize) {
        self.aps[ap].in_bf = false;
        if let Some(nav) = self.nav {
            if nav.holder == ap {
                if self.now() >= nav.expiry {
                    self.release_nav();
                } else {
                    self.q.push(nav.expiry, Ev::NavExpire { token: nav.token });
                }
            }
        }
    }

    fn bf_fail(&mut self, u: usize) -> Result<(), SimError> {
        let ap = self.session_ap(u);
        match self.mode {
            Mode::Coordinated => {
                // The fingerprint led nowhere: measure afresh after a holdoff.
                self.end_bf(ap);
                self.aps[ap].reserved = None;
                self.ues[u].session = None;
                self.holdoff(u, Step::StartSession);
                self.wake_ap_waiters();
            }
            Mode::Uncoordinated => {
                let s = sess!(self, u);
                s.attempts += 1;
                if s.attempts < MAX_BF_ATTEMPTS {
                    s.cw = next_cw(s.cw, self.sc.timing.wigig_cw_max);
                    self.contend(u, Purpose::Sweep);
                } else {
                    self.aps[ap].reserved = None;
                    self.ues[u].session = None;
                    self.holdoff(u, Step::StartSession);
                    self.ap_next(ap);
                }
            }
        }
        Ok(())
    }

    fn retry_contention(&mut self, u: usize, purpose: Purpose) {
        let s = sess!(self, u);
        s.cw = next_cw(s.cw, self.sc.timing.wifi_cw_max);
        self.contend(u, purpose);
    }

    fn on_tx_end(&mut self, u: usize, tx: &Tx, ok: bool) -> Result<(), SimError> {
        let now = self.now();
        match tx.kind {
            FrameKind::WifiMReq => {
                if ok {
                    self.wake_at(u, now + self.wifi_sifs, Step::SendMResp);
                } else {
                    self.retry_contention(u, Purpose::Measure);
                }
            }
            FrameKind::WifiMResp => {
                if !ok {
                    self.retry_contention(u, Purpose::Measure);
                    return Ok(());
                }
                let psi: Vec<f64> = self
                    .sc
                    .aps
                    .iter()
                    .map(|ap| {
                        let shadow = self.normal.sample(&mut self.rng_shadow);
                        propagation::wifi_rss_dbm(
                            &self.sc.env,
                            &ap.position,
                            &self.sc.ues[u],
                            self.sc.params.wifi_tx_dbm,
                            shadow,
                        )
                    })
                    .collect();
                sess!(self, u).psi = Some(psi);
                self.measuring = None;
                if self.associate(u) {
                    self.wake_at(u, now + self.wifi_sifs, Step::SendSwitchOn);
                }
                self.measure_next();
            }
            FrameKind::SwitchOn => {
                if ok {
                    sess!(self, u).cw = self.sc.timing.wifi_cw_min;
                    self.contend(u, Purpose::NavSet);
                } else {
                    self.retry_contention(u, Purpose::SwitchOn);
                }
            }
            FrameKind::NavSet => {
                if !ok {
                    self.retry_contention(u, Purpose::NavSet);
                    return Ok(());
                }
                self.start_refinement(u);
            }
            FrameKind::Ssw => {
                let Some(from) = tx.from_sector else { return Ok(()) };
                if ok {
                    sess!(self, u).sweep.push((from, tx.signal_mw, tx.min_sinr_db));
                }
                let ap = self.session_ap(u);
                if from + 1 < self.ch.sectors(ap) {
                    self.wake_at(u, now + self.wigig_sbifs, Step::SendSsw(from + 1));
                } else {
                    self.wake_at(u, now + self.wigig_sifs, Step::SendSswFeedback);
                }
            }
            FrameKind::SswFeedback => {
                if !ok {
                    return self.bf_fail(u);
                }
                let x = self.sc.params.best_beam_count;
                let s = sess!(self, u);
                let mut ranked = s.sweep.clone();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                s.train = ranked.iter().take(x).map(|r| r.0).collect();
                s.brp.clear();
                s.brp_done = 0;
                self.wake_at(u, now + self.wigig_sifs, Step::SendBrp(0));
            }
            FrameKind::Brp => {
                let s = sess!(self, u);
                if ok {
                    s.brp.push((tx.from_sector.expect("sector"), tx.signal_mw, tx.min_sinr_db));
                }
                s.brp_done += 1;
                let done = s.brp_done;
                let total = s.train.len();
                if done < total {
                    self.wake_at(u, now + self.wigig_sifs, Step::SendBrp(done));
                } else {
                    self.wake_at(u, now + self.wigig_sifs, Step::SendFbk);
                }
            }
            FrameKind::Fbk => {
                if !ok {
                    return self.bf_fail(u);
                }
                match self.mode {
                    Mode::Coordinated => {
                        sess!(self, u).cw = 0;
                        self.contend(u, Purpose::Bid);
                    }
                    Mode::Uncoordinated => self.link_up(u)?,
                }
            }
            FrameKind::Bid => {
                if !ok {
                    let s = sess!(self, u);
                    s.cw = next_cw(s.cw.max(self.sc.timing.wifi_cw_min / 2), self.sc.timing.wifi_cw_max);
                    self.contend(u, Purpose::Bid);
                    return Ok(());
                }
                self.link_up(u)?;
            }
            FrameKind::Data => {
                if ok {
                    sess!(self, u).data_end = now;
                    self.wake_at(u, now + self.wigig_sifs, Step::SendAck);
                } else {
                    self.data_failure(u);
                }
            }
            FrameKind::Ack => {
                if ok {
                    self.deliver_batch(u);
                    sess!(self, u).cw = self.sc.timing.wigig_cw_min;
                    self.wake_at(u, now + self.wigig_sifs, Step::SendData);
                } else {
                    self.data_failure(u);
                }
            }
            FrameKind::Beacon => {}
        }
        Ok(())
    }

    fn start_refinement(&mut self, u: usize) {
        let now = self.now();
        let ap = self.session_ap(u);
        let token = self.token();
        let declared = ns_from_us(self.sc.timing.nav_duration_us(self.sc.params.best_beam_count));
        self.nav = Some(Nav {
            holder: ap,
            expiry: now + declared,
            token,
        });
        self.aps[ap].in_bf = true;
        let best = sess!(self, u).best.clone();
        let coord = self.coord.as_ref().expect("coordinated");
        let beams = coord.training_list(ap, &best);
        let active_links: Vec<ActiveLinkRecord> = coord.active_links().copied().collect();
        self.audit.push(BrpAudit {
            time_ns: now,
            ap,
            ue: u,
            beams: beams.clone(),
            active_links,
        });
        let codebook = &self.sc.aps[ap].codebook;
        let train: Vec<usize> = beams
            .iter()
            .map(|&b| codebook.index_of(b).expect("plan uses codebook ids"))
            .collect();
        if train.is_empty() {
            // Every candidate would hurt an active link: defer.
            self.end_bf(ap);
            self.aps[ap].reserved = None;
            sess!(self, u).ap = None;
            self.holdoff(u, Step::Associate);
            self.wake_ap_waiters();
            return;
        }
        let s = sess!(self, u);
        s.train = train;
        s.brp.clear();
        s.brp_done = 0;
        self.wake_at(u, now + self.wigig_sifs, Step::SendBrp(0));
    }

    fn link_up(&mut self, u: usize) -> Result<(), SimError> {
        let now = self.now();
        let ap = self.session_ap(u);
        let (sector, power_mw, sinr_db) = sess!(self, u).chosen.expect("chosen beam");
        let mcs = self.sc.mcs.mcs_from_snr(sinr_db - self.sc.params.mcs_margin_db).max(1);
        let rate_bps = self.sc.mcs.entry(mcs).expect("valid MCS").rate_bps;
        let mut registered = false;
        if self.mode == Mode::Coordinated {
            let record = ActiveLinkRecord {
                ap,
                beam: self.sc.aps[ap].codebook.sectors[sector].id,
                rx_power_dbm: linear_to_db(power_mw),
                mcs,
            };
            self.coord.as_mut().expect("coordinated").register_link(record)?;
            registered = true;
            self.end_bf(ap);
        }
        self.ues[u].failures_in_row = 0;
        self.aps[ap].counters.sessions += 1;
        sess!(self, u).link = Some(Link {
            sector,
            mcs,
            rate_bps,
            txop_start: now,
            registered,
        });
        sess!(self, u).cw = self.sc.timing.wigig_cw_min;
        let id = self.sc.aps[ap].codebook.sectors[sector].id;
        self.record(Node::Ap(ap), "link", Band::Wigig, Outcome::Link(id, mcs));
        self.wake_at(u, now + self.wigig_sifs, Step::SendData);
        Ok(())
    }

    fn send_data(&mut self, u: usize) {
        let now = self.now();
        let txop = ns_from_us(self.sc.params.txop_limit_us);
        let link = sess!(self, u).link.expect("link");
        if self.ues[u].queue.is_empty() || now.saturating_sub(link.txop_start) >= txop {
            self.end_session(u);
            return;
        }
        let batch = self.ues[u].queue.len().min(self.sc.params.ampdu_max_packets);
        sess!(self, u).batch = batch;
        let bits = batch as f64 * self.sc.params.packet_bits();
        let dur = ns_from_us(self.sc.timing.data_preamble_us) + (bits / link.rate_bps * 1e9).ceil() as SimTime;
        let ap = self.session_ap(u);
        let thr = self.sc.mcs.entry(link.mcs).expect("valid mcs").min_snr_db;
        self.start_tx(FrameKind::Data, Node::Ap(ap), Some(link.sector), Some((Node::Ue(u), None)), Some(u), dur, thr);
    }

    fn deliver_batch(&mut self, u: usize) {
        let ap = self.session_ap(u);
        let (batch, at) = {
            let s = sess!(self, u);
            (s.batch, s.data_end)
        };
        let ue = &mut self.ues[u];
        for p in ue.queue.drain(..batch) {
            let delay = at - p.generated;
            ue.counters.delivered += 1;
            ue.counters.delay_sum_ns += u128::from(delay);
            ue.counters.min_delay_ns = Some(ue.counters.min_delay_ns.map_or(delay, |m| m.min(delay)));
        }
        self.aps[ap].counters.delivered += batch as u64;
    }

    fn data_failure(&mut self, u: usize) {
        let ap = self.session_ap(u);
        let batch = sess!(self, u).batch;
        let max = self.sc.params.max_retransmissions;
        let ue = &mut self.ues[u];
        let mut kept = VecDeque::with_capacity(ue.queue.len());
        let mut dropped = 0u64;
        for (i, mut p) in ue.queue.drain(..).enumerate() {
            if i < batch {
                p.failures += 1;
                if retransmit_policy(p.failures, max) == RetryDecision::Drop {
                    dropped += 1;
                    continue;
                }
            }
            kept.push_back(p);
        }
        ue.queue = kept;
        if dropped > 0 {
            ue.counters.dropped += dropped;
            self.aps[ap].counters.dropped += dropped;
            self.record(Node::Ap(ap), "drop", Band::Wigig, Outcome::Count(dropped));
            self.end_session(u);
            return;
        }
        let fallback = self.sc.params.rate_fallback;
        let cw = {
            let s = sess!(self, u);
            s.cw = next_cw(s.cw, self.sc.timing.wigig_cw_max);
            if let Some(link) = s.link.as_mut().filter(|l| fallback && l.mcs > 1) {
                link.mcs -= 1;
                link.rate_bps = self.sc.mcs.entry(link.mcs).expect("valid MCS").rate_bps;
            }
            s.cw
        };
        let wait = self.wigig_difs + SimTime::from(draw_slots(&mut self.rng_mac, cw)) * self.wigig_slot;
        let at = self.now() + wait;
        self.wake_at(u, at, Step::SendData);
    }

    fn end_session(&mut self, u: usize) {
        let ap = self.session_ap(u);
        let registered = sess!(self, u).link.is_some_and(|l| l.registered);
        if registered {
            if let Some(c) = self.coord.as_mut() {
                c.release_link(ap);
            }
        }
        self.aps[ap].reserved = None;
        self.ues[u].session = None;
        match self.mode {
            Mode::Coordinated => {
                self.start_session(u);
                self.wake_ap_waiters();
            }
            Mode::Uncoordinated => {
                self.start_session(u);
                self.ap_next(ap);
            }
        }
    }
}

impl Scenario {
    /// Coverage level used for strongest-beacon association.
    fn env_coverage_dbm(&self) -> f64 {
        linear_to_db(self.env.noise_power_mw) + self.mcs.lowest_threshold_db()
    }
}
