//! Synthetic physical layer.
//!
//! Directional gain follows the IEEE 802.11ad steering-antenna model, 60 GHz
//! multipath comes from an image-method ray generator in a rectangular room,
//! and the 5 GHz fingerprint channel is a log-distance model with optional
//! interior-wall penetration loss. Everything here is a pure function of its
//! inputs.

mod antenna;
mod rays;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use antenna::{antenna_gain_db, g0_db, Sector, SectorCodebook};
pub use rays::{trace_rays, Ray, Surface};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Thermal noise power spectral density at 290 K, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("beamwidth {0}° outside (0°, 180°)")]
    Beamwidth(f64),
    #[error("transmitter and receiver coincide at {0:?}")]
    Coincident(Position),
    #[error("position {0:?} outside the environment")]
    OutsideEnvironment(Position),
    #[error("invalid environment: {0}")]
    Environment(String),
    #[error("duplicate sector id {0} in codebook")]
    DuplicateSector(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A vertical wall segment inside the room, given by its footprint in the xy plane.
/// Only the 5 GHz model accounts for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteriorWall {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl InteriorWall {
    /// Whether the xy projection of the segment `a`–`b` crosses this wall.
    fn crosses(&self, a: &Position, b: &Position) -> bool {
        fn orient(px: f64, py: f64, qx: f64, qy: f64, rx: f64, ry: f64) -> f64 {
            (qx - px) * (ry - py) - (qy - py) * (rx - px)
        }
        let d1 = orient(self.x0, self.y0, self.x1, self.y1, a.x, a.y);
        let d2 = orient(self.x0, self.y0, self.x1, self.y1, b.x, b.y);
        let d3 = orient(a.x, a.y, b.x, b.y, self.x0, self.y0);
        let d4 = orient(a.x, a.y, b.x, b.y, self.x1, self.y1);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }
}

/// Per-surface reflection loss of the six room boundaries at 60 GHz, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectionLoss {
    pub wall_x0: f64,
    pub wall_x1: f64,
    pub wall_y0: f64,
    pub wall_y1: f64,
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for ReflectionLoss {
    fn default() -> Self {
        Self {
            wall_x0: 10.0,
            wall_x1: 10.0,
            wall_y0: 10.0,
            wall_y1: 10.0,
            floor: 15.0,
            ceiling: 12.0,
        }
    }
}

impl ReflectionLoss {
    pub fn uniform(db: f64) -> Self {
        Self {
            wall_x0: db,
            wall_x1: db,
            wall_y0: db,
            wall_y1: db,
            floor: db,
            ceiling: db,
        }
    }

    pub fn get(&self, surface: Surface) -> f64 {
        match surface {
            Surface::WallX0 => self.wall_x0,
            Surface::WallX1 => self.wall_x1,
            Surface::WallY0 => self.wall_y0,
            Surface::WallY1 => self.wall_y1,
            Surface::Floor => self.floor,
            Surface::Ceiling => self.ceiling,
        }
    }
}

/// 5 GHz log-distance channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WifiChannel {
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    /// Loss at the reference distance; free-space loss at the WiFi carrier when absent.
    pub reference_loss_db: Option<f64>,
    pub wall_penetration_db: f64,
    pub interior_walls: Vec<InteriorWall>,
}

impl Default for WifiChannel {
    fn default() -> Self {
        Self {
            path_loss_exponent: 2.2,
            reference_distance_m: 1.0,
            reference_loss_db: None,
            wall_penetration_db: 5.0,
            interior_walls: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Environment {
    pub width_m: f64,
    pub depth_m: f64,
    pub height_m: f64,
    pub reflection_loss_db: ReflectionLoss,
    pub max_reflections: u32,
    pub wifi_frequency_hz: f64,
    pub wigig_frequency_hz: f64,
    /// Receiver noise power σ² over the WiGig channel, mW.
    pub noise_power_mw: f64,
    pub wifi: WifiChannel,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            width_m: 18.0,
            depth_m: 10.0,
            height_m: 3.0,
            reflection_loss_db: ReflectionLoss::default(),
            max_reflections: 2,
            wifi_frequency_hz: 5.18e9,
            wigig_frequency_hz: 60.48e9,
            noise_power_mw: thermal_noise_mw(1.76e9, 10.0),
            wifi: WifiChannel::default(),
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |msg: &str| Err(PropagationError::Environment(msg.to_string()));
        if !(self.width_m > 0.0 && self.depth_m > 0.0 && self.height_m > 0.0) {
            return bad("room dimensions must be positive");
        }
        let r = &self.reflection_loss_db;
        if [r.wall_x0, r.wall_x1, r.wall_y0, r.wall_y1, r.floor, r.ceiling]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return bad("reflection losses must be non-negative");
        }
        if !(self.noise_power_mw > 0.0) {
            return bad("noise power must be positive");
        }
        if !(self.wifi_frequency_hz > 0.0 && self.wigig_frequency_hz > 0.0) {
            return bad("carrier frequencies must be positive");
        }
        if !(self.wifi.reference_distance_m > 0.0) {
            return bad("WiFi reference distance must be positive");
        }
        Ok(())
    }

    pub fn contains(&self, p: &Position) -> bool {
        const EPS: f64 = 1e-9;
        p.is_finite()
            && (-EPS..=self.width_m + EPS).contains(&p.x)
            && (-EPS..=self.depth_m + EPS).contains(&p.y)
            && (-EPS..=self.height_m + EPS).contains(&p.z)
    }

    pub fn check_inside(&self, p: &Position) -> Result<(), PropagationError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(PropagationError::OutsideEnvironment(*p))
        }
    }

    pub fn wigig_wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.wigig_frequency_hz
    }
}

/// Thermal noise over `bandwidth_hz` with the given receiver noise figure, mW.
pub fn thermal_noise_mw(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    db_to_linear(THERMAL_NOISE_DBM_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear to dB; zero maps to negative infinity.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Free-space loss `20·log10(4πd/λ)` in dB.
pub fn free_space_loss_db(distance_m: f64, frequency_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / frequency_hz;
    20.0 * (4.0 * std::f64::consts::PI * distance_m / lambda).log10()
}

/// Linear power gain of a ray set, including the transmit and receive
/// antenna gains along each ray. `None` for a sector means an isotropic
/// (0 dBi) antenna on that side.
pub fn path_gain_linear(
    rays: &[Ray],
    wavelength_m: f64,
    tx_sector: Option<&Sector>,
    rx_sector: Option<&Sector>,
) -> f64 {
    let k = wavelength_m / (4.0 * std::f64::consts::PI);
    rays.iter()
        .map(|ray| {
            let mut gain_db = -ray.loss_db;
            if let Some(s) = tx_sector {
                gain_db += antenna_gain_db(s, ray.departure_azimuth_deg, ray.departure_elevation_deg);
            }
            if let Some(s) = rx_sector {
                gain_db += antenna_gain_db(s, ray.arrival_azimuth_deg, ray.arrival_elevation_deg);
            }
            let free = k / ray.length_m;
            db_to_linear(gain_db) * free * free
        })
        .sum()
}

/// Received 60 GHz power at `ue` when the AP transmits through `sector`,
/// summing ray powers incoherently. `None` means no coverage (no rays).
pub fn wigig_rx_power_dbm(
    env: &Environment,
    ap: &Position,
    sector: &Sector,
    ue: &Position,
    tx_power_dbm: f64,
) -> Result<Option<f64>, PropagationError> {
    let rays = trace_rays(env, ap, ue, env.max_reflections)?;
    if rays.is_empty() {
        return Ok(None);
    }
    let gain = path_gain_linear(&rays, env.wigig_wavelength_m(), Some(sector), None);
    Ok(Some(tx_power_dbm + linear_to_db(gain)))
}

/// 5 GHz received signal strength under the log-distance model.
///
/// `shadowing_db` is added as is; offline databases pass zero and online
/// measurements pass a Gaussian draw.
pub fn wifi_rss_dbm(
    env: &Environment,
    ap: &Position,
    ue: &Position,
    tx_power_dbm: f64,
    shadowing_db: f64,
) -> f64 {
    let ch = &env.wifi;
    let d0 = ch.reference_distance_m;
    let d = ap.distance(ue).max(d0);
    let pl0 = ch
        .reference_loss_db
        .unwrap_or_else(|| free_space_loss_db(d0, env.wifi_frequency_hz));
    let walls = ch.interior_walls.iter().filter(|w| w.crosses(ap, ue)).count() as f64;
    tx_power_dbm - pl0 - 10.0 * ch.path_loss_exponent * (d / d0).log10()
        - walls * ch.wall_penetration_db
        + shadowing_db
}
