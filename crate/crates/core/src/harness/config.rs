use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::McsTable;
use crate::learning::AffinityParams;
use crate::macsim::{Mode, Scenario, SimParams, TimingConfig};
use crate::propagation::{linear_to_db, Environment, Position, SectorCodebook};
use crate::radiomap::{uniform_grid, ApSite, LearningPoint, RadioMap, RadioMapError, SurveyParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub id: u16,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub azimuth_count: u16,
    pub tilts_deg: Vec<f64>,
    pub beamwidth_az_deg: f64,
    pub beamwidth_el_deg: f64,
    /// Overrides the beamwidth-derived peak gain of every sector.
    pub peak_gain_db: Option<f64>,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            azimuth_count: 12,
            tilts_deg: vec![-15.0, -45.0, -75.0],
            beamwidth_az_deg: 30.0,
            beamwidth_el_deg: 30.0,
            peak_gain_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpGridConfig {
    pub nx: usize,
    pub ny: usize,
    pub z_m: f64,
}

impl Default for LpGridConfig {
    fn default() -> Self {
        Self { nx: 15, ny: 6, z_m: 1.0 }
    }
}

/// Eight ceiling APs in two rows of four. Ids are spread over the rows so
/// that the usual AP-count subsets stay spatially dispersed.
pub fn default_ap_layout() -> Vec<ApConfig> {
    const Z: f64 = 2.9;
    [
        (1, 2.25, 2.5),
        (2, 2.25, 7.5),
        (3, 6.75, 2.5),
        (4, 11.25, 7.5),
        (5, 6.75, 7.5),
        (6, 11.25, 2.5),
        (7, 15.75, 2.5),
        (8, 15.75, 7.5),
    ]
    .into_iter()
    .map(|(id, x, y)| ApConfig {
        id,
        position: Position::new(x, y, Z),
    })
    .collect()
}

/// 24 UEs on a 6 × 4 grid at desk height.
pub fn default_ue_layout() -> Vec<Position> {
    let mut out = Vec::with_capacity(24);
    for j in 0..4 {
        for i in 0..6 {
            out.push(Position::new(1.5 + 3.0 * i as f64, 1.25 + 2.5 * j as f64, 1.0));
        }
    }
    out
}

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn default_sweep() -> Vec<Vec<u16>> {
    vec![vec![1], vec![1, 8], vec![1, 2, 7, 8], vec![1, 2, 3, 4, 5, 7], (1..=8).collect()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub environment: Environment,
    pub aps: Vec<ApConfig>,
    pub codebook: CodebookConfig,
    pub ues: Vec<Position>,
    pub learning_points: LpGridConfig,
    pub timing: TimingConfig,
    pub sim: SimParams,
    /// When false, `sim.offered_load_bps` is the total over all UEs.
    pub load_per_ue: bool,
    pub mcs_table: McsTable,
    /// Survey coverage level; noise plus the lowest MCS threshold when absent.
    pub coverage_threshold_dbm: Option<f64>,
    pub affinity: AffinityParams,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    /// AP id subsets of the AP-count sweep.
    pub sweep: Vec<Vec<u16>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            environment: Environment::default(),
            aps: default_ap_layout(),
            codebook: CodebookConfig::default(),
            ues: default_ue_layout(),
            learning_points: LpGridConfig::default(),
            timing: TimingConfig::default(),
            sim: SimParams::default(),
            load_per_ue: true,
            mcs_table: McsTable::default(),
            coverage_threshold_dbm: None,
            affinity: AffinityParams::default(),
            mode: Mode::Coordinated,
            seeds: default_seeds(),
            sweep: default_sweep(),
        }
    }
}

/// Read, default-fill and validate a JSON config. Unknown keys are
/// returned as warnings.
pub fn parse_config(path: impl AsRef<Path>) -> Result<(ScenarioConfig, Vec<String>), ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_json(&text)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let mut warnings = Vec::new();
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_ignored::deserialize(de, |path| {
            warnings.push(format!("unknown config key '{path}' ignored"));
        })
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok((config, warnings))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let env = &self.environment;
        env.validate().map_err(|e| field_err("environment", e.to_string()))?;
        let room = format!("the {} x {} x {} m room", env.width_m, env.depth_m, env.height_m);
        if self.aps.is_empty() {
            return Err(field_err("aps", "at least one AP is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, ap) in self.aps.iter().enumerate() {
            if !env.contains(&ap.position) {
                return Err(field_err(format!("aps[{i}].position"), format!("{:?} lies outside {room}", ap.position)));
            }
            if !ids.insert(ap.id) {
                return Err(field_err(format!("aps[{i}].id"), format!("duplicate AP id {}", ap.id)));
            }
        }
        if self.ues.is_empty() {
            return Err(field_err("ues", "at least one UE is required"));
        }
        for (i, ue) in self.ues.iter().enumerate() {
            if !env.contains(ue) {
                return Err(field_err(format!("ues[{i}]"), format!("{ue:?} lies outside {room}")));
            }
            if self.ues[..i].iter().any(|o| o == ue) {
                return Err(field_err(format!("ues[{i}]"), "two UEs share one position"));
            }
        }
        let cb = &self.codebook;
        if cb.azimuth_count == 0 || cb.tilts_deg.is_empty() {
            return Err(field_err("codebook", "needs at least one azimuth and one tilt"));
        }
        SectorCodebook::grid(0, cb.azimuth_count, &cb.tilts_deg, cb.beamwidth_az_deg, cb.beamwidth_el_deg, cb.peak_gain_db)
            .map_err(|e| field_err("codebook", e.to_string()))?;
        let lp = &self.learning_points;
        if lp.nx == 0 || lp.ny == 0 {
            return Err(field_err("learning_points", "nx and ny must be positive"));
        }
        if !(0.0..=env.height_m).contains(&lp.z_m) {
            return Err(field_err("learning_points.z_m", format!("{} outside {room}", lp.z_m)));
        }
        self.timing.validate().map_err(|m| field_err("timing", m))?;
        self.sim.validate().map_err(|m| field_err("sim", m))?;
        let a = &self.affinity;
        if !(0.5..1.0).contains(&a.damping) || a.max_iter == 0 {
            return Err(field_err("affinity", "damping must lie in [0.5, 1) and max_iter be positive"));
        }
        if self.seeds.is_empty() {
            return Err(field_err("seeds", "at least one seed is required"));
        }
        for (i, subset) in self.sweep.iter().enumerate() {
            if subset.is_empty() {
                return Err(field_err(format!("sweep[{i}]"), "empty AP subset"));
            }
            let mut seen = BTreeSet::new();
            for id in subset {
                if !ids.contains(id) {
                    return Err(field_err(format!("sweep[{i}]"), format!("unknown AP id {id}")));
                }
                if !seen.insert(id) {
                    return Err(field_err(format!("sweep[{i}]"), format!("AP id {id} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn ap_ids(&self) -> Vec<u16> {
        self.aps.iter().map(|a| a.id).collect()
    }

    pub fn ap_sites(&self) -> Vec<ApSite> {
        let cb = &self.codebook;
        self.aps
            .iter()
            .map(|ap| ApSite {
                id: ap.id,
                position: ap.position,
                codebook: SectorCodebook::grid(
                    ap.id,
                    cb.azimuth_count,
                    &cb.tilts_deg,
                    cb.beamwidth_az_deg,
                    cb.beamwidth_el_deg,
                    cb.peak_gain_db,
                )
                .expect("validated codebook"),
            })
            .collect()
    }

    pub fn lps(&self) -> Vec<LearningPoint> {
        let g = &self.learning_points;
        uniform_grid(&self.environment, g.nx, g.ny, g.z_m)
    }

    pub fn coverage_threshold_dbm(&self) -> f64 {
        self.coverage_threshold_dbm.unwrap_or_else(|| {
            linear_to_db(self.environment.noise_power_mw) + self.mcs_table.lowest_threshold_db()
        })
    }

    pub fn survey_params(&self) -> SurveyParams {
        SurveyParams {
            wifi_tx_dbm: self.sim.wifi_tx_dbm,
            wigig_tx_dbm: self.sim.wigig_tx_dbm,
            coverage_threshold_dbm: self.coverage_threshold_dbm(),
        }
    }

    /// Survey the LP grid from every configured AP.
    pub fn build_radio_map(&self) -> Result<RadioMap, RadioMapError> {
        RadioMap::build(&self.environment, &self.ap_sites(), &self.lps(), self.survey_params())
    }

    /// Simulation parameters with the offered load resolved per UE.
    pub fn sim_params(&self) -> SimParams {
        let mut p = self.sim.clone();
        if !self.load_per_ue {
            p.offered_load_bps /= self.ues.len() as f64;
        }
        p
    }

    /// Runtime scenario with the listed APs (in that order) active.
    pub fn scenario(&self, ap_ids: &[u16]) -> Result<Scenario, ConfigError> {
        let sites = self.ap_sites();
        let aps = ap_ids
            .iter()
            .map(|id| {
                sites
                    .iter()
                    .find(|s| s.id == *id)
                    .cloned()
                    .ok_or_else(|| field_err("aps", format!("unknown AP id {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Scenario {
            env: self.environment.clone(),
            aps,
            ues: self.ues.clone(),
            timing: self.timing.clone(),
            params: self.sim_params(),
            mcs: self.mcs_table.clone(),
        })
    }
}
