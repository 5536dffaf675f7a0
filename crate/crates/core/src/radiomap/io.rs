//! On-disk database: one JSON document holding the radio map and, once the
//! learning step has run, the exemplar set.
//!
//! ```text
//! {
//!   "format": "wigig-radiomap", "version": 1,
//!   "L": <lps>, "N": <aps>, "sectors_per_ap": [D_1, ..., D_N],
//!   "ap_ids": [...], "noise_power_mw": σ²,
//!   "learning_points": [{"index": 1, "position": {"x":..,"y":..,"z":..}}, ...],
//!   "psi":      [[dBm; N]; L],
//!   "phi":      [[sector id | null; N]; L],
//!   "p_off_mw": [[mW; N]; L],
//!   "exemplars": null | { ... }
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LearningPoint, RadioMap, RadioMapError, SectorId};
use crate::learning::ExemplarSet;

pub const FORMAT_NAME: &str = "wigig-radiomap";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatabaseFile {
    format: String,
    version: u32,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "N")]
    n: usize,
    sectors_per_ap: Vec<usize>,
    ap_ids: Vec<u16>,
    noise_power_mw: f64,
    learning_points: Vec<LearningPoint>,
    psi: Vec<Vec<f64>>,
    phi: Vec<Vec<Option<SectorId>>>,
    p_off_mw: Vec<Vec<f64>>,
    #[serde(default)]
    exemplars: Option<ExemplarSet>,
}

/// A radio map together with its (optional) learned exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub map: RadioMap,
    pub exemplars: Option<ExemplarSet>,
}

impl Database {
    pub fn new(map: RadioMap) -> Self {
        Self { map, exemplars: None }
    }

    pub fn to_json(&self) -> Result<String, RadioMapError> {
        let m = &self.map;
        let file = DatabaseFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            l: m.num_lps(),
            n: m.num_aps(),
            sectors_per_ap: m.sectors_per_ap.clone(),
            ap_ids: m.ap_ids.clone(),
            noise_power_mw: m.noise_mw,
            learning_points: m.lps.clone(),
            psi: m.psi.clone(),
            phi: m.phi.clone(),
            p_off_mw: m.p_off_mw.clone(),
            exemplars: self.exemplars.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RadioMapError> {
        let file: DatabaseFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
            return Err(RadioMapError::Format {
                format: file.format,
                version: file.version,
            });
        }
        if file.l != file.learning_points.len() || file.n != file.ap_ids.len() {
            return Err(RadioMapError::Dimension(format!(
                "header says L = {}, N = {} but body has {} LPs and {} APs",
                file.l,
                file.n,
                file.learning_points.len(),
                file.ap_ids.len()
            )));
        }
        let map = RadioMap::from_parts(
            file.ap_ids,
            file.sectors_per_ap,
            file.learning_points,
            file.psi,
            file.phi,
            file.p_off_mw,
            file.noise_power_mw,
        )?;
        if let Some(ex) = &file.exemplars {
            ex.validate_against(&map)?;
        }
        Ok(Self {
            map,
            exemplars: file.exemplars,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RadioMapError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RadioMapError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
