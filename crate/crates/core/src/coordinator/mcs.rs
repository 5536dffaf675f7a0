use serde::{Deserialize, Serialize};

use super::CoordinatorError;

/// Modulation and coding scheme index; 0 means "no transmission".
pub type Mcs = u8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: Mcs,
    pub min_snr_db: f64,
    pub rate_bps: f64,
}

/// Ordered MCS ladder with strictly increasing SNR thresholds and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<McsEntry>", into = "Vec<McsEntry>")]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl TryFrom<Vec<McsEntry>> for McsTable {
    type Error = CoordinatorError;

    fn try_from(entries: Vec<McsEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<McsTable> for Vec<McsEntry> {
    fn from(t: McsTable) -> Self {
        t.entries
    }
}

impl Default for McsTable {
    /// Single-carrier 60 GHz rates, 385 Mb/s to 4.62 Gb/s, with SNR
    /// thresholds evenly spaced from 1 dB to 21 dB.
    fn default() -> Self {
        const RATES_MBPS: [f64; 12] = [
            385.0, 770.0, 962.5, 1155.0, 1251.25, 1540.0, 1925.0, 2310.0, 2502.5, 3080.0, 3850.0, 4620.0,
        ];
        let entries = RATES_MBPS
            .iter()
            .enumerate()
            .map(|(i, r)| McsEntry {
                index: i as Mcs + 1,
                min_snr_db: 1.0 + 20.0 * i as f64 / 11.0,
                rate_bps: r * 1e6,
            })
            .collect();
        Self { entries }
    }
}

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self, CoordinatorError> {
        if entries.is_empty() {
            return Err(CoordinatorError::McsTable("empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if usize::from(e.index) != i + 1 {
                return Err(CoordinatorError::McsTable(format!(
                    "entry {i} has index {}, expected {}",
                    e.index,
                    i + 1
                )));
            }
            if !(e.min_snr_db.is_finite() && e.rate_bps > 0.0) {
                return Err(CoordinatorError::McsTable(format!("entry {} not finite/positive", e.index)));
            }
        }
        for w in entries.windows(2) {
            if !(w[1].min_snr_db > w[0].min_snr_db && w[1].rate_bps > w[0].rate_bps) {
                return Err(CoordinatorError::McsTable(format!(
                    "entries {} and {} not strictly increasing",
                    w[0].index, w[1].index
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn highest(&self) -> Mcs {
        self.entries.len() as Mcs
    }

    /// Highest index whose threshold is at or below `snr_db`; 0 below all.
    pub fn mcs_from_snr(&self, snr_db: f64) -> Mcs {
        self.entries
            .iter()
            .rev()
            .find(|e| e.min_snr_db <= snr_db)
            .map_or(0, |e| e.index)
    }

    pub fn entry(&self, mcs: Mcs) -> Option<&McsEntry> {
        usize::from(mcs).checked_sub(1).and_then(|i| self.entries.get(i))
    }

    /// Threshold of the most robust MCS; control frames are held to it.
    pub fn lowest_threshold_db(&self) -> f64 {
        self.entries[0].min_snr_db
    }
}
