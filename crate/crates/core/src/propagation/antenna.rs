use serde::{Deserialize, Serialize};

use super::PropagationError;

/// Peak gain of the steering antenna for a half-power beamwidth in (0°, 180°], dB.
pub fn g0_db(beamwidth_deg: f64) -> Result<f64, PropagationError> {
    if !(beamwidth_deg > 0.0 && beamwidth_deg <= 180.0) {
        return Err(PropagationError::Beamwidth(beamwidth_deg));
    }
    let half = (beamwidth_deg / 2.0).to_radians();
    Ok(20.0 * (1.6162 / half.sin()).log10())
}

/// One directional sector of an AP codebook.
///
/// Angles are in degrees. Azimuth is measured from the +x axis towards +y,
/// elevation from the horizontal plane with positive values pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub id: u16,
    pub azimuth_deg: f64,
    pub tilt_deg: f64,
    pub beamwidth_az_deg: f64,
    pub beamwidth_el_deg: f64,
    /// G_0; derived from the elevation beamwidth unless overridden.
    pub peak_gain_db: f64,
}

impl Sector {
    pub fn new(
        id: u16,
        azimuth_deg: f64,
        tilt_deg: f64,
        beamwidth_az_deg: f64,
        beamwidth_el_deg: f64,
    ) -> Result<Self, PropagationError> {
        for bw in [beamwidth_az_deg, beamwidth_el_deg] {
            if !(bw > 0.0 && bw < 180.0) {
                return Err(PropagationError::Beamwidth(bw));
            }
        }
        Ok(Self {
            id,
            azimuth_deg,
            tilt_deg,
            beamwidth_az_deg,
            beamwidth_el_deg,
            peak_gain_db: g0_db(beamwidth_el_deg)?,
        })
    }

    pub fn with_peak_gain(mut self, peak_gain_db: f64) -> Self {
        self.peak_gain_db = peak_gain_db;
        self
    }
}

/// Wrap an angle difference into [-180°, 180°].
fn wrap_deg(a: f64) -> f64 {
    let mut w = a.rem_euclid(360.0);
    if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// 3D steering-antenna gain towards (`azimuth_deg`, `elevation_deg`), dB.
pub fn antenna_gain_db(sector: &Sector, azimuth_deg: f64, elevation_deg: f64) -> f64 {
    let g0 = sector.peak_gain_db;
    let max_atten = 12.0 + g0;
    let dphi = wrap_deg(azimuth_deg - sector.azimuth_deg) / sector.beamwidth_az_deg;
    let dtheta = (elevation_deg - sector.tilt_deg) / sector.beamwidth_el_deg;
    let gh = -(12.0 * dphi * dphi).min(max_atten);
    let gv = -(12.0 * dtheta * dtheta).min(max_atten);
    g0 - (-(gh + gv)).min(max_atten)
}

/// The ordered sector set of one AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorCodebook {
    pub ap_id: u16,
    pub sectors: Vec<Sector>,
}

impl SectorCodebook {
    pub fn new(ap_id: u16, sectors: Vec<Sector>) -> Result<Self, PropagationError> {
        let mut ids: Vec<u16> = sectors.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(PropagationError::DuplicateSector(w[0]));
        }
        Ok(Self { ap_id, sectors })
    }

    /// Regular azimuth × tilt grid. Ids run tilt-major from 1, so sector
    /// `t·A + a + 1` points at azimuth `a·360/A` with the `t`-th tilt.
    pub fn grid(
        ap_id: u16,
        azimuth_count: u16,
        tilts_deg: &[f64],
        beamwidth_az_deg: f64,
        beamwidth_el_deg: f64,
        peak_gain_override_db: Option<f64>,
    ) -> Result<Self, PropagationError> {
        let step = 360.0 / f64::from(azimuth_count.max(1));
        let mut sectors = Vec::with_capacity(usize::from(azimuth_count) * tilts_deg.len());
        for (t, tilt) in tilts_deg.iter().enumerate() {
            for a in 0..azimuth_count {
                let id = (t as u16) * azimuth_count + a + 1;
                let mut s = Sector::new(id, f64::from(a) * step, *tilt, beamwidth_az_deg, beamwidth_el_deg)?;
                if let Some(g) = peak_gain_override_db {
                    s = s.with_peak_gain(g);
                }
                sectors.push(s);
            }
        }
        Self::new(ap_id, sectors)
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    pub fn get(&self, id: u16) -> Option<&Sector> {
        self.index_of(id).map(|i| &self.sectors[i])
    }

    pub fn index_of(&self, id: u16) -> Option<usize> {
        // Grid codebooks are stored in id order; fall back to a scan otherwise.
        let guess = usize::from(id).wrapping_sub(1);
        match self.sectors.get(guess) {
            Some(s) if s.id == id => Some(guess),
            _ => self.sectors.iter().position(|s| s.id == id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g0_reference_values() {
        // sin(15°) = 0.258819; 20·log10(1.6162 / 0.258819) = 15.90998
        let expected_30 = 20.0 * (1.6162f64 / 0.258_819_045_102_520_8).log10();
        assert!((g0_db(30.0).unwrap() - expected_30).abs() < 1e-9);
        assert!((g0_db(30.0).unwrap() - 15.90998).abs() < 1e-5);
        assert!((g0_db(180.0).unwrap() - 20.0 * 1.6162f64.log10()).abs() < 1e-12);
        assert!((g0_db(180.0).unwrap() - 4.170).abs() < 1e-3);
        assert!(g0_db(0.0).is_err());
        assert!(g0_db(-5.0).is_err());
        assert!(g0_db(181.0).is_err());
    }

    #[test]
    fn beam_center_half_power_and_floor() {
        let s = Sector::new(7, 60.0, -45.0, 30.0, 30.0).unwrap();
        let g0 = s.peak_gain_db;
        assert_eq!(antenna_gain_db(&s, 60.0, -45.0), g0);
        assert_eq!(antenna_gain_db(&s, 75.0, -45.0), g0 - 3.0);
        assert_eq!(antenna_gain_db(&s, 45.0, -45.0), g0 - 3.0);
        assert_eq!(antenna_gain_db(&s, 60.0, -30.0), g0 - 3.0);
        assert_eq!(antenna_gain_db(&s, 240.0, 40.0), -12.0);
        let forced = s.with_peak_gain(25.0);
        assert_eq!(antenna_gain_db(&forced, 240.0, 40.0), -12.0);
    }

    #[test]
    fn azimuth_wraps_around() {
        let s = Sector::new(1, 350.0, 0.0, 30.0, 30.0).unwrap();
        assert_eq!(antenna_gain_db(&s, 5.0, 0.0), s.peak_gain_db - 3.0);
        assert_eq!(antenna_gain_db(&s, -10.0, 0.0), s.peak_gain_db);
    }

    #[test]
    fn grid_codebook_layout() {
        let cb = SectorCodebook::grid(3, 12, &[-15.0, -45.0, -75.0], 30.0, 30.0, None).unwrap();
        assert_eq!(cb.len(), 36);
        let s = cb.get(14).unwrap();
        assert_eq!((s.azimuth_deg, s.tilt_deg), (30.0, -45.0));
        assert_eq!(cb.index_of(36), Some(35));
        assert!(cb.get(37).is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = Sector::new(1, 0.0, 0.0, 30.0, 30.0).unwrap();
        assert!(SectorCodebook::new(1, vec![s, s]).is_err());
    }

    proptest! {
        #[test]
        fn gain_bounded_and_symmetric(
            az in -720.0f64..720.0,
            el in -90.0f64..90.0,
            center_az in 0.0f64..360.0,
            tilt in -90.0f64..90.0,
            bw_az in 1.0f64..179.0,
            bw_el in 1.0f64..179.0,
        ) {
            let s = Sector::new(1, center_az, tilt, bw_az, bw_el).unwrap();
            let g = antenna_gain_db(&s, az, el);
            prop_assert!(g <= s.peak_gain_db + 1e-12);
            prop_assert!(g >= -12.0 - 1e-9);
            let daz = az - center_az;
            let del = el - tilt;
            let mirrored = antenna_gain_db(&s, center_az - daz, tilt - del);
            prop_assert!((g - mirrored).abs() < 1e-9);
        }
    }
}
