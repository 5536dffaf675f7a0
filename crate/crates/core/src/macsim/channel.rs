use crate::propagation::{self, db_to_linear, Environment, Position, PropagationError};
use crate::radiomap::ApSite;

/// A 60 GHz radio endpoint: AP by column, UE by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Ap(usize),
    Ue(usize),
}

/// Precomputed 60 GHz power table for one scenario.
///
/// AP antennas are indexed by sector position in the codebook, with one
/// extra trailing index standing for a quasi-omni (0 dBi) pattern. UEs
/// always use 0 dBi. Links are reciprocal and every transmitter uses the
/// same power.
#[derive(Debug, Clone)]
pub struct Channel {
    sectors: Vec<usize>,
    /// `[ap][ue][sector]`, mW at the receiver.
    ap_ue: Vec<Vec<Vec<f64>>>,
    /// `[a][b][sa * (D_b + 1) + sb]`.
    ap_ap: Vec<Vec<Vec<f64>>>,
    ue_ue: Vec<Vec<f64>>,
    noise_mw: f64,
}

impl Channel {
    pub fn build(
        env: &Environment,
        aps: &[ApSite],
        ues: &[Position],
        tx_power_dbm: f64,
    ) -> Result<Self, PropagationError> {
        let tx_mw = db_to_linear(tx_power_dbm);
        let lambda = env.wigig_wavelength_m();
        let sectors: Vec<usize> = aps.iter().map(|a| a.codebook.len()).collect();
        let patterns = |ap: &ApSite| -> Vec<Option<propagation::Sector>> {
            ap.codebook.sectors.iter().copied().map(Some).chain([None]).collect()
        };
        let mut ap_ue = Vec::with_capacity(aps.len());
        for ap in aps {
            let pats = patterns(ap);
            let mut row = Vec::with_capacity(ues.len());
            for ue in ues {
                let rays = propagation::trace_rays(env, &ap.position, ue, env.max_reflections)?;
                row.push(
                    pats.iter()
                        .map(|p| tx_mw * propagation::path_gain_linear(&rays, lambda, p.as_ref(), None))
                        .collect(),
                );
            }
            ap_ue.push(row);
        }
        let mut ap_ap = vec![vec![Vec::new(); aps.len()]; aps.len()];
        for (a, tx) in aps.iter().enumerate() {
            let pa = patterns(tx);
            for (b, rx) in aps.iter().enumerate() {
                if a == b {
                    continue;
                }
                let pb = patterns(rx);
                let rays = propagation::trace_rays(env, &tx.position, &rx.position, env.max_reflections)?;
                let mut t = Vec::with_capacity(pa.len() * pb.len());
                for sa in &pa {
                    for sb in &pb {
                        t.push(tx_mw * propagation::path_gain_linear(&rays, lambda, sa.as_ref(), sb.as_ref()));
                    }
                }
                ap_ap[a][b] = t;
            }
        }
        let mut ue_ue = vec![vec![0.0; ues.len()]; ues.len()];
        for u in 0..ues.len() {
            for v in (u + 1)..ues.len() {
                let rays = propagation::trace_rays(env, &ues[u], &ues[v], env.max_reflections)?;
                let p = tx_mw * propagation::path_gain_linear(&rays, lambda, None, None);
                ue_ue[u][v] = p;
                ue_ue[v][u] = p;
            }
        }
        Ok(Self {
            sectors,
            ap_ue,
            ap_ap,
            ue_ue,
            noise_mw: env.noise_power_mw,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.sectors.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_ue.len()
    }

    pub fn sectors(&self, ap: usize) -> usize {
        self.sectors[ap]
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    fn pattern(&self, ap: usize, sector: Option<usize>) -> usize {
        sector.unwrap_or(self.sectors[ap])
    }

    /// Power at `rx` (listening through `rx_sector` if an AP) from `tx`
    /// (radiating through `tx_sector` if an AP). `None` is quasi-omni.
    pub fn power_mw(&self, tx: Node, tx_sector: Option<usize>, rx: Node, rx_sector: Option<usize>) -> f64 {
        match (tx, rx) {
            (Node::Ap(a), Node::Ue(u)) => self.ap_ue[a][u][self.pattern(a, tx_sector)],
            (Node::Ue(u), Node::Ap(a)) => self.ap_ue[a][u][self.pattern(a, rx_sector)],
            (Node::Ue(u), Node::Ue(v)) if u != v => self.ue_ue[u][v],
            (Node::Ap(a), Node::Ap(b)) if a != b => {
                let sa = self.pattern(a, tx_sector);
                let sb = self.pattern(b, rx_sector);
                self.ap_ap[a][b][sa * (self.sectors[b] + 1) + sb]
            }
            _ => 0.0,
        }
    }

    /// Sector index of `ap` delivering the most power to `ue`.
    pub fn ideal_sector(&self, ap: usize, ue: usize) -> usize {
        let row = &self.ap_ue[ap][ue][..self.sectors[ap]];
        (0..row.len())
            .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)))
            .expect("codebook is non-empty")
    }

    /// Strongest single-sector power from `ap` at `ue`.
    pub fn best_power_mw(&self, ap: usize, ue: usize) -> f64 {
        self.ap_ue[ap][ue][self.ideal_sector(ap, ue)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{linear_to_db, SectorCodebook};

    fn site(id: u16, x: f64, y: f64) -> ApSite {
        ApSite {
            id,
            position: Position::new(x, y, 2.9),
            codebook: SectorCodebook::grid(id, 12, &[-15.0, -45.0, -75.0], 30.0, 30.0, None).unwrap(),
        }
    }

    #[test]
    fn matches_direct_link_budget_and_reciprocity() {
        let env = Environment::default();
        let aps = [site(1, 2.0, 2.0), site(2, 12.0, 7.0)];
        let ues = [Position::new(5.0, 3.0, 1.0), Position::new(10.0, 6.0, 1.0)];
        let ch = Channel::build(&env, &aps, &ues, 10.0).unwrap();
        let s = 4;
        let direct =
            propagation::wigig_rx_power_dbm(&env, &aps[0].position, &aps[0].codebook.sectors[s], &ues[0], 10.0)
                .unwrap()
                .unwrap();
        let p = ch.power_mw(Node::Ap(0), Some(s), Node::Ue(0), None);
        assert!((linear_to_db(p) - direct).abs() < 1e-9);
        assert_eq!(p, ch.power_mw(Node::Ue(0), None, Node::Ap(0), Some(s)));
        assert_eq!(
            ch.power_mw(Node::Ap(0), Some(3), Node::Ap(1), Some(7)),
            ch.power_mw(Node::Ap(1), Some(7), Node::Ap(0), Some(3))
        );
        assert_eq!(ch.power_mw(Node::Ue(1), None, Node::Ue(0), None), ch.power_mw(Node::Ue(0), None, Node::Ue(1), None));
        assert_eq!(ch.power_mw(Node::Ap(0), None, Node::Ap(0), None), 0.0);
        let best = ch.ideal_sector(0, 0);
        assert!((0..36).all(|k| ch.power_mw(Node::Ap(0), Some(k), Node::Ue(0), None) <= ch.best_power_mw(0, 0)));
        assert!(best < 36);
    }
}
