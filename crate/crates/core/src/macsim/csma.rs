use rand::Rng;

use super::event::SimTime;

/// Slot countdown of one contending station.
///
/// The counter runs only while the station senses the medium idle; it
/// resumes `ifs` after the medium goes idle and loses whole elapsed slots
/// when frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct Backoff {
    slots: u32,
    ifs: SimTime,
    slot: SimTime,
    counting: Option<(SimTime, SimTime)>,
}

impl Backoff {
    /// A frozen backoff holding `slots` slots.
    pub fn new(slots: u32, ifs: SimTime, slot: SimTime) -> Self {
        Self {
            slots,
            ifs,
            slot,
            counting: None,
        }
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn is_counting(&self) -> bool {
        self.counting.is_some()
    }

    /// Grant instant while counting.
    pub fn grant_time(&self) -> Option<SimTime> {
        self.counting.map(|(_, g)| g)
    }

    /// The medium went (or is) idle at `now`: start counting and return the
    /// grant instant.
    pub fn resume(&mut self, now: SimTime) -> SimTime {
        let start = now + self.ifs;
        let grant = start + SimTime::from(self.slots) * self.slot;
        self.counting = Some((start, grant));
        grant
    }

    /// The medium went busy at `now`. Returns `false` (and keeps counting)
    /// when the grant is due at this very instant: that station transmits
    /// too and the frames collide.
    pub fn freeze(&mut self, now: SimTime) -> bool {
        let Some((start, grant)) = self.counting else {
            return true;
        };
        if grant <= now {
            return false;
        }
        let elapsed = if now > start { (now - start) / self.slot } else { 0 };
        self.slots -= (elapsed as u32).min(self.slots);
        self.counting = None;
        true
    }
}

/// Uniform draw from `[0, cw]`.
pub fn draw_slots<R: Rng>(rng: &mut R, cw: u32) -> u32 {
    rng.gen_range(0..=cw)
}

/// Binary exponential growth, capped.
pub fn next_cw(cw: u32, cw_max: u32) -> u32 {
    (cw * 2 + 1).min(cw_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const SLOT: SimTime = 9_000;
    const DIFS: SimTime = 34_000;

    #[test]
    fn zero_draw_transmits_after_ifs() {
        let mut b = Backoff::new(0, DIFS, SLOT);
        assert_eq!(b.resume(100), 100 + DIFS);
    }

    #[test]
    fn earlier_slot_wins_and_loser_freezes() {
        let mut a = Backoff::new(2, DIFS, SLOT);
        let mut b = Backoff::new(5, DIFS, SLOT);
        let ga = a.resume(0);
        let gb = b.resume(0);
        assert!(ga < gb);
        // a transmits at ga; b freezes with 3 slots left.
        assert!(b.freeze(ga));
        assert_eq!(b.slots(), 3);
        assert!(!b.is_counting());
        // After a 50 us frame, b resumes and needs DIFS + 3 slots.
        let idle = ga + 50_000;
        assert_eq!(b.resume(idle), idle + DIFS + 3 * SLOT);
    }

    #[test]
    fn freeze_during_ifs_keeps_all_slots() {
        let mut b = Backoff::new(4, DIFS, SLOT);
        b.resume(0);
        assert!(b.freeze(DIFS - 1));
        assert_eq!(b.slots(), 4);
    }

    #[test]
    fn simultaneous_grant_is_not_frozen() {
        let mut a = Backoff::new(3, DIFS, SLOT);
        let mut b = Backoff::new(3, DIFS, SLOT);
        let g = a.resume(0);
        assert_eq!(b.resume(0), g);
        assert!(!b.freeze(g));
        assert_eq!(b.grant_time(), Some(g));
    }

    #[test]
    fn cw_doubling_caps() {
        let mut cw = 15;
        let mut seen = vec![cw];
        for _ in 0..8 {
            cw = next_cw(cw, 1023);
            seen.push(cw);
        }
        assert_eq!(&seen[..7], &[15, 31, 63, 127, 255, 511, 1023]);
        assert_eq!(cw, 1023);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| draw_slots(&mut rng, 15) <= 15));
    }
}
