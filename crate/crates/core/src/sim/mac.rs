//! Idealized CSMA/CA: instantaneous carrier sense, fixed contention window, no capture.

use std::time::Duration;

use rand::Rng;

use crate::model::NodeId;

#[derive(Clone, Debug, PartialEq)]
pub struct MacParams {
    pub slot: Duration,
    /// Backoff draws are uniform over `0..cw` slots.
    pub cw: u32,
    pub difs: Duration,
    /// Shorter wait used by helper ACKs, which skip backoff.
    pub pifs: Duration,
    /// Receive-to-ACK turnaround and gap between staggered ACKs.
    pub sifs: Duration,
    /// Transmissions from nodes within this distance are sensed as busy medium.
    pub carrier_sense_range: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            slot: Duration::from_micros(20),
            cw: 32,
            difs: Duration::from_micros(50),
            pifs: Duration::from_micros(30),
            sifs: Duration::from_micros(10),
            carrier_sense_range: 550.0,
        }
    }
}

pub fn draw_backoff<R: Rng + ?Sized>(rng: &mut R, cw: u32) -> u32 {
    rng.gen_range(0..cw)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grant {
    /// More than one winner means their frames collide.
    pub winners: Vec<NodeId>,
    pub start: Duration,
}

/// One contention round on an idle medium: every contender draws a backoff in order,
/// the smallest draw wins and exact ties all transmit.
pub fn mac_grant<R: Rng + ?Sized>(
    contenders: &[NodeId],
    now: Duration,
    params: &MacParams,
    rng: &mut R,
) -> Grant {
    assert!(!contenders.is_empty(), "mac_grant needs at least one contender");
    let draws: Vec<u32> = contenders.iter().map(|_| draw_backoff(rng, params.cw)).collect();
    let best = *draws.iter().min().unwrap();
    Grant {
        winners: contenders
            .iter()
            .zip(&draws)
            .filter(|(_, &d)| d == best)
            .map(|(&n, _)| n)
            .collect(),
        start: now + params.difs + params.slot * best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_contender_wins_after_backoff() {
        let p = MacParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = mac_grant(&[NodeId(4)], Duration::ZERO, &p, &mut rng);
        assert_eq!(g.winners, vec![NodeId(4)]);
        let slots = (g.start - p.difs).as_nanos() / p.slot.as_nanos();
        assert!(slots < 32);
        assert_eq!((g.start - p.difs).as_nanos() % p.slot.as_nanos(), 0);
    }

    #[test]
    fn smallest_draw_wins() {
        let p = MacParams::default();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut replay = ChaCha8Rng::seed_from_u64(seed);
            let a = draw_backoff(&mut replay, 32);
            let b = draw_backoff(&mut replay, 32);
            let g = mac_grant(&[NodeId(1), NodeId(2)], Duration::ZERO, &p, &mut rng);
            let want = match a.cmp(&b) {
                std::cmp::Ordering::Less => vec![NodeId(1)],
                std::cmp::Ordering::Greater => vec![NodeId(2)],
                std::cmp::Ordering::Equal => vec![NodeId(1), NodeId(2)],
            };
            assert_eq!(g.winners, want);
            assert_eq!(g.start, p.difs + p.slot * a.min(b));
        }
    }

    #[test]
    fn draws_cover_the_window_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hist = [0u32; 32];
        for _ in 0..32_000 {
            hist[draw_backoff(&mut rng, 32) as usize] += 1;
        }
        // Expected 1000 per bin, sigma ~31.
        assert!(hist.iter().all(|&h| (850..1150).contains(&h)), "{hist:?}");
    }
}
