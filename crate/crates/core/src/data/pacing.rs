use crate::time::SimTime;
use std::time::Duration;

/// Token-bucket pacer. `None` rate means unpaced.
#[derive(Debug, Clone)]
pub struct Pacer {
    interval: Option<Duration>,
    burst: u32,
    /// Time the bucket would be empty if refilled continuously.
    tat: SimTime,
}

impl Pacer {
    pub fn new(rate_pps: Option<f64>, burst: u32) -> Self {
        let interval = rate_pps
            .filter(|r| r.is_finite() && *r > 0.0)
            .map(|r| Duration::from_nanos((1e9 / r).round() as u64));
        Pacer {
            interval,
            burst: burst.max(1),
            tat: SimTime::ZERO,
        }
    }

    /// Earliest time at or after `now` the next packet may leave; consumes
    /// one token at that time.
    pub fn next_slot(&mut self, now: SimTime) -> SimTime {
        let Some(iv) = self.interval else { return now };
        let slack = iv * (self.burst - 1);
        let earliest = SimTime::from_nanos(self.tat.as_nanos().saturating_sub(slack.as_nanos() as u64));
        let at = now.max(earliest);
        self.tat = self.tat.max(at) + iv;
        at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_per_second_fifty_packets() {
        let mut p = Pacer::new(Some(100.0), 1);
        let t0 = SimTime::from_millis(1000);
        let mut last = t0;
        for _ in 0..50 {
            last = p.next_slot(t0);
        }
        assert_eq!(last, t0 + Duration::from_millis(490));
    }

    #[test]
    fn burst_and_unpaced() {
        let mut p = Pacer::new(Some(10.0), 3);
        let slots: Vec<_> = (0..4).map(|_| p.next_slot(SimTime::ZERO)).collect();
        assert_eq!(slots[..3], [SimTime::ZERO; 3]);
        assert_eq!(slots[3], SimTime::from_millis(100));
        let mut u = Pacer::new(None, 1);
        assert_eq!(u.next_slot(SimTime::from_millis(5)), SimTime::from_millis(5));
    }
}
