//! Exact windowed extremum filters backing the bandwidth and RTT model.
//!
//! Both filters are monotonic deques: the front always holds the current
//! extremum and samples that can never become the extremum again are
//! discarded on insertion. Expiry is evaluated relative to the newest
//! sample, so a filter that stops receiving samples keeps its last value.

use std::collections::VecDeque;

use crate::engine::SimTime;

/// Length of the bandwidth filter window, in round trips.
pub const BW_WINDOW_ROUNDS: u64 = 10;

/// Length of the RTT filter window.
pub const RTT_WINDOW: SimTime = SimTime::from_secs(10);

/// Windowed maximum of delivery-rate samples (bits/s) over round trips.
#[derive(Clone, Debug)]
pub struct BwFilter {
    window_len: u64,
    samples: VecDeque<(u64, u64)>,
    latest_round: u64,
}

impl Default for BwFilter {
    fn default() -> Self {
        Self::new(BW_WINDOW_ROUNDS)
    }
}

impl BwFilter {
    pub fn new(window_len: u64) -> Self {
        assert!(window_len > 0);
        BwFilter {
            window_len,
            samples: VecDeque::new(),
            latest_round: 0,
        }
    }

    pub fn window_len(&self) -> u64 {
        self.window_len
    }

    /// Rounds must be non-decreasing across calls.
    pub fn update(&mut self, round: u64, rate_bps: u64) {
        debug_assert!(round >= self.latest_round || self.samples.is_empty());
        self.latest_round = round;
        while matches!(self.samples.back(), Some(&(_, v)) if v <= rate_bps) {
            self.samples.pop_back();
        }
        self.samples.push_back((round, rate_bps));
        while matches!(self.samples.front(), Some(&(r, _)) if r + self.window_len <= round) {
            self.samples.pop_front();
        }
    }

    /// Maximum over samples from the last `window_len` rounds, 0 if none.
    pub fn current(&self) -> u64 {
        self.samples.front().map_or(0, |&(_, v)| v)
    }

    pub fn reset(&mut self) {
        self.samples.clear();
    }
}

/// Windowed minimum of RTT samples over wall-clock (simulated) time.
#[derive(Clone, Debug)]
pub struct RttFilter {
    window: SimTime,
    samples: VecDeque<(SimTime, SimTime)>,
}

impl Default for RttFilter {
    fn default() -> Self {
        Self::new(RTT_WINDOW)
    }
}

impl RttFilter {
    pub fn new(window: SimTime) -> Self {
        RttFilter {
            window,
            samples: VecDeque::new(),
        }
    }

    pub fn window(&self) -> SimTime {
        self.window
    }

    /// Timestamps must be non-decreasing across calls. A sample stays in the
    /// window while `now - t <= window`.
    pub fn update(&mut self, now: SimTime, rtt: SimTime) {
        while matches!(self.samples.back(), Some(&(_, v)) if v >= rtt) {
            self.samples.pop_back();
        }
        self.samples.push_back((now, rtt));
        while matches!(self.samples.front(), Some(&(t, _)) if now.saturating_sub(t) > self.window)
        {
            self.samples.pop_front();
        }
    }

    pub fn current(&self) -> Option<SimTime> {
        self.samples.front().map(|&(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bw_filter_expires_after_ten_rounds() {
        let mut f = BwFilter::default();
        f.update(0, 100);
        for r in 1..10 {
            f.update(r, 10);
            assert_eq!(f.current(), 100);
        }
        f.update(10, 10);
        assert_eq!(f.current(), 10);
    }

    #[test]
    fn bw_filter_keeps_value_without_updates() {
        let mut f = BwFilter::default();
        f.update(3, 500);
        assert_eq!(f.current(), 500);
        f.update(40, 7);
        assert_eq!(f.current(), 7);
    }

    #[test]
    fn rtt_filter_window_boundary() {
        let mut f = RttFilter::default();
        f.update(SimTime::ZERO, SimTime::from_millis(10));
        f.update(SimTime::from_secs(10), SimTime::from_millis(30));
        assert_eq!(f.current(), Some(SimTime::from_millis(10)));
        f.update(
            SimTime::from_secs(10) + SimTime::from_nanos(1),
            SimTime::from_millis(40),
        );
        assert_eq!(f.current(), Some(SimTime::from_millis(30)));
    }

    #[test]
    fn empty_filters() {
        assert_eq!(BwFilter::default().current(), 0);
        assert_eq!(RttFilter::default().current(), None);
    }
}
