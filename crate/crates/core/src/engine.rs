//! Deterministic discrete-event kernel.
//!
//! Time is an integer nanosecond counter. Events firing at the same instant
//! run in the order they were scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use crate::error::EngineError;

/// Simulated time in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Sentinel used for "never" / unbounded durations.
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond. Infinite or out-of-range input
    /// saturates at [`SimTime::MAX`].
    pub fn from_secs_f64(s: f64) -> Self {
        let ns = (s * 1e9).round();
        if !ns.is_finite() || ns >= u64::MAX as f64 {
            SimTime::MAX
        } else if ns <= 0.0 {
            SimTime::ZERO
        } else {
            SimTime(ns as u64)
        }
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Self::from_secs_f64(ms / 1e3)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }

    pub fn mul_f64(self, k: f64) -> SimTime {
        SimTime::from_secs_f64(self.as_secs_f64() * k)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Handle returned by [`Scheduler::schedule`]; used for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventId {
    at: SimTime,
    seq: u64,
}

impl EventId {
    pub fn fire_at(&self) -> SimTime {
        self.at
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub events_fired: u64,
}

/// Ordered pending-event set plus the virtual clock.
///
/// Keys are `(fire_at, seq)`, so iteration order is time first and
/// insertion order among ties.
#[derive(Debug)]
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    pending: BTreeMap<(SimTime, u64), E>,
    fired_total: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            pending: BTreeMap::new(),
            fired_total: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn fired_total(&self) -> u64 {
        self.fired_total
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventId, EngineError> {
        if at < self.now {
            return Err(EngineError::ScheduleInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert((at, seq), event);
        Ok(EventId { at, seq })
    }

    /// Schedules `delay` after the current instant. Never fails.
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventId {
        let at = self.now.saturating_add(delay);
        self.schedule(at, event)
            .expect("now + delay is never in the past")
    }

    pub fn cancel(&mut self, id: EventId) -> bool {
        self.pending.remove(&(id.at, id.seq)).is_some()
    }

    /// Executes every event with `fire_at <= t_end`, including ones scheduled
    /// by handlers along the way, then parks the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> RunStats
    where
        F: FnMut(&mut Self, E),
    {
        let mut stats = RunStats::default();
        while let Some(event) = self.next_event(t_end) {
            stats.events_fired += 1;
            handler(self, event);
        }
        self.advance_to(t_end);
        stats
    }

    /// Pops the earliest event due at or before `t_end` and moves the clock
    /// to its fire time. The clock is left alone when nothing is due.
    pub fn next_event(&mut self, t_end: SimTime) -> Option<E> {
        let entry = self.pending.first_entry()?;
        if entry.key().0 > t_end {
            return None;
        }
        let ((at, _), event) = entry.remove_entry();
        debug_assert!(at >= self.now);
        self.now = at;
        self.fired_total += 1;
        Some(event)
    }

    /// Moves the clock forward to `t` if it is behind.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_event_runs_before_later_ones() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_millis(1), "late").unwrap();
        s.schedule(SimTime::ZERO, "now").unwrap();
        let mut order = vec![];
        s.run_until(SimTime::from_secs(1), |_, e| order.push(e));
        assert_eq!(order, vec!["now", "late"]);
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut s = Scheduler::new();
        let t = SimTime::from_micros(120);
        for i in 0..50 {
            s.schedule(t, i).unwrap();
        }
        let mut order = vec![];
        s.run_until(t, |_, e| order.push(e));
        assert_eq!(order, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.run_until(SimTime::from_millis(5), |_, _| {});
        let err = s
            .schedule(SimTime::from_millis(5) - SimTime::from_nanos(1), ())
            .unwrap_err();
        assert!(matches!(err, EngineError::ScheduleInPast { .. }));
    }

    #[test]
    fn cancel_semantics() {
        let mut s = Scheduler::new();
        let rto = s.schedule(SimTime::from_millis(200), "rto").unwrap();
        assert!(s.cancel(rto));
        assert!(!s.cancel(rto));

        let fired = s.schedule(SimTime::from_millis(1), "x").unwrap();
        let stats = s.run_until(SimTime::from_millis(2), |_, _| {});
        assert_eq!(stats.events_fired, 1);
        assert!(!s.cancel(fired));
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        let stats = s.run_until(SimTime::from_secs(5), |_, _| {});
        assert_eq!(s.now(), SimTime::from_secs(5));
        assert_eq!(stats.events_fired, 0);
    }

    #[test]
    fn single_and_cascading_events() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(1), 0u8).unwrap();
        let stats = s.run_until(SimTime::from_secs(2), |_, _| {});
        assert_eq!(stats.events_fired, 1);

        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(1), 0u8).unwrap();
        let stats = s.run_until(SimTime::from_secs(2), |sched, e| {
            if e == 0 {
                sched.schedule(SimTime::from_millis(1500), 1).unwrap();
            }
        });
        assert_eq!(stats.events_fired, 2);
        assert_eq!(s.now(), SimTime::from_secs(2));
    }

    #[test]
    fn events_after_horizon_stay_pending() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(3), ()).unwrap();
        s.run_until(SimTime::from_secs(2), |_, _| {});
        assert_eq!(s.pending_len(), 1);
        let stats = s.run_until(SimTime::from_secs(3), |_, _| {});
        assert_eq!(stats.events_fired, 1);
    }

    #[test]
    fn clock_never_decreases() {
        let mut s = Scheduler::new();
        for i in (0..100u64).rev() {
            s.schedule(SimTime::from_micros(i * 37 % 101), i).unwrap();
        }
        let mut last = SimTime::ZERO;
        s.run_until(SimTime::from_secs(1), |sched, _| {
            assert!(sched.now() >= last);
            last = sched.now();
        });
    }
}
