//! Model-based congestion control: BBR, a strict-drain BBR variant and BBQ.
//!
//! All three variants share one state machine ([`CcState`]). They differ
//! only in when the 0.75-gain drain phase may end and in how long the
//! 1.25-gain probe phase lasts:
//!
//! * `Bbr`: probe lasts one MinRTT; drain ends when inflight reaches one
//!   BDP or after one MinRTT, whichever comes first.
//! * `BbrStrictDrain`: drain ends only once inflight is down to one BDP.
//! * `Bbq`: while a standing queue is detected (`RTT >= (1 + beta) * MinRTT`)
//!   the probe lasts `min(MinRTT, alpha)`; otherwise it behaves like `Bbr`.

pub mod filter;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::SimTime;
use crate::error::CcError;
use crate::net::SEGMENT_BYTES;

pub use filter::{BwFilter, RttFilter, BW_WINDOW_ROUNDS, RTT_WINDOW};

/// 2 / ln 2
pub const STARTUP_GAIN: f64 = 2.0 / std::f64::consts::LN_2;
pub const DRAIN_GAIN: f64 = std::f64::consts::LN_2 / 2.0;
pub const CWND_GAIN: u64 = 2;
pub const PACING_GAIN_CYCLE: [f64; 8] = [1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
pub const MIN_CWND_BYTES: u64 = 4 * SEGMENT_BYTES;
pub const INITIAL_CWND_BYTES: u64 = 10 * SEGMENT_BYTES;
pub const PROBE_RTT_DURATION: SimTime = SimTime::from_millis(200);
const FULL_BW_GROWTH: f64 = 1.25;
const FULL_BW_ROUNDS: u32 = 3;
/// RTT assumed for the very first pacing rate, before any sample exists.
const INITIAL_RTT_GUESS: SimTime = SimTime::from_millis(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Startup,
    Drain,
    ProbeBw,
    ProbeRtt,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Startup => "startup",
            Mode::Drain => "drain",
            Mode::ProbeBw => "probe_bw",
            Mode::ProbeRtt => "probe_rtt",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Bbr,
    BbrStrictDrain,
    Bbq,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bbr => "bbr",
            Variant::BbrStrictDrain => "bbr-strict-drain",
            Variant::Bbq => "bbq",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbr" => Ok(Variant::Bbr),
            "bbr-strict-drain" => Ok(Variant::BbrStrictDrain),
            "bbq" => Ok(Variant::Bbq),
            other => Err(format!(
                "unknown cc `{other}` (expected bbr, bbr-strict-drain or bbq)"
            )),
        }
    }
}

/// BBQ tuning: probe-period cap and underutilization slack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BbqParams {
    /// `SimTime::MAX` disables the cap.
    pub alpha: SimTime,
    pub beta: f64,
}

impl Default for BbqParams {
    fn default() -> Self {
        BbqParams {
            alpha: SimTime::from_millis(3),
            beta: 0.01,
        }
    }
}

impl BbqParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha == SimTime::ZERO {
            return Err("alpha must be positive".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err("beta must be in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueueState {
    Underutilized,
    QueuePresent,
}

/// One delivery-rate / RTT observation taken when a segment is acknowledged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSample {
    /// bits/s
    pub delivery_rate: u64,
    pub rtt: SimTime,
    pub is_app_limited: bool,
    /// Delivered count when the acknowledged segment was sent.
    pub prior_delivered: u64,
}

/// What the sender needs to know about an acknowledged transmission.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AckedSegment {
    pub size_bytes: u64,
    pub sent_at: SimTime,
    pub delivered_snapshot: u64,
    pub is_app_limited: bool,
    /// False when the transmission had already been declared lost.
    pub was_in_flight: bool,
}

/// Stamp attached to a segment at transmission time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SendStamp {
    pub delivered_snapshot: u64,
    pub is_app_limited: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Directives {
    pub pacing_rate: u64,
    pub cwnd_bytes: u64,
}

/// Cumulative time spent in each gain phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseStats {
    pub startup: SimTime,
    pub drain_mode: SimTime,
    pub probe: SimTime,
    pub drain_phase: SimTime,
    pub cruise: SimTime,
    pub probe_rtt: SimTime,
    pub probe_phases: u64,
    pub drain_phases: u64,
    /// Longest probe phase during which a queue was detected throughout.
    pub longest_queued_probe: SimTime,
    pub probe_rtt_entries: u64,
}

impl PhaseStats {
    /// Fraction of ProbeBw time spent in 0.75-gain phases.
    pub fn drain_fraction(&self) -> f64 {
        let total = self.probe + self.drain_phase + self.cruise;
        if total == SimTime::ZERO {
            0.0
        } else {
            self.drain_phase.as_secs_f64() / total.as_secs_f64()
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct FullPipe {
    full_bw: u64,
    stalled_rounds: u32,
    reached: bool,
}

/// `max_bw * min_rtt`, in whole bytes.
pub fn compute_bdp(max_bw_bps: u64, min_rtt: SimTime) -> Result<u64, CcError> {
    if min_rtt == SimTime::ZERO {
        return Err(CcError::UnseededMinRtt);
    }
    let bits = max_bw_bps as u128 * min_rtt.as_nanos() as u128;
    Ok((bits / 8_000_000_000) as u64)
}

/// Per-flow congestion-control state.
#[derive(Clone, Debug)]
pub struct CcState {
    variant: Variant,
    bbq: BbqParams,
    mode: Mode,
    bw_filter: BwFilter,
    rtt_filter: RttFilter,
    min_rtt_stamp: Option<SimTime>,
    cycle_index: usize,
    phase_started_at: SimTime,
    last_cycle_eval: SimTime,
    /// When the current phase's gain took effect; `phase_started_at` may be
    /// backdated to the previous deadline.
    phase_entered_at: SimTime,
    queue_held_in_probe: bool,
    pacing_gain: f64,
    pacing_rate: u64,
    cwnd_bytes: u64,
    inflight_bytes: u64,
    delivered_bytes: u64,
    round_count: u64,
    next_round_delivered: u64,
    round_start: bool,
    full_pipe: FullPipe,
    probe_rtt_done_at: Option<SimTime>,
    probe_rtt_round_done: bool,
    app_limited_until: u64,
    queue_state: QueueState,
    latest_rtt: Option<SimTime>,
    rng: ChaCha8Rng,
    stats: PhaseStats,
    mode_started_at: SimTime,
    digest: DefaultHasher,
    acks: u64,
}

impl CcState {
    pub fn new(variant: Variant, bbq: BbqParams, seed: u64, now: SimTime) -> Self {
        let mut s = CcState {
            variant,
            bbq,
            mode: Mode::Startup,
            bw_filter: BwFilter::default(),
            rtt_filter: RttFilter::default(),
            min_rtt_stamp: None,
            cycle_index: 0,
            phase_started_at: now,
            last_cycle_eval: now,
            phase_entered_at: now,
            queue_held_in_probe: false,
            pacing_gain: STARTUP_GAIN,
            pacing_rate: 0,
            cwnd_bytes: INITIAL_CWND_BYTES,
            inflight_bytes: 0,
            delivered_bytes: 0,
            round_count: 0,
            next_round_delivered: 0,
            round_start: false,
            full_pipe: FullPipe::default(),
            probe_rtt_done_at: None,
            probe_rtt_round_done: false,
            app_limited_until: 0,
            queue_state: QueueState::Underutilized,
            latest_rtt: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: PhaseStats::default(),
            mode_started_at: now,
            digest: DefaultHasher::new(),
            acks: 0,
        };
        s.update_control();
        s
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn bbq_params(&self) -> BbqParams {
        self.bbq
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle_index
    }

    pub fn pacing_gain(&self) -> f64 {
        self.pacing_gain
    }

    /// bits/s
    pub fn pacing_rate(&self) -> u64 {
        self.pacing_rate
    }

    pub fn cwnd_bytes(&self) -> u64 {
        self.cwnd_bytes
    }

    pub fn inflight_bytes(&self) -> u64 {
        self.inflight_bytes
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.delivered_bytes
    }

    pub fn max_bw(&self) -> u64 {
        self.bw_filter.current()
    }

    pub fn min_rtt(&self) -> Option<SimTime> {
        self.rtt_filter.current()
    }

    pub fn latest_rtt(&self) -> Option<SimTime> {
        self.latest_rtt
    }

    pub fn round_count(&self) -> u64 {
        self.round_count
    }

    pub fn queue_state(&self) -> QueueState {
        self.queue_state
    }

    pub fn full_pipe_reached(&self) -> bool {
        self.full_pipe.reached
    }

    pub fn probe_rtt_done_at(&self) -> Option<SimTime> {
        self.probe_rtt_done_at
    }

    pub fn min_rtt_stamp(&self) -> Option<SimTime> {
        self.min_rtt_stamp
    }

    /// Digest over every post-ACK decision (mode, phase, pacing, cwnd).
    pub fn decision_digest(&self) -> u64 {
        self.digest.finish()
    }

    pub fn acks_processed(&self) -> u64 {
        self.acks
    }

    /// Phase-time totals, with the currently open phase counted up to `now`.
    pub fn phase_stats(&self, now: SimTime) -> PhaseStats {
        let mut s = self.stats;
        let open = now.saturating_sub(self.mode_started_at);
        match self.mode {
            Mode::Startup => s.startup += open,
            Mode::Drain => s.drain_mode += open,
            Mode::ProbeRtt => s.probe_rtt += open,
            Mode::ProbeBw => {
                let open = now.saturating_sub(self.phase_started_at);
                add_phase_time(&mut s, PACING_GAIN_CYCLE[self.cycle_index], open);
            }
        }
        s
    }

    /// Current BDP estimate; `None` until both filters hold a sample.
    pub fn bdp(&self) -> Option<u64> {
        let rtt = self.min_rtt()?;
        compute_bdp(self.max_bw(), rtt).ok()
    }

    /// CWND-bounded predicate: `MaxBw * rtt > 2 * MaxBw * MinRTT`, which
    /// reduces to `rtt > 2 * MinRTT`.
    pub fn is_cwnd_bounded(&self, current_rtt: SimTime) -> bool {
        match self.min_rtt() {
            Some(min) => current_rtt.as_nanos() as u128 > 2 * min.as_nanos() as u128,
            None => false,
        }
    }

    /// Underutilized iff `sample_rtt < (1 + beta) * MinRTT`.
    pub fn detect_queue(&self, sample_rtt: SimTime, beta: f64) -> QueueState {
        let Some(min) = self.min_rtt() else {
            return QueueState::Underutilized;
        };
        let slack = SimTime::from_nanos((beta * min.as_nanos() as f64).round() as u64);
        if sample_rtt < min + slack {
            QueueState::Underutilized
        } else {
            QueueState::QueuePresent
        }
    }

    /// Length of the 1.25-gain phase.
    pub fn probe_phase_len(&self, queue_detected: bool) -> SimTime {
        let min_rtt = self.min_rtt().unwrap_or(SimTime::MAX);
        if self.variant == Variant::Bbq && queue_detected {
            min_rtt.min(self.bbq.alpha)
        } else {
            min_rtt
        }
    }

    /// Whether the current drain period (0.75-gain phase or Drain mode) is over.
    pub fn drain_phase_exit(&self, now: SimTime) -> bool {
        let Some(bdp) = self.bdp() else {
            return false;
        };
        if self.inflight_bytes <= bdp {
            return true;
        }
        match self.variant {
            Variant::BbrStrictDrain => false,
            Variant::Bbr | Variant::Bbq => {
                let start = match self.mode {
                    Mode::Drain => self.mode_started_at,
                    _ => self.phase_started_at,
                };
                let min_rtt = self.min_rtt().unwrap_or(SimTime::MAX);
                now.saturating_sub(start) >= min_rtt
            }
        }
    }

    /// Evaluates the current ProbeBw phase and moves to the next one when it
    /// has run its course. Returns the pacing gain now in effect.
    pub fn advance_gain_cycle(&mut self, now: SimTime, queue_detected: bool) -> f64 {
        debug_assert_eq!(self.mode, Mode::ProbeBw);
        let gain = PACING_GAIN_CYCLE[self.cycle_index];
        let start = self.phase_started_at;
        let elapsed = now.saturating_sub(start);
        let min_rtt = self.min_rtt().unwrap_or(SimTime::MAX);

        if gain > 1.0 {
            self.queue_held_in_probe &= queue_detected;
        }

        let boundary = if gain > 1.0 {
            let len = self.probe_phase_len(queue_detected);
            (elapsed >= len).then(|| start.saturating_add(len))
        } else if gain < 1.0 {
            let drained = self.bdp().is_some_and(|bdp| self.inflight_bytes <= bdp);
            if drained {
                Some(now)
            } else if self.drain_phase_exit(now) {
                Some(start.saturating_add(min_rtt))
            } else {
                None
            }
        } else {
            (elapsed >= min_rtt).then(|| start.saturating_add(min_rtt))
        };

        if let Some(boundary) = boundary {
            // Time-based boundaries land on the deadline unless the phase was
            // last evaluated after it.
            let boundary = boundary.max(self.last_cycle_eval).min(now);
            let duration = boundary - start;
            add_phase_time(&mut self.stats, gain, duration);
            if gain > 1.0 {
                self.stats.probe_phases += 1;
                let effective = boundary.saturating_sub(self.phase_entered_at.max(start));
                if self.queue_held_in_probe && effective > self.stats.longest_queued_probe {
                    self.stats.longest_queued_probe = effective;
                }
            } else if gain < 1.0 {
                self.stats.drain_phases += 1;
            }
            self.cycle_index = (self.cycle_index + 1) % PACING_GAIN_CYCLE.len();
            self.phase_started_at = boundary;
            self.phase_entered_at = now;
            self.queue_held_in_probe = queue_detected;
        }
        self.last_cycle_eval = now;
        self.pacing_gain = PACING_GAIN_CYCLE[self.cycle_index];
        self.pacing_gain
    }

    /// Records a transmission. Must be called before the segment leaves.
    pub fn on_send(&mut self, bytes: u64, now: SimTime) -> SendStamp {
        if self.mode == Mode::ProbeBw {
            let queue = self.queue_state == QueueState::QueuePresent;
            self.advance_gain_cycle(now, queue);
            self.update_control();
        }
        self.inflight_bytes += bytes;
        if self.mode == Mode::ProbeRtt {
            self.mark_app_limited();
        }
        SendStamp {
            delivered_snapshot: self.delivered_bytes,
            is_app_limited: self.app_limited_until > 0,
        }
    }

    /// Removes bytes declared lost from inflight.
    pub fn on_loss(&mut self, bytes: u64) {
        self.inflight_bytes = self.inflight_bytes.saturating_sub(bytes);
    }

    /// Accounts for an acknowledged transmission and builds its rate sample.
    pub fn on_segment_acked(&mut self, acked: &AckedSegment, now: SimTime) -> RateSample {
        if acked.was_in_flight {
            self.inflight_bytes = self.inflight_bytes.saturating_sub(acked.size_bytes);
        }
        self.delivered_bytes += acked.size_bytes;
        if self.app_limited_until > 0 && self.delivered_bytes > self.app_limited_until {
            self.app_limited_until = 0;
        }
        let interval = now.saturating_sub(acked.sent_at).max(SimTime::from_nanos(1));
        let delivered = self.delivered_bytes - acked.delivered_snapshot;
        let rate = delivered as u128 * 8 * 1_000_000_000 / interval.as_nanos() as u128;
        RateSample {
            delivery_rate: rate as u64,
            rtt: interval,
            is_app_limited: acked.is_app_limited,
            prior_delivered: acked.delivered_snapshot,
        }
    }

    /// Updates the model from one rate sample and re-evaluates the mode.
    pub fn on_ack(&mut self, sample: &RateSample, now: SimTime) -> Directives {
        self.acks += 1;
        self.update_round(sample);
        if !sample.is_app_limited {
            self.bw_filter.update(self.round_count, sample.delivery_rate);
        }
        let min_rtt_expired = self
            .min_rtt_stamp
            .is_some_and(|stamp| now.saturating_sub(stamp) > RTT_WINDOW);
        let prev_min = self.min_rtt();
        self.rtt_filter.update(now, sample.rtt);
        if min_rtt_expired || prev_min.is_none_or(|m| sample.rtt <= m) {
            self.min_rtt_stamp = Some(now);
        }
        self.latest_rtt = Some(sample.rtt);
        self.queue_state = self.detect_queue(sample.rtt, self.bbq.beta);

        if self.mode == Mode::ProbeBw {
            let queue = self.queue_state == QueueState::QueuePresent;
            self.advance_gain_cycle(now, queue);
        }
        self.check_full_pipe(sample);
        if self.mode == Mode::Startup && self.full_pipe.reached {
            self.set_mode(Mode::Drain, now);
        }
        if self.mode == Mode::Drain && self.drain_phase_exit(now) {
            self.enter_probe_bw(now);
        }
        if min_rtt_expired && self.mode != Mode::ProbeRtt {
            self.enter_probe_rtt(now);
        }
        if self.mode == Mode::ProbeRtt {
            self.probe_rtt_step(now);
        }
        self.update_control();
        self.record_decision(now);
        Directives {
            pacing_rate: self.pacing_rate,
            cwnd_bytes: self.cwnd_bytes,
        }
    }

    /// Advances ProbeRtt: once inflight is down to the minimum window, dwell
    /// for `max(200 ms, one round)` and then return to the prior mode.
    pub fn probe_rtt_step(&mut self, now: SimTime) {
        debug_assert_eq!(self.mode, Mode::ProbeRtt);
        self.mark_app_limited();
        match self.probe_rtt_done_at {
            None => {
                if self.inflight_bytes <= MIN_CWND_BYTES {
                    self.probe_rtt_done_at = Some(now + PROBE_RTT_DURATION);
                    self.probe_rtt_round_done = false;
                    self.next_round_delivered = self.delivered_bytes;
                }
            }
            Some(done_at) => {
                if self.round_start {
                    self.probe_rtt_round_done = true;
                }
                if self.probe_rtt_round_done && now >= done_at {
                    self.min_rtt_stamp = Some(now);
                    if self.full_pipe.reached {
                        self.enter_probe_bw(now);
                    } else {
                        self.set_mode(Mode::Startup, now);
                    }
                    self.probe_rtt_done_at = None;
                }
            }
        }
    }

    fn mark_app_limited(&mut self) {
        self.app_limited_until = (self.delivered_bytes + self.inflight_bytes).max(1);
    }

    fn update_round(&mut self, sample: &RateSample) {
        self.round_start = false;
        if sample.prior_delivered >= self.next_round_delivered {
            self.next_round_delivered = self.delivered_bytes;
            self.round_count += 1;
            self.round_start = true;
        }
    }

    fn check_full_pipe(&mut self, sample: &RateSample) {
        if self.full_pipe.reached || !self.round_start || sample.is_app_limited {
            return;
        }
        let bw = self.max_bw();
        if bw as f64 >= self.full_pipe.full_bw as f64 * FULL_BW_GROWTH {
            self.full_pipe.full_bw = bw;
            self.full_pipe.stalled_rounds = 0;
            return;
        }
        self.full_pipe.stalled_rounds += 1;
        if self.full_pipe.stalled_rounds >= FULL_BW_ROUNDS {
            self.full_pipe.reached = true;
        }
    }

    fn close_mode_time(&mut self, now: SimTime) {
        let open = now.saturating_sub(self.mode_started_at);
        match self.mode {
            Mode::Startup => self.stats.startup += open,
            Mode::Drain => self.stats.drain_mode += open,
            Mode::ProbeRtt => self.stats.probe_rtt += open,
            Mode::ProbeBw => {
                let open = now.saturating_sub(self.phase_started_at);
                add_phase_time(&mut self.stats, PACING_GAIN_CYCLE[self.cycle_index], open);
            }
        }
    }

    fn set_mode(&mut self, mode: Mode, now: SimTime) {
        self.close_mode_time(now);
        self.mode = mode;
        self.mode_started_at = now;
        self.pacing_gain = match mode {
            Mode::Startup => STARTUP_GAIN,
            Mode::Drain => DRAIN_GAIN,
            Mode::ProbeRtt => 1.0,
            Mode::ProbeBw => PACING_GAIN_CYCLE[self.cycle_index],
        };
    }

    fn enter_probe_bw(&mut self, now: SimTime) {
        self.cycle_index = self.rng.gen_range(0..PACING_GAIN_CYCLE.len());
        self.set_mode(Mode::ProbeBw, now);
        self.phase_started_at = now;
        self.last_cycle_eval = now;
        self.phase_entered_at = now;
        self.queue_held_in_probe = self.queue_state == QueueState::QueuePresent;
    }

    fn enter_probe_rtt(&mut self, now: SimTime) {
        self.set_mode(Mode::ProbeRtt, now);
        self.stats.probe_rtt_entries += 1;
        self.probe_rtt_done_at = None;
        self.probe_rtt_round_done = false;
    }

    fn update_control(&mut self) {
        let bw = self.max_bw();
        self.pacing_rate = if bw == 0 {
            let bits = INITIAL_CWND_BYTES as f64 * 8.0;
            (self.pacing_gain * bits / INITIAL_RTT_GUESS.as_secs_f64()) as u64
        } else {
            (self.pacing_gain * bw as f64) as u64
        };
        self.cwnd_bytes = match (self.mode, self.bdp()) {
            (Mode::ProbeRtt, _) => MIN_CWND_BYTES,
            (_, None) => INITIAL_CWND_BYTES,
            (_, Some(bdp)) => (CWND_GAIN * bdp).max(MIN_CWND_BYTES),
        };
    }

    fn record_decision(&mut self, now: SimTime) {
        self.digest.write_u64(now.as_nanos());
        self.digest.write_u8(self.mode as u8);
        self.digest.write_usize(self.cycle_index);
        self.digest.write_u64(self.pacing_rate);
        self.digest.write_u64(self.cwnd_bytes);
    }
}

fn add_phase_time(stats: &mut PhaseStats, gain: f64, d: SimTime) {
    if gain > 1.0 {
        stats.probe += d;
    } else if gain < 1.0 {
        stats.drain_phase += d;
    } else {
        stats.cruise += d;
    }
}
