//! Bottleneck link model: a single FIFO byte queue in front of a fixed-rate
//! link, with drop-tail or RED admission and per-flow backlog accounting.

use std::collections::VecDeque;

use rand::Rng;

use crate::engine::SimTime;

/// Fixed segment size used throughout the simulator.
pub const SEGMENT_BYTES: u64 = 1_500;

/// Default per-port switch buffer.
pub const DEFAULT_BUFFER_BYTES: u64 = 2_000_000;

/// Default RED averaging weight (classic Floyd value).
pub const DEFAULT_RED_EWMA_WEIGHT: f64 = 0.002;

pub type FlowId = usize;

/// One transmission of a data segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub flow_id: FlowId,
    /// Application byte range `[lo, hi)`.
    pub lo: u64,
    pub hi: u64,
    pub size_bytes: u64,
    pub sent_at: SimTime,
    /// Bytes this flow had delivered when the segment left the sender.
    pub delivered_snapshot: u64,
    pub is_retransmit: bool,
    pub is_app_limited: bool,
    /// Per-flow transmission counter, echoed back in the ACK.
    pub tx_id: u64,
}

impl Segment {
    pub fn payload(&self) -> u64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RedParams {
    pub min_thresh_bytes: u64,
    pub max_thresh_bytes: u64,
    pub max_prob: f64,
    pub ewma_weight: f64,
}

impl RedParams {
    pub const fn new(min_thresh_bytes: u64, max_thresh_bytes: u64, max_prob: f64) -> Self {
        RedParams {
            min_thresh_bytes,
            max_thresh_bytes,
            max_prob,
            ewma_weight: DEFAULT_RED_EWMA_WEIGHT,
        }
    }

    pub fn validate(&self, capacity_bytes: u64) -> Result<(), String> {
        if self.min_thresh_bytes == 0 {
            return Err("red min threshold must be positive".into());
        }
        if self.min_thresh_bytes >= self.max_thresh_bytes {
            return Err("red min threshold must be below max threshold".into());
        }
        if self.max_thresh_bytes > capacity_bytes {
            return Err("red max threshold exceeds buffer capacity".into());
        }
        if !(self.max_prob > 0.0 && self.max_prob <= 1.0) {
            return Err("red max probability must be in (0, 1]".into());
        }
        if !(self.ewma_weight > 0.0 && self.ewma_weight <= 1.0) {
            return Err("red ewma weight must be in (0, 1]".into());
        }
        Ok(())
    }

    /// Drop probability before the count correction.
    pub fn base_probability(&self, avg_bytes: f64) -> f64 {
        let min = self.min_thresh_bytes as f64;
        let max = self.max_thresh_bytes as f64;
        if avg_bytes < min {
            0.0
        } else if avg_bytes >= max {
            1.0
        } else {
            self.max_prob * (avg_bytes - min) / (max - min)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aqm {
    DropTail,
    Red(RedParams),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RedDecision {
    pub drop: bool,
    /// Probability actually applied, after the count correction.
    pub prob: f64,
    /// Packets passed since the last drop, after this decision.
    pub count: u64,
}

/// Classic (non-gentle) RED decision with the inter-drop count correction
/// `p_a = p_b / (1 - count * p_b)`.
pub fn red_drop_decision<R: Rng + ?Sized>(
    params: &RedParams,
    avg_bytes: f64,
    count_since_drop: u64,
    rng: &mut R,
) -> RedDecision {
    let pb = params.base_probability(avg_bytes);
    if pb == 0.0 {
        return RedDecision { drop: false, prob: 0.0, count: 0 };
    }
    if pb >= 1.0 {
        return RedDecision { drop: true, prob: 1.0, count: 0 };
    }
    let denom = 1.0 - count_since_drop as f64 * pb;
    let pa = if denom <= pb { 1.0 } else { (pb / denom).min(1.0) };
    if rng.gen::<f64>() < pa {
        RedDecision { drop: true, prob: pa, count: 0 }
    } else {
        RedDecision { drop: false, prob: pa, count: count_since_drop + 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Tail,
    Red,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped(DropReason, Segment),
}

/// Per-direction propagation for one flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkPath {
    pub flow_id: FlowId,
    pub fwd_prop: SimTime,
    pub rev_prop: SimTime,
    /// Extra delay the receiver adds before emitting each ACK.
    pub extra_ack_delay: SimTime,
}

impl LinkPath {
    /// Splits `rtt` evenly between the two directions.
    pub fn from_rtt(flow_id: FlowId, rtt: SimTime) -> Self {
        let fwd = SimTime::from_nanos(rtt.as_nanos() / 2);
        LinkPath {
            flow_id,
            fwd_prop: fwd,
            rev_prop: rtt - fwd,
            extra_ack_delay: SimTime::ZERO,
        }
    }

    pub fn base_rtt(&self) -> SimTime {
        self.fwd_prop + self.rev_prop
    }
}

/// Serialization time of `bytes` on a `rate_bps` link, rounded up to the
/// next nanosecond.
pub fn transmission_time(bytes: u64, rate_bps: u64) -> SimTime {
    let bits = bytes as u128 * 8 * 1_000_000_000;
    let rate = rate_bps.max(1) as u128;
    SimTime::from_nanos(bits.div_ceil(rate) as u64)
}

#[derive(Debug, Clone)]
pub struct BottleneckQueue {
    capacity_bytes: u64,
    link_rate_bps: u64,
    aqm: Aqm,
    segments: VecDeque<Segment>,
    occupancy_bytes: u64,
    per_flow_backlog: Vec<u64>,
    per_flow_drops: Vec<u64>,
    ewma_avg_bytes: f64,
    red_count: u64,
    idle_since: Option<SimTime>,
    in_service: bool,
}

impl BottleneckQueue {
    pub fn new(capacity_bytes: u64, link_rate_bps: u64, aqm: Aqm) -> Self {
        BottleneckQueue {
            capacity_bytes,
            link_rate_bps,
            aqm,
            segments: VecDeque::new(),
            occupancy_bytes: 0,
            per_flow_backlog: Vec::new(),
            per_flow_drops: Vec::new(),
            ewma_avg_bytes: 0.0,
            red_count: 0,
            idle_since: Some(SimTime::ZERO),
            in_service: false,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn link_rate_bps(&self) -> u64 {
        self.link_rate_bps
    }

    pub fn occupancy_bytes(&self) -> u64 {
        self.occupancy_bytes
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn ewma_avg_bytes(&self) -> f64 {
        self.ewma_avg_bytes
    }

    pub fn backlog(&self, flow: FlowId) -> u64 {
        self.per_flow_backlog.get(flow).copied().unwrap_or(0)
    }

    pub fn drops(&self, flow: FlowId) -> u64 {
        self.per_flow_drops.get(flow).copied().unwrap_or(0)
    }

    /// Fraction of the current backlog belonging to `flow`; 0 when empty.
    pub fn queue_share(&self, flow: FlowId) -> f64 {
        if self.occupancy_bytes == 0 {
            0.0
        } else {
            self.backlog(flow) as f64 / self.occupancy_bytes as f64
        }
    }

    fn grow_to(&mut self, flow: FlowId) {
        if self.per_flow_backlog.len() <= flow {
            self.per_flow_backlog.resize(flow + 1, 0);
            self.per_flow_drops.resize(flow + 1, 0);
        }
    }

    fn update_red_average(&mut self, weight: f64, now: SimTime) {
        match self.idle_since {
            Some(since) if self.segments.is_empty() => {
                // Decay as if `m` small packets had arrived to an empty queue.
                let slot = transmission_time(SEGMENT_BYTES, self.link_rate_bps);
                let m = now.saturating_sub(since).as_nanos() as f64 / slot.as_nanos() as f64;
                self.ewma_avg_bytes *= (1.0 - weight).powf(m);
                self.idle_since = None;
            }
            _ => {}
        }
        self.ewma_avg_bytes =
            (1.0 - weight) * self.ewma_avg_bytes + weight * self.occupancy_bytes as f64;
    }

    pub fn enqueue<R: Rng + ?Sized>(
        &mut self,
        seg: Segment,
        now: SimTime,
        rng: &mut R,
    ) -> EnqueueOutcome {
        let flow = seg.flow_id;
        self.grow_to(flow);

        if let Aqm::Red(params) = self.aqm {
            self.update_red_average(params.ewma_weight, now);
            let d = red_drop_decision(&params, self.ewma_avg_bytes, self.red_count, rng);
            self.red_count = d.count;
            if d.drop {
                self.per_flow_drops[flow] += 1;
                return EnqueueOutcome::Dropped(DropReason::Red, seg);
            }
        }

        if self.occupancy_bytes + seg.size_bytes > self.capacity_bytes {
            self.per_flow_drops[flow] += 1;
            return EnqueueOutcome::Dropped(DropReason::Tail, seg);
        }

        self.occupancy_bytes += seg.size_bytes;
        self.per_flow_backlog[flow] += seg.size_bytes;
        self.idle_since = None;
        self.segments.push_back(seg);
        EnqueueOutcome::Accepted
    }

    /// Starts transmitting the head segment if the link is idle. Returns the
    /// departure time to schedule, or `None` when the link is busy or the
    /// queue is empty.
    pub fn dequeue_service(&mut self, now: SimTime) -> Option<SimTime> {
        if self.in_service {
            return None;
        }
        let head = self.segments.front()?;
        self.in_service = true;
        Some(now + transmission_time(head.size_bytes, self.link_rate_bps))
    }

    /// Completes the in-flight transmission and removes the head segment.
    pub fn finish_service(&mut self, now: SimTime) -> Segment {
        assert!(self.in_service, "finish_service without an active transmission");
        self.in_service = false;
        let seg = self
            .segments
            .pop_front()
            .expect("link was serving an empty queue");
        self.occupancy_bytes -= seg.size_bytes;
        self.per_flow_backlog[seg.flow_id] -= seg.size_bytes;
        if self.segments.is_empty() {
            self.idle_since = Some(now);
        }
        seg
    }

    pub fn is_serving(&self) -> bool {
        self.in_service
    }

    /// Sum of per-flow backlogs; equals `occupancy_bytes` at all times.
    pub fn backlog_sum(&self) -> u64 {
        self.per_flow_backlog.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg(flow: FlowId, lo: u64) -> Segment {
        Segment {
            flow_id: flow,
            lo,
            hi: lo + SEGMENT_BYTES,
            size_bytes: SEGMENT_BYTES,
            sent_at: SimTime::ZERO,
            delivered_snapshot: 0,
            is_retransmit: false,
            is_app_limited: false,
            tx_id: lo / SEGMENT_BYTES,
        }
    }

    fn table1(row: u8) -> RedParams {
        match row {
            1 => RedParams::new(170_000, 500_000, 0.02),
            2 => RedParams::new(170_000, 500_000, 0.10),
            _ => RedParams::new(170_000, 330_000, 0.02),
        }
    }

    #[test]
    fn drop_tail_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = BottleneckQueue::new(2_000_000, 100_000_000, Aqm::DropTail);
        // 1,999,000 bytes of filler in 1,000-byte pieces.
        for i in 0..1_999 {
            let mut s = seg(0, i * 1_000);
            s.hi = s.lo + 1_000;
            s.size_bytes = 1_000;
            assert_eq!(q.enqueue(s, SimTime::ZERO, &mut rng), EnqueueOutcome::Accepted);
        }
        assert_eq!(q.occupancy_bytes(), 1_999_000);
        let out = q.enqueue(seg(1, 0), SimTime::ZERO, &mut rng);
        assert!(matches!(out, EnqueueOutcome::Dropped(DropReason::Tail, _)));
        assert_eq!(q.drops(1), 1);
        assert_eq!(q.occupancy_bytes(), 1_999_000);
    }

    #[test]
    fn red_below_min_never_drops() {
        let p = table1(1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut count = 0;
        for _ in 0..10_000 {
            let d = red_drop_decision(&p, 100_000.0, count, &mut rng);
            assert!(!d.drop);
            assert_eq!(d.prob, 0.0);
            count = d.count;
        }
    }

    #[test]
    fn red_forced_region() {
        let p = table1(1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = red_drop_decision(&p, 500_000.0, 3, &mut rng);
        assert!(d.drop);
        assert_eq!(d.prob, 1.0);
        assert_eq!(d.count, 0);
    }

    #[test]
    fn red3_midpoint_probability() {
        let p = table1(3);
        assert!((p.base_probability(250_000.0) - 0.01).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = red_drop_decision(&p, 250_000.0, 0, &mut rng);
        assert!((d.prob - 0.01).abs() < 1e-12);
    }

    #[test]
    fn red_count_correction() {
        let p = table1(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = red_drop_decision(&p, 250_000.0, 50, &mut rng);
        // 0.01 / (1 - 0.5)
        if !d.drop {
            assert!((d.prob - 0.02).abs() < 1e-12);
        }
        // count * pb >= 1 forces a drop.
        let d = red_drop_decision(&p, 250_000.0, 100, &mut rng);
        assert!(d.drop);
        assert_eq!(d.prob, 1.0);
    }

    #[test]
    fn red_queue_below_min_accepts_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = BottleneckQueue::new(2_000_000, 100_000_000, Aqm::Red(table1(1)));
        for i in 0..60 {
            assert_eq!(
                q.enqueue(seg(0, i * SEGMENT_BYTES), SimTime::ZERO, &mut rng),
                EnqueueOutcome::Accepted
            );
        }
        assert!(q.ewma_avg_bytes() < 170_000.0);
    }

    #[test]
    fn service_times() {
        assert_eq!(transmission_time(1_500, 100_000_000), SimTime::from_micros(120));
        assert_eq!(transmission_time(1_500, 1_000_000_000), SimTime::from_micros(12));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = BottleneckQueue::new(2_000_000, 100_000_000, Aqm::DropTail);
        assert_eq!(q.dequeue_service(SimTime::ZERO), None);
        q.enqueue(seg(0, 0), SimTime::ZERO, &mut rng);
        q.enqueue(seg(0, SEGMENT_BYTES), SimTime::ZERO, &mut rng);
        let t = q.dequeue_service(SimTime::ZERO).unwrap();
        assert_eq!(t, SimTime::from_micros(120));
        // busy link does not start a second transmission
        assert_eq!(q.dequeue_service(SimTime::from_micros(10)), None);
        let s = q.finish_service(t);
        assert_eq!(s.lo, 0);
        assert_eq!(q.backlog(0), SEGMENT_BYTES);
        assert_eq!(q.dequeue_service(t), Some(SimTime::from_micros(240)));
    }

    #[test]
    fn queue_share_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = BottleneckQueue::new(2_000_000, 100_000_000, Aqm::DropTail);
        assert_eq!(q.queue_share(0), 0.0);
        q.enqueue(seg(0, 0), SimTime::ZERO, &mut rng);
        assert_eq!(q.queue_share(0), 1.0);
        q.enqueue(seg(1, 0), SimTime::ZERO, &mut rng);
        assert_eq!(q.queue_share(0), 0.5);
        assert_eq!(q.queue_share(1), 0.5);
        assert_eq!(q.backlog_sum(), q.occupancy_bytes());
    }

    #[test]
    fn per_flow_fifo() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = BottleneckQueue::new(2_000_000, 1_000_000_000, Aqm::DropTail);
        for i in 0..10 {
            q.enqueue(seg((i % 2) as usize, i * SEGMENT_BYTES), SimTime::ZERO, &mut rng);
        }
        let mut now = SimTime::ZERO;
        let mut last = [None::<u64>; 2];
        while let Some(t) = q.dequeue_service(now) {
            now = t;
            let s = q.finish_service(now);
            if let Some(prev) = last[s.flow_id] {
                assert!(s.lo > prev);
            }
            last[s.flow_id] = Some(s.lo);
        }
        assert_eq!(q.occupancy_bytes(), 0);
    }
}
