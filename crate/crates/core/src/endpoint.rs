//! Paced bulk sender and ACK-generating receiver.
//!
//! The receiver acknowledges every arriving segment individually and echoes
//! the transmission's send-time stamps, so the sender can attribute each
//! delivery to one transmission without keeping per-segment history for
//! transmissions it has already given up on.

use std::collections::{BTreeMap, BTreeSet};

use crate::cc::{AckedSegment, CcState, RateSample};
use crate::engine::SimTime;
use crate::net::{transmission_time, FlowId, Segment, SEGMENT_BYTES};

/// Number of later transmissions that must be acknowledged before a hole is
/// declared lost.
pub const DUP_THRESH: u32 = 3;
pub const MIN_RTO: SimTime = SimTime::from_millis(200);
const INITIAL_RTO: SimTime = SimTime::from_secs(1);

#[derive(Clone, Debug, PartialEq)]
pub struct Ack {
    pub flow_id: FlowId,
    /// Largest fully received prefix.
    pub cumulative_ack: u64,
    /// The selective block for the segment that triggered this ACK.
    pub sack: (u64, u64),
    pub tx_id: u64,
    pub size_bytes: u64,
    pub sent_at: SimTime,
    pub delivered_snapshot: u64,
    pub is_app_limited: bool,
    pub is_retransmit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Outstanding {
    lo: u64,
    hi: u64,
    size: u64,
    acked_after: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub sent_bytes: u64,
    pub sent_segments: u64,
    pub retransmitted_segments: u64,
    pub delivered_unique_bytes: u64,
    pub lost_segments: u64,
    pub rto_fires: u64,
    pub spurious_losses: u64,
}

/// Result of one [`SenderState::maybe_send`] attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct SendOutcome {
    pub segment: Option<Segment>,
    /// When pacing next allows a send. `None` when blocked by cwnd (the
    /// next ACK re-drives the sender) or when the flow is stopped.
    pub wake_at: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AckOutcome {
    pub newly_delivered: u64,
    pub lost: Vec<(u64, u64)>,
    pub sample: Option<RateSample>,
}

#[derive(Clone, Debug)]
pub struct SenderState {
    flow_id: FlowId,
    pub cc: CcState,
    next_seq: u64,
    next_tx_id: u64,
    outstanding: BTreeMap<u64, Outstanding>,
    retransmit_queue: BTreeMap<u64, u64>,
    delivered: BTreeSet<u64>,
    delivered_prefix: u64,
    next_send_at: SimTime,
    srtt: Option<SimTime>,
    rttvar: SimTime,
    stats: SenderStats,
    active: bool,
}

impl SenderState {
    pub fn new(flow_id: FlowId, cc: CcState) -> Self {
        SenderState {
            flow_id,
            cc,
            next_seq: 0,
            next_tx_id: 0,
            outstanding: BTreeMap::new(),
            retransmit_queue: BTreeMap::new(),
            delivered: BTreeSet::new(),
            delivered_prefix: 0,
            next_send_at: SimTime::ZERO,
            srtt: None,
            rttvar: SimTime::ZERO,
            stats: SenderStats::default(),
            active: true,
        }
    }

    pub fn flow_id(&self) -> FlowId {
        self.flow_id
    }

    pub fn stats(&self) -> SenderStats {
        self.stats
    }

    pub fn inflight_bytes(&self) -> u64 {
        self.cc.inflight_bytes()
    }

    /// Bytes in transmissions neither acknowledged nor declared lost,
    /// recomputed from the scoreboard.
    pub fn outstanding_bytes(&self) -> u64 {
        self.outstanding.values().map(|o| o.size).sum()
    }

    pub fn pending_retransmits(&self) -> usize {
        self.retransmit_queue.len()
    }

    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Stops the bulk source; nothing further is transmitted.
    pub fn stop(&mut self) {
        self.active = false;
    }

    pub fn has_outstanding(&self) -> bool {
        !self.outstanding.is_empty()
    }

    /// `max(srtt + 4 * rttvar, 200 ms)`.
    pub fn rto(&self) -> SimTime {
        match self.srtt {
            Some(srtt) => (srtt + SimTime::from_nanos(4 * self.rttvar.as_nanos())).max(MIN_RTO),
            None => INITIAL_RTO,
        }
    }

    /// Sends at most one segment if pacing and cwnd allow it.
    /// Retransmissions take priority over new data.
    pub fn maybe_send(&mut self, now: SimTime) -> SendOutcome {
        if !self.active {
            return SendOutcome { segment: None, wake_at: None };
        }
        if now < self.next_send_at {
            return SendOutcome { segment: None, wake_at: Some(self.next_send_at) };
        }
        if self.cc.inflight_bytes() + SEGMENT_BYTES > self.cc.cwnd_bytes() {
            return SendOutcome { segment: None, wake_at: None };
        }

        let (lo, hi, is_retransmit) = match self.retransmit_queue.pop_first() {
            Some((lo, hi)) => (lo, hi, true),
            None => {
                let lo = self.next_seq;
                self.next_seq += SEGMENT_BYTES;
                (lo, lo + SEGMENT_BYTES, false)
            }
        };
        let size = hi - lo;
        let stamp = self.cc.on_send(size, now);
        let tx_id = self.next_tx_id;
        self.next_tx_id += 1;
        self.outstanding.insert(tx_id, Outstanding { lo, hi, size, acked_after: 0 });

        self.stats.sent_bytes += size;
        self.stats.sent_segments += 1;
        if is_retransmit {
            self.stats.retransmitted_segments += 1;
        }

        let gap = transmission_time(size, self.cc.pacing_rate().max(1));
        self.next_send_at = now + gap;

        let segment = Segment {
            flow_id: self.flow_id,
            lo,
            hi,
            size_bytes: size,
            sent_at: now,
            delivered_snapshot: stamp.delivered_snapshot,
            is_retransmit,
            is_app_limited: stamp.is_app_limited,
            tx_id,
        };
        let blocked = self.cc.inflight_bytes() + SEGMENT_BYTES > self.cc.cwnd_bytes();
        SendOutcome {
            segment: Some(segment),
            wake_at: (!blocked).then_some(self.next_send_at),
        }
    }

    /// Processes one ACK: scoreboard update, loss detection, RTT and rate
    /// sampling, and the congestion-control update.
    pub fn on_ack(&mut self, ack: &Ack, now: SimTime) -> AckOutcome {
        let mut out = AckOutcome::default();
        let was_in_flight = self.outstanding.remove(&ack.tx_id).is_some();
        let (lo, hi) = ack.sack;
        let first_delivery = lo >= self.delivered_prefix && self.delivered.insert(lo);

        if first_delivery {
            out.newly_delivered = hi - lo;
            self.stats.delivered_unique_bytes += hi - lo;
            if self.retransmit_queue.remove(&lo).is_some() {
                self.stats.spurious_losses += 1;
            }
        }
        while self.delivered_prefix < ack.cumulative_ack {
            self.delivered.remove(&self.delivered_prefix);
            self.delivered_prefix += SEGMENT_BYTES;
        }

        if !was_in_flight && !first_delivery {
            return out;
        }

        if was_in_flight {
            out.lost = self.detect_loss(ack.tx_id);
        }

        let acked = AckedSegment {
            size_bytes: ack.size_bytes,
            sent_at: ack.sent_at,
            delivered_snapshot: ack.delivered_snapshot,
            is_app_limited: ack.is_app_limited,
            was_in_flight,
        };
        let sample = self.cc.on_segment_acked(&acked, now);
        self.update_rtt(sample.rtt);
        self.cc.on_ack(&sample, now);
        out.sample = Some(sample);
        out
    }

    /// Marks every transmission sent before `acked_tx` that has now seen
    /// `DUP_THRESH` later transmissions acknowledged as lost.
    pub fn detect_loss(&mut self, acked_tx: u64) -> Vec<(u64, u64)> {
        let mut lost_ids = Vec::new();
        for (&tx, o) in self.outstanding.range_mut(..acked_tx) {
            o.acked_after += 1;
            if o.acked_after >= DUP_THRESH {
                lost_ids.push(tx);
            }
        }
        lost_ids
            .into_iter()
            .map(|tx| {
                let o = self.outstanding.remove(&tx).expect("collected above");
                self.mark_lost(o);
                (o.lo, o.hi)
            })
            .collect()
    }

    /// Retransmission timeout: the earliest outstanding transmission is
    /// declared lost.
    pub fn on_rto(&mut self) -> Option<(u64, u64)> {
        let (_, o) = self.outstanding.pop_first()?;
        self.stats.rto_fires += 1;
        self.mark_lost(o);
        Some((o.lo, o.hi))
    }

    fn mark_lost(&mut self, o: Outstanding) {
        self.stats.lost_segments += 1;
        self.cc.on_loss(o.size);
        let delivered = o.lo < self.delivered_prefix || self.delivered.contains(&o.lo);
        if !delivered {
            self.retransmit_queue.insert(o.lo, o.hi);
        }
    }

    fn update_rtt(&mut self, rtt: SimTime) {
        match self.srtt {
            None => {
                self.srtt = Some(rtt);
                self.rttvar = SimTime::from_nanos(rtt.as_nanos() / 2);
            }
            Some(srtt) => {
                let diff = srtt.as_nanos().abs_diff(rtt.as_nanos());
                self.rttvar = SimTime::from_nanos((3 * self.rttvar.as_nanos() + diff) / 4);
                self.srtt = Some(SimTime::from_nanos((7 * srtt.as_nanos() + rtt.as_nanos()) / 8));
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReceiverState {
    flow_id: FlowId,
    cumulative_ack: u64,
    above: BTreeSet<u64>,
    pub extra_ack_delay: SimTime,
    received_bytes: u64,
}

impl ReceiverState {
    pub fn new(flow_id: FlowId, extra_ack_delay: SimTime) -> Self {
        ReceiverState {
            flow_id,
            cumulative_ack: 0,
            above: BTreeSet::new(),
            extra_ack_delay,
            received_bytes: 0,
        }
    }

    pub fn cumulative_ack(&self) -> u64 {
        self.cumulative_ack
    }

    /// Every byte that reached the receiver, duplicates included.
    pub fn received_bytes(&self) -> u64 {
        self.received_bytes
    }

    pub fn out_of_order_segments(&self) -> usize {
        self.above.len()
    }

    /// Records an arrival and returns the ACK with its emission time.
    pub fn on_segment_arrival(&mut self, seg: &Segment, now: SimTime) -> (SimTime, Ack) {
        self.received_bytes += seg.size_bytes;
        if seg.lo == self.cumulative_ack {
            self.cumulative_ack = seg.hi;
            while self.above.remove(&self.cumulative_ack) {
                self.cumulative_ack += SEGMENT_BYTES;
            }
        } else if seg.lo > self.cumulative_ack {
            self.above.insert(seg.lo);
        }
        let ack = Ack {
            flow_id: self.flow_id,
            cumulative_ack: self.cumulative_ack,
            sack: (seg.lo, seg.hi),
            tx_id: seg.tx_id,
            size_bytes: seg.size_bytes,
            sent_at: seg.sent_at,
            delivered_snapshot: seg.delivered_snapshot,
            is_app_limited: seg.is_app_limited,
            is_retransmit: seg.is_retransmit,
        };
        (now + self.extra_ack_delay, ack)
    }
}
