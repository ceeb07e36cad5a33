//! Wires senders, receivers and the bottleneck together on the event kernel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cc::{CcState, Mode, PhaseStats};
use crate::endpoint::{Ack, ReceiverState, SenderState, SenderStats};
use crate::engine::{EventId, RunStats, Scheduler, SimTime};
use crate::error::ConfigError;
use crate::net::{BottleneckQueue, EnqueueOutcome, FlowId, LinkPath, Segment};

use super::config::ScenarioConfig;
use super::metrics::{summarize, MetricsSample, SummaryStats};

#[derive(Debug)]
enum Event {
    FlowStart(FlowId),
    FlowStop(FlowId),
    PacingTimer(FlowId),
    Rto(FlowId),
    LinkDeparture,
    SegmentArrival(Segment),
    AckArrival(Ack),
    MetricsTick,
    CheatTurn(usize),
}

/// One applied cheat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheatRecord {
    pub turn: usize,
    pub at: SimTime,
    pub cheater: FlowId,
    /// Path RTT (propagation plus ACK delay) the cheater now presents.
    pub inflated_rtt: SimTime,
    pub extra_ack_delay: SimTime,
    /// Cheater's MinRTT estimate at the end of its turn.
    pub measured_min_rtt: Option<SimTime>,
}

#[derive(Clone, Debug)]
pub struct FlowReport {
    pub flow_id: FlowId,
    pub stats: SenderStats,
    pub phases: PhaseStats,
    pub drops: u64,
    pub decision_digest: u64,
    pub acks: u64,
    pub first_steady_at: Option<SimTime>,
    pub final_extra_ack_delay: SimTime,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub samples: Vec<MetricsSample>,
    pub summary: SummaryStats,
    pub flows: Vec<FlowReport>,
    pub cheats: Vec<CheatRecord>,
    pub events: u64,
}

struct FlowRuntime {
    sender: SenderState,
    receiver: ReceiverState,
    path: LinkPath,
    started: bool,
    stopped: bool,
    pacing_timer: Option<EventId>,
    rto_timer: Option<EventId>,
    delivered_at_last_tick: u64,
    first_steady_at: Option<SimTime>,
    // byte accounting for the conservation check
    forward_in_flight: u64,
}

struct World {
    cfg: ScenarioConfig,
    queue: BottleneckQueue,
    rng: ChaCha8Rng,
    flows: Vec<FlowRuntime>,
    samples: Vec<MetricsSample>,
    cheats: Vec<CheatRecord>,
}

/// A runnable instance of a [`ScenarioConfig`].
pub struct Simulation {
    sched: Scheduler<Event>,
    world: World,
}

/// Builds and runs `cfg` to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run_until(cfg.end_time());
    Ok(sim.finish())
}

fn flow_seed(seed: u64, flow: FlowId) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(flow as u64 + 1)
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut sched = Scheduler::new();
        let flows = cfg
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let cc = CcState::new(f.cc, f.bbq, flow_seed(cfg.seed, i), f.start);
                let mut path = LinkPath::from_rtt(i, f.rtt);
                path.extra_ack_delay = f.extra_ack_delay;
                FlowRuntime {
                    sender: SenderState::new(i, cc),
                    receiver: ReceiverState::new(i, f.extra_ack_delay),
                    path,
                    started: false,
                    stopped: false,
                    pacing_timer: None,
                    rto_timer: None,
                    delivered_at_last_tick: 0,
                    first_steady_at: None,
                    forward_in_flight: 0,
                }
            })
            .collect();
        for (i, f) in cfg.flows.iter().enumerate() {
            sched.schedule(f.start, Event::FlowStart(i)).expect("t >= 0");
            sched.schedule(f.end(), Event::FlowStop(i)).expect("t >= 0");
        }
        sched
            .schedule(cfg.metrics_interval, Event::MetricsTick)
            .expect("t >= 0");
        if let Some(c) = &cfg.cheat {
            for k in 0..c.turns {
                sched.schedule(c.turn_start(k), Event::CheatTurn(k)).expect("t >= 0");
            }
        }
        let world = World {
            queue: BottleneckQueue::new(cfg.buffer_bytes, cfg.link_rate_bps, cfg.aqm),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_DEAD_BEEF),
            flows,
            samples: Vec::new(),
            cheats: Vec::new(),
            cfg: cfg.clone(),
        };
        Ok(Simulation { sched, world })
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn events_fired(&self) -> u64 {
        self.sched.fired_total()
    }

    pub fn run_until(&mut self, t_end: SimTime) -> RunStats {
        let world = &mut self.world;
        self.sched.run_until(t_end, |sched, ev| world.handle(sched, ev))
    }

    /// Runs at most `max_events` events up to `t_end`, checking the byte
    /// conservation and scoreboard invariants after every one.
    pub fn run_checked(&mut self, t_end: SimTime, max_events: u64) -> Result<u64, String> {
        let mut fired = 0;
        let mut last = self.sched.now();
        while fired < max_events {
            let Some(ev) = self.sched.next_event(t_end) else {
                break;
            };
            fired += 1;
            let now = self.sched.now();
            if now < last {
                return Err(format!("clock went backwards: {last} -> {now}"));
            }
            last = now;
            self.world.handle(&mut self.sched, ev);
            self.world.check_invariants()?;
        }
        Ok(fired)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.world.check_invariants()
    }

    pub fn finish(self) -> RunOutput {
        let now = self.sched.now();
        let events = self.sched.fired_total();
        let World { cfg, queue, flows, samples, mut cheats, .. } = self.world;
        if let Some(last) = cheats.last_mut() {
            last.measured_min_rtt = flows[last.cheater].sender.cc.min_rtt();
        }
        let reports: Vec<FlowReport> = flows
            .iter()
            .enumerate()
            .map(|(i, f)| FlowReport {
                flow_id: i,
                stats: f.sender.stats(),
                phases: f.sender.cc.phase_stats(now.min(cfg.flows[i].end())),
                drops: queue.drops(i),
                decision_digest: f.sender.cc.decision_digest(),
                acks: f.sender.cc.acks_processed(),
                first_steady_at: f.first_steady_at,
                final_extra_ack_delay: f.receiver.extra_ack_delay,
            })
            .collect();
        let summary = summarize(&cfg, &samples, &reports);
        RunOutput {
            config: cfg,
            samples,
            summary,
            flows: reports,
            cheats,
            events,
        }
    }
}

impl World {
    fn handle(&mut self, sched: &mut Scheduler<Event>, ev: Event) {
        let now = sched.now();
        match ev {
            Event::FlowStart(f) => {
                self.flows[f].started = true;
                self.try_send(sched, f);
            }
            Event::FlowStop(f) => {
                let flow = &mut self.flows[f];
                flow.stopped = true;
                flow.sender.stop();
                for id in [flow.pacing_timer.take(), flow.rto_timer.take()].into_iter().flatten() {
                    sched.cancel(id);
                }
            }
            Event::PacingTimer(f) => {
                self.flows[f].pacing_timer = None;
                self.try_send(sched, f);
            }
            Event::Rto(f) => {
                let flow = &mut self.flows[f];
                flow.rto_timer = None;
                if flow.stopped {
                    return;
                }
                flow.sender.on_rto();
                self.arm_rto(sched, f);
                self.try_send(sched, f);
            }
            Event::LinkDeparture => {
                let seg = self.queue.finish_service(now);
                let flow = &mut self.flows[seg.flow_id];
                flow.forward_in_flight += seg.size_bytes;
                let at = now + flow.path.fwd_prop;
                sched.schedule(at, Event::SegmentArrival(seg)).expect("future");
                if let Some(t) = self.queue.dequeue_service(now) {
                    sched.schedule(t, Event::LinkDeparture).expect("future");
                }
            }
            Event::SegmentArrival(seg) => {
                let flow = &mut self.flows[seg.flow_id];
                flow.forward_in_flight -= seg.size_bytes;
                let (emit_at, ack) = flow.receiver.on_segment_arrival(&seg, now);
                let at = emit_at + flow.path.rev_prop;
                sched.schedule(at, Event::AckArrival(ack)).expect("future");
            }
            Event::AckArrival(ack) => {
                let f = ack.flow_id;
                let flow = &mut self.flows[f];
                if flow.stopped {
                    return;
                }
                let out = flow.sender.on_ack(&ack, now);
                if flow.first_steady_at.is_none() && flow.sender.cc.mode() == Mode::ProbeBw {
                    flow.first_steady_at = Some(now);
                }
                if out.sample.is_some() {
                    if let Some(id) = flow.rto_timer.take() {
                        sched.cancel(id);
                    }
                    self.arm_rto(sched, f);
                }
                self.try_send(sched, f);
            }
            Event::MetricsTick => {
                self.sample_metrics(now);
                if now < self.cfg.end_time() {
                    sched.schedule_in(self.cfg.metrics_interval, Event::MetricsTick);
                }
            }
            Event::CheatTurn(k) => self.cheat_turn(now, k),
        }
    }

    fn try_send(&mut self, sched: &mut Scheduler<Event>, f: FlowId) {
        let now = sched.now();
        let flow = &mut self.flows[f];
        if !flow.started || flow.stopped || flow.pacing_timer.is_some() {
            return;
        }
        let out = flow.sender.maybe_send(now);
        if let Some(at) = out.wake_at {
            flow.pacing_timer = Some(sched.schedule(at, Event::PacingTimer(f)).expect("future"));
        }
        if let Some(seg) = out.segment {
            if flow.rto_timer.is_none() {
                let rto = flow.sender.rto();
                flow.rto_timer = Some(sched.schedule_in(rto, Event::Rto(f)));
            }
            match self.queue.enqueue(seg, now, &mut self.rng) {
                EnqueueOutcome::Accepted => {
                    if let Some(t) = self.queue.dequeue_service(now) {
                        sched.schedule(t, Event::LinkDeparture).expect("future");
                    }
                }
                EnqueueOutcome::Dropped(..) => {}
            }
        }
    }

    fn arm_rto(&mut self, sched: &mut Scheduler<Event>, f: FlowId) {
        let flow = &mut self.flows[f];
        if flow.rto_timer.is_none() && flow.sender.has_outstanding() {
            let rto = flow.sender.rto();
            flow.rto_timer = Some(sched.schedule_in(rto, Event::Rto(f)));
        }
    }

    fn sample_metrics(&mut self, now: SimTime) {
        let interval = self.cfg.metrics_interval.as_secs_f64();
        for (i, flow) in self.flows.iter_mut().enumerate() {
            if !flow.started || flow.stopped {
                continue;
            }
            let delivered = flow.sender.stats().delivered_unique_bytes;
            let goodput = (delivered - flow.delivered_at_last_tick) as f64 * 8.0 / interval;
            flow.delivered_at_last_tick = delivered;
            let cc = &flow.sender.cc;
            let rtt = cc.latest_rtt();
            self.samples.push(MetricsSample {
                t: now,
                flow_id: i,
                goodput_bps: goodput,
                rtt,
                path_rtt: flow.path.base_rtt() + flow.receiver.extra_ack_delay,
                inflight_bytes: cc.inflight_bytes(),
                cwnd_bytes: cc.cwnd_bytes(),
                queue_backlog_bytes: self.queue.backlog(i),
                queue_occupancy_bytes: self.queue.occupancy_bytes(),
                queue_share: self.queue.queue_share(i),
                mode: cc.mode(),
                pacing_gain: cc.pacing_gain(),
                cwnd_bounded: rtt.is_some_and(|r| cc.is_cwnd_bounded(r)),
            });
        }
    }

    fn cheat_turn(&mut self, now: SimTime, k: usize) {
        let Some(policy) = self.cfg.cheat.clone() else {
            return;
        };
        // close out the previous turn's record
        if let Some(last) = self.cheats.last_mut() {
            last.measured_min_rtt = self.flows[last.cheater].sender.cc.min_rtt();
        }
        let cheater = policy.players[k % 2];
        let other = policy.players[(k + 1) % 2];
        let other_rtt =
            self.flows[other].path.base_rtt() + self.flows[other].receiver.extra_ack_delay;
        let target = SimTime::from_nanos(2 * other_rtt.as_nanos());
        let flow = &mut self.flows[cheater];
        let base = flow.path.base_rtt();
        let delay = target.saturating_sub(base).max(flow.receiver.extra_ack_delay);
        flow.receiver.extra_ack_delay = delay;
        flow.path.extra_ack_delay = delay;
        self.cheats.push(CheatRecord {
            turn: k,
            at: now,
            cheater,
            inflated_rtt: base + delay,
            extra_ack_delay: delay,
            measured_min_rtt: None,
        });
    }

    fn check_invariants(&self) -> Result<(), String> {
        if self.queue.backlog_sum() != self.queue.occupancy_bytes() {
            return Err(format!(
                "queue occupancy {} != sum of backlogs {}",
                self.queue.occupancy_bytes(),
                self.queue.backlog_sum()
            ));
        }
        if self.queue.occupancy_bytes() > self.queue.capacity_bytes() {
            return Err("queue over capacity".into());
        }
        if !self.queue.is_empty() && !self.queue.is_serving() {
            return Err("link idle with a non-empty queue".into());
        }
        for (i, f) in self.flows.iter().enumerate() {
            let sent = f.sender.stats().sent_bytes;
            let dropped = self.queue.drops(i) * crate::net::SEGMENT_BYTES;
            let accounted = f.receiver.received_bytes()
                + dropped
                + self.queue.backlog(i)
                + f.forward_in_flight;
            if sent != accounted {
                return Err(format!(
                    "flow {i}: sent {sent} != received {} + dropped {dropped} + queued {} + propagating {}",
                    f.receiver.received_bytes(),
                    self.queue.backlog(i),
                    f.forward_in_flight
                ));
            }
            if f.sender.inflight_bytes() != f.sender.outstanding_bytes() {
                return Err(format!(
                    "flow {i}: cc inflight {} != scoreboard {}",
                    f.sender.inflight_bytes(),
                    f.sender.outstanding_bytes()
                ));
            }
        }
        Ok(())
    }
}
