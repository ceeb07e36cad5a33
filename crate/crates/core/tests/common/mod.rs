//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use bbq_core::cc::{BbqParams, BwFilter, RttFilter, Variant};
use bbq_core::net::{red_drop_decision, RedParams};
use bbq_core::scenarios::{run_scenario, FlowConfig, ScenarioConfig, Simulation};
use bbq_core::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force max over samples from the last `window` rounds.
pub fn brute_max(samples: &[(u64, u64)], window: u64) -> u64 {
    let Some(&(latest, _)) = samples.last() else {
        return 0;
    };
    samples
        .iter()
        .filter(|&&(r, _)| r + window > latest)
        .map(|&(_, v)| v)
        .max()
        .unwrap_or(0)
}

/// Brute-force min over samples no older than `window`.
pub fn brute_min(samples: &[(SimTime, SimTime)], window: SimTime) -> Option<SimTime> {
    let &(now, _) = samples.last()?;
    samples
        .iter()
        .filter(|&&(t, _)| now.saturating_sub(t) <= window)
        .map(|&(_, v)| v)
        .min()
}

/// Feeds `steps` (round increment, rate) into a filter and checks every
/// intermediate value against the brute-force max.
pub fn bw_filter_matches(window: u64, steps: &[(u64, u64)]) -> Result<(), String> {
    let mut f = BwFilter::new(window);
    let mut seen = Vec::with_capacity(steps.len());
    let mut round = 0;
    for &(dr, v) in steps {
        round += dr;
        f.update(round, v);
        seen.push((round, v));
        let want = brute_max(&seen, window);
        if f.current() != want {
            return Err(format!("round {round}: filter {} vs oracle {want}", f.current()));
        }
    }
    Ok(())
}

pub fn rtt_filter_matches(window: SimTime, steps: &[(u64, u64)]) -> Result<(), String> {
    let mut f = RttFilter::new(window);
    let mut seen = Vec::with_capacity(steps.len());
    let mut now = SimTime::ZERO;
    for &(dt_us, rtt_us) in steps {
        now += SimTime::from_micros(dt_us);
        let rtt = SimTime::from_micros(rtt_us);
        f.update(now, rtt);
        seen.push((now, rtt));
        let want = brute_min(&seen, window);
        if f.current() != want {
            return Err(format!("t={now:?}: filter {:?} vs oracle {want:?}", f.current()));
        }
    }
    Ok(())
}

/// Random filter workloads from a seeded generator.
pub fn random_filter_workload(rng: &mut ChaCha8Rng) -> (u64, Vec<(u64, u64)>) {
    let window = rng.gen_range(1..=12);
    let len = rng.gen_range(1..120);
    let steps = (0..len)
        .map(|_| (rng.gen_range(0..3), rng.gen_range(0..50)))
        .collect();
    (window, steps)
}

/// Long-run drop rate of count-corrected RED at a fixed base probability:
/// the gap between drops is uniform on 1..=1/p_b, so the rate is
/// 2·p_b / (1 + p_b).
pub fn red_closed_form(pb: f64) -> f64 {
    2.0 * pb / (1.0 + pb)
}

pub fn red_empirical(params: &RedParams, avg_bytes: f64, trials: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0;
    let mut drops = 0u64;
    for _ in 0..trials {
        let d = red_drop_decision(params, avg_bytes, count, &mut rng);
        count = d.count;
        drops += d.drop as u64;
    }
    drops as f64 / trials as f64
}

/// Runs `cfg` one event at a time with every invariant checked after each
/// event. Returns the number of events processed.
pub fn conservation_fuzz(cfg: &ScenarioConfig, max_events: u64) -> Result<u64, String> {
    let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
    sim.run_checked(cfg.end_time(), max_events)
}

/// A Bbq flow with the cap disabled must take exactly the decisions a Bbr
/// flow takes.
pub fn unbounded_bbq_matches_bbr(base: &ScenarioConfig) -> Result<(), String> {
    let mut bbr = base.clone();
    let mut bbq = base.clone();
    for f in &mut bbr.flows {
        f.cc = Variant::Bbr;
    }
    for f in &mut bbq.flows {
        f.cc = Variant::Bbq;
        f.bbq = BbqParams { alpha: SimTime::MAX, beta: f.bbq.beta };
    }
    let a = run_scenario(&bbr).map_err(|e| e.to_string())?;
    let b = run_scenario(&bbq).map_err(|e| e.to_string())?;
    for (x, y) in a.flows.iter().zip(&b.flows) {
        if x.decision_digest != y.decision_digest || x.acks != y.acks {
            return Err(format!("flow {} diverges", x.flow_id));
        }
    }
    if a.samples.len() != b.samples.len() {
        return Err("trace lengths differ".into());
    }
    for (x, y) in a.samples.iter().zip(&b.samples) {
        let same = x.t == y.t
            && x.goodput_bps == y.goodput_bps
            && x.rtt == y.rtt
            && x.inflight_bytes == y.inflight_bytes
            && x.cwnd_bytes == y.cwnd_bytes
            && x.mode == y.mode
            && x.pacing_gain == y.pacing_gain;
        if !same {
            return Err(format!("trace diverges at t={:?} flow {}", x.t, x.flow_id));
        }
    }
    Ok(())
}

/// A small, fast two-flow scenario.
pub fn small_pair(cc: Variant, secs: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(
        20,
        vec![FlowConfig::new(10, cc), FlowConfig::new(40, cc)],
    );
    for f in &mut cfg.flows {
        f.duration = SimTime::from_secs(secs);
    }
    cfg.buffer_bytes = 200_000;
    cfg
}
