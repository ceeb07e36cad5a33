mod common;

use bbq_core::cc::{BbqParams, CcState, QueueState, RateSample, Variant};
use bbq_core::net::RedParams;
use bbq_core::scenarios::{run_scenario, Simulation};
use bbq_core::SimTime;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn bw_filter_equals_brute_force_max(
        window in 1u64..=12,
        steps in prop::collection::vec((0u64..3, 0u64..1_000), 1..100),
    ) {
        prop_assert_eq!(common::bw_filter_matches(window, &steps), Ok(()));
    }

    #[test]
    fn rtt_filter_equals_brute_force_min(
        window_ms in 1u64..=20,
        steps in prop::collection::vec((0u64..5_000, 1u64..100_000), 1..100),
    ) {
        prop_assert_eq!(
            common::rtt_filter_matches(SimTime::from_millis(window_ms), &steps),
            Ok(())
        );
    }
}

fn seeded(min_rtt: SimTime) -> CcState {
    let mut s = CcState::new(Variant::Bbq, BbqParams::default(), 3, SimTime::ZERO);
    let sample = RateSample {
        delivery_rate: 80_000_000,
        rtt: min_rtt,
        is_app_limited: false,
        prior_delivered: 0,
    };
    s.on_ack(&sample, SimTime::from_millis(1));
    s
}

proptest! {
    #[test]
    fn cwnd_bounded_flips_exactly_at_twice_min_rtt(min_us in 100u64..500_000) {
        let min = SimTime::from_micros(min_us);
        let s = seeded(min);
        let two = SimTime::from_nanos(2 * min.as_nanos());
        prop_assert!(!s.is_cwnd_bounded(two));
        prop_assert!(s.is_cwnd_bounded(two + SimTime::from_nanos(1)));
        prop_assert!(!s.is_cwnd_bounded(min));
    }

    #[test]
    fn queue_detection_threshold_is_one_plus_beta(min_us in 1_000u64..200_000, beta in 0.001f64..0.5) {
        let min = SimTime::from_micros(min_us);
        let s = seeded(min);
        let slack = SimTime::from_nanos((beta * min.as_nanos() as f64).round() as u64);
        let edge = min + slack;
        prop_assert_eq!(s.detect_queue(edge, beta), QueueState::QueuePresent);
        prop_assert_eq!(s.detect_queue(edge - SimTime::from_nanos(1), beta), QueueState::Underutilized);
    }
}

#[test]
fn cwnd_bounded_matches_byte_form() {
    // MaxBw·rtt > 2·MaxBw·MinRTT, evaluated in bytes at 80 Mbps.
    let min = SimTime::from_millis(10);
    let s = seeded(min);
    for rtt_ms in [5u64, 10, 19, 20, 21, 40] {
        let rtt = SimTime::from_millis(rtt_ms);
        let inflight = 80_000_000u128 * rtt.as_nanos() as u128;
        let cwnd = 2 * 80_000_000u128 * min.as_nanos() as u128;
        assert_eq!(s.is_cwnd_bounded(rtt), inflight > cwnd, "rtt {rtt_ms} ms");
    }
}

#[test]
fn red_drop_rate_matches_closed_form() {
    let red = RedParams::new(100_000, 300_000, 0.1);
    assert!((red.base_probability(200_000.0) - 0.05).abs() < 1e-12);
    for (avg, pb) in [(200_000.0, 0.05), (120_000.0, 0.01), (280_000.0, 0.09)] {
        let want = common::red_closed_form(pb);
        let got = common::red_empirical(&red, avg, 400_000, 5);
        let err = (got - want).abs() / want;
        assert!(err < 0.05, "p_b {pb}: empirical {got:.5} vs {want:.5}");
    }
}

#[test]
fn red_below_min_never_drops_and_above_max_always_drops() {
    let red = RedParams::new(100_000, 300_000, 0.1);
    assert_eq!(common::red_empirical(&red, 99_999.0, 10_000, 1), 0.0);
    assert_eq!(common::red_empirical(&red, 300_000.0, 10_000, 1), 1.0);
}

#[test]
fn unbounded_alpha_reduces_bbq_to_bbr() {
    for (short, long) in [(10, 50), (10, 100), (20, 20)] {
        let mut cfg = common::small_pair(Variant::Bbr, 20);
        cfg.flows[0].rtt = SimTime::from_millis(short);
        cfg.flows[1].rtt = SimTime::from_millis(long);
        common::unbounded_bbq_matches_bbr(&cfg).unwrap();
    }
}

#[test]
fn finite_alpha_changes_the_trace() {
    let cfg = common::small_pair(Variant::Bbq, 20);
    let mut bbr = cfg.clone();
    for f in &mut bbr.flows {
        f.cc = Variant::Bbr;
    }
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&bbr).unwrap();
    assert_ne!(a.flows[1].decision_digest, b.flows[1].decision_digest);
}

#[test]
fn bytes_are_conserved_at_every_event() {
    for cc in [Variant::Bbr, Variant::BbrStrictDrain, Variant::Bbq] {
        let mut cfg = common::small_pair(cc, 60);
        cfg.buffer_bytes = 60_000;
        cfg.flows[1].start = SimTime::from_millis(1_500);
        let n = common::conservation_fuzz(&cfg, 200_000).unwrap();
        assert_eq!(n, 200_000, "{cc}");
    }
}

#[test]
fn conservation_holds_under_red_and_stops() {
    let mut cfg = common::small_pair(Variant::Bbr, 30);
    cfg.aqm = bbq_core::net::Aqm::Red(RedParams::new(30_000, 90_000, 0.1));
    cfg.flows[0].duration = SimTime::from_secs(12);
    let mut sim = Simulation::new(&cfg).unwrap();
    sim.run_checked(cfg.end_time(), u64::MAX).unwrap();
    let out = sim.finish();
    assert!(out.flows.iter().all(|f| f.stats.retransmitted_segments > 0));
}

#[test]
fn bbq_probe_never_exceeds_alpha_under_queue() {
    let cfg = common::small_pair(Variant::Bbq, 40);
    let out = run_scenario(&cfg).unwrap();
    for f in &out.flows {
        assert!(f.phases.probe_phases > 0);
        assert!(f.phases.longest_queued_probe <= SimTime::from_millis(3), "{:?}", f.phases);
    }
}

#[test]
fn strict_drain_traps_the_short_flow() {
    let mut cfg = common::small_pair(Variant::BbrStrictDrain, 40);
    cfg.buffer_bytes = 400_000;
    let out = run_scenario(&cfg).unwrap();
    let strict = &out.summary.flows[0];
    // queueing held above MinRTT/3 keeps the drain phase open
    assert!(strict.mean_queueing_ms > 10.0 / 3.0);
    assert!(strict.drain_fraction > 0.5, "{strict:?}");

    let mut bbr = cfg.clone();
    for f in &mut bbr.flows {
        f.cc = Variant::Bbr;
    }
    let out = run_scenario(&bbr).unwrap();
    assert!(out.summary.flows[0].drain_fraction < strict.drain_fraction);
}
