//! Built-in experiment suites.
//!
//! Each suite is a fixed list of labelled scenarios. Unless a suite says
//! otherwise: 100 Mbps bottleneck, 2 MB drop-tail buffer, 120 s bulk flows,
//! a 10 ms flow against a 50 ms flow.

use rayon::prelude::*;

use crate::cc::{BbqParams, Variant};
use crate::engine::SimTime;
use crate::error::ConfigError;
use crate::net::{Aqm, RedParams};

use super::config::{CheatPolicy, FlowConfig, ScenarioConfig};
use super::sim::{run_scenario, RunOutput};

pub const SUITE_NAMES: [&str; 12] = [
    "fig1",
    "fig3",
    "fig4a",
    "fig4b",
    "fig5_8",
    "fig9",
    "fig10",
    "fig11",
    "fig12",
    "table1",
    "strategic",
    "strict_drain",
];

pub const BANDWIDTHS_MBPS: [u64; 7] = [10, 20, 50, 100, 200, 400, 1000];
pub const COMPETITOR_RTTS_MS: [u64; 7] = [10, 15, 20, 30, 50, 100, 200];
pub const SHORT_FLOW_COUNTS: [usize; 4] = [1, 5, 10, 20];

/// `(label, params)` for the three RED rows.
pub const RED_ROWS: [(&str, RedParams); 3] = [
    ("red1", RedParams::new(170_000, 500_000, 0.02)),
    ("red2", RedParams::new(170_000, 500_000, 0.10)),
    ("red3", RedParams::new(170_000, 330_000, 0.02)),
];

/// Short flow leaves here in the convergence run.
pub const DEPARTURE: SimTime = SimTime::from_secs(110);

#[derive(Clone, Debug)]
pub struct SuiteRun {
    pub label: String,
    pub config: ScenarioConfig,
}

fn run(label: impl Into<String>, config: ScenarioConfig) -> SuiteRun {
    SuiteRun { label: label.into(), config }
}

/// A short (10 ms) flow against a long one at `link_mbps`, both `cc`.
pub fn pair(cc: Variant, short_ms: u64, long_ms: u64, link_mbps: u64) -> ScenarioConfig {
    ScenarioConfig::new(
        link_mbps,
        vec![FlowConfig::new(short_ms, cc), FlowConfig::new(long_ms, cc)],
    )
}

/// Flow 0 is the 50 ms flow, flows 1..=n are 10 ms flows.
pub fn many_short(cc: Variant, n: usize) -> ScenarioConfig {
    let mut flows = vec![FlowConfig::new(50, cc)];
    flows.extend((0..n).map(|_| FlowConfig::new(10, cc)));
    ScenarioConfig::new(100, flows)
}

/// Both flows BBQ; the short one departs at [`DEPARTURE`].
pub fn convergence() -> ScenarioConfig {
    let mut cfg = pair(Variant::Bbq, 10, 50, 100);
    cfg.flows[0].duration = DEPARTURE;
    cfg
}

/// Two 5 ms flows that take turns inflating their RTT to twice the
/// other's. Turns are long enough for the cheater's 10 s MinRTT window to
/// roll over and for its rate to ramp at the larger RTTs.
pub fn cheat_game() -> ScenarioConfig {
    let turns = 5;
    let policy = CheatPolicy {
        players: [0, 1],
        first_turn_at: SimTime::from_secs(30),
        turn_len: SimTime::from_secs(60),
        turns,
    };
    let mut cfg = pair(Variant::Bbr, 5, 5, 100);
    let end = policy.turn_start(turns);
    for f in &mut cfg.flows {
        f.duration = end;
    }
    cfg.cheat = Some(policy);
    cfg
}

pub fn red(params: RedParams) -> ScenarioConfig {
    let mut cfg = pair(Variant::Bbr, 10, 50, 100);
    cfg.aqm = Aqm::Red(params);
    cfg
}

fn both(mk: impl Fn(Variant) -> Vec<SuiteRun>) -> Vec<SuiteRun> {
    let mut out = mk(Variant::Bbr);
    out.extend(mk(Variant::Bbq));
    out
}

/// The scenarios of a named suite, or `None` for an unknown name.
pub fn suite(name: &str) -> Option<Vec<SuiteRun>> {
    let runs = match name {
        "fig1" => vec![run("bbr_10_vs_50", pair(Variant::Bbr, 10, 50, 100))],
        "fig3" => BANDWIDTHS_MBPS
            .iter()
            .map(|&bw| run(format!("bbr_{bw}mbps"), pair(Variant::Bbr, 10, 50, bw)))
            .collect(),
        "fig4a" => COMPETITOR_RTTS_MS
            .iter()
            .map(|&rtt| run(format!("bbr_10_vs_{rtt}"), pair(Variant::Bbr, 10, rtt, 100)))
            .collect(),
        "fig4b" => SHORT_FLOW_COUNTS
            .iter()
            .map(|&n| run(format!("bbr_50_vs_{n}x10"), many_short(Variant::Bbr, n)))
            .collect(),
        "fig5_8" => {
            let mut cfg = pair(Variant::Bbr, 10, 50, 100);
            for f in &mut cfg.flows {
                f.duration = SimTime::from_secs(40);
            }
            cfg.metrics_interval = SimTime::from_millis(10);
            vec![run("bbr_10_vs_50_trace", cfg)]
        }
        "fig9" => vec![
            run("bbq_10_vs_50", convergence()),
            run("bbr_10_vs_50", pair(Variant::Bbr, 10, 50, 100)),
        ],
        "fig10" => both(|cc| {
            BANDWIDTHS_MBPS
                .iter()
                .map(|&bw| run(format!("{cc}_{bw}mbps"), pair(cc, 10, 50, bw)))
                .collect()
        }),
        "fig11" => both(|cc| {
            COMPETITOR_RTTS_MS
                .iter()
                .map(|&rtt| run(format!("{cc}_10_vs_{rtt}"), pair(cc, 10, rtt, 100)))
                .collect()
        }),
        "fig12" => both(|cc| {
            SHORT_FLOW_COUNTS
                .iter()
                .map(|&n| run(format!("{cc}_50_vs_{n}x10"), many_short(cc, n)))
                .collect()
        }),
        "table1" => RED_ROWS.iter().map(|&(l, p)| run(l, red(p))).collect(),
        "strategic" => vec![run("cheat_game", cheat_game())],
        "strict_drain" => vec![
            run("strict_10_vs_50", pair(Variant::BbrStrictDrain, 10, 50, 100)),
            run("bbr_10_vs_50", pair(Variant::Bbr, 10, 50, 100)),
        ],
        _ => return None,
    };
    Some(runs)
}

/// Runs every scenario independently, in parallel; output keeps input order.
pub fn run_all(runs: &[SuiteRun]) -> Result<Vec<(String, RunOutput)>, ConfigError> {
    runs.par_iter()
        .map(|r| run_scenario(&r.config).map(|o| (r.label.clone(), o)))
        .collect()
}

/// BBQ parameters used throughout the suites.
pub fn default_bbq() -> BbqParams {
    BbqParams::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_suite_exists_and_validates() {
        for name in SUITE_NAMES {
            let runs = suite(name).unwrap_or_else(|| panic!("{name}"));
            assert!(!runs.is_empty());
            for r in runs {
                r.config.validate().unwrap();
            }
        }
        assert!(suite("bogus").is_none());
    }

    #[test]
    fn table1_rows() {
        let runs = suite("table1").unwrap();
        let probs: Vec<f64> = runs
            .iter()
            .map(|r| match r.config.aqm {
                Aqm::Red(p) => p.max_prob,
                Aqm::DropTail => panic!("table1 must use RED"),
            })
            .collect();
        assert_eq!(probs, vec![0.02, 0.10, 0.02]);
    }

    #[test]
    fn flow_count_layout() {
        let cfg = many_short(Variant::Bbr, 20);
        assert_eq!(cfg.flows.len(), 21);
        assert_eq!(cfg.flows[0].rtt, SimTime::from_millis(50));
        assert!(cfg.flows[1..].iter().all(|f| f.rtt == SimTime::from_millis(10)));
    }
}
