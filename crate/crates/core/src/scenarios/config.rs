//! Scenario description and its on-disk TOML form.

use serde::Deserialize;

use crate::cc::{BbqParams, Variant};
use crate::engine::SimTime;
use crate::error::ConfigError;
use crate::net::{Aqm, RedParams, DEFAULT_BUFFER_BYTES, DEFAULT_RED_EWMA_WEIGHT};

pub const DEFAULT_METRICS_INTERVAL: SimTime = SimTime::from_millis(100);
pub const DEFAULT_DURATION: SimTime = SimTime::from_secs(120);

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub rtt: SimTime,
    pub start: SimTime,
    pub duration: SimTime,
    pub cc: Variant,
    pub bbq: BbqParams,
    pub extra_ack_delay: SimTime,
}

impl FlowConfig {
    pub fn new(rtt_ms: u64, cc: Variant) -> Self {
        FlowConfig {
            rtt: SimTime::from_millis(rtt_ms),
            start: SimTime::ZERO,
            duration: DEFAULT_DURATION,
            cc,
            bbq: BbqParams::default(),
            extra_ack_delay: SimTime::ZERO,
        }
    }

    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }
}

/// Alternating latency-cheating game between two flows.
///
/// At each turn boundary the cheating flow raises its receiver's ACK delay
/// so that its path RTT becomes twice the competitor's current path RTT.
#[derive(Clone, Debug, PartialEq)]
pub struct CheatPolicy {
    pub players: [usize; 2],
    pub first_turn_at: SimTime,
    pub turn_len: SimTime,
    pub turns: usize,
}

impl CheatPolicy {
    pub fn turn_start(&self, k: usize) -> SimTime {
        self.first_turn_at + SimTime::from_nanos(self.turn_len.as_nanos() * k as u64)
    }
}

/// Where the steady-state measurement window begins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Warmup {
    /// After every flow has left Startup and Drain for the first time.
    ExcludeStartup,
    /// The later of the above and a fixed offset from time zero.
    AtLeast(SimTime),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub link_rate_bps: u64,
    pub buffer_bytes: u64,
    pub aqm: Aqm,
    pub flows: Vec<FlowConfig>,
    pub seed: u64,
    pub metrics_interval: SimTime,
    pub warmup: Warmup,
    pub cheat: Option<CheatPolicy>,
}

impl ScenarioConfig {
    pub fn new(link_mbps: u64, flows: Vec<FlowConfig>) -> Self {
        ScenarioConfig {
            link_rate_bps: link_mbps * 1_000_000,
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            aqm: Aqm::DropTail,
            flows,
            seed: 1,
            metrics_interval: DEFAULT_METRICS_INTERVAL,
            warmup: Warmup::ExcludeStartup,
            cheat: None,
        }
    }

    pub fn end_time(&self) -> SimTime {
        self.flows.iter().map(FlowConfig::end).max().unwrap_or(SimTime::ZERO)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.flows.is_empty() {
            return Err(ConfigError::NoFlows);
        }
        if self.link_rate_bps == 0 {
            return Err(ConfigError::Link("rate must be positive".into()));
        }
        if self.buffer_bytes < crate::net::SEGMENT_BYTES {
            return Err(ConfigError::Link("buffer smaller than one segment".into()));
        }
        if self.metrics_interval == SimTime::ZERO {
            return Err(ConfigError::Link("metrics interval must be positive".into()));
        }
        if let Aqm::Red(p) = &self.aqm {
            p.validate(self.buffer_bytes).map_err(ConfigError::Aqm)?;
        }
        for (i, f) in self.flows.iter().enumerate() {
            let bad = |reason: &str| ConfigError::Flow { flow: i, reason: reason.into() };
            if f.duration == SimTime::ZERO {
                return Err(bad("duration must be positive"));
            }
            if f.rtt == SimTime::ZERO {
                return Err(bad("rtt must be positive"));
            }
            f.bbq.validate().map_err(|r| bad(&r))?;
        }
        if let Some(c) = &self.cheat {
            let n = self.flows.len();
            if c.players[0] >= n || c.players[1] >= n || c.players[0] == c.players[1] {
                return Err(ConfigError::Flow {
                    flow: c.players[0].max(c.players[1]),
                    reason: "cheat players must be two distinct flows".into(),
                });
            }
            if c.turn_len == SimTime::ZERO {
                return Err(ConfigError::Link("cheat turn length must be positive".into()));
            }
        }
        Ok(())
    }

    /// Parses the TOML scenario format.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: FileScenario = toml::from_str(text)?;
        let cfg = file.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileScenario {
    seed: Option<u64>,
    metrics_interval_ms: Option<f64>,
    warmup_s: Option<f64>,
    link: FileLink,
    aqm: Option<FileAqm>,
    #[serde(default)]
    flow: Vec<FileFlow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLink {
    rate_mbps: f64,
    buffer_bytes: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileAqm {
    aqm: String,
    red: Option<FileRed>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRed {
    min_bytes: u64,
    max_bytes: u64,
    prob: f64,
    ewma_weight: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFlow {
    rtt_ms: f64,
    #[serde(default = "default_cc")]
    cc: String,
    alpha_ms: Option<f64>,
    beta: Option<f64>,
    start_s: Option<f64>,
    duration_s: Option<f64>,
    extra_ack_delay_ms: Option<f64>,
}

fn default_cc() -> String {
    "bbr".into()
}

fn nonneg(v: f64, what: &str) -> Result<f64, String> {
    if v.is_nan() || v < 0.0 {
        Err(format!("{what} must be non-negative"))
    } else {
        Ok(v)
    }
}

impl FileScenario {
    fn into_config(self) -> Result<ScenarioConfig, ConfigError> {
        if !(self.link.rate_mbps > 0.0 && self.link.rate_mbps.is_finite()) {
            return Err(ConfigError::Link("rate_mbps must be positive".into()));
        }
        let aqm = match self.aqm {
            None => Aqm::DropTail,
            Some(a) => match a.aqm.as_str() {
                "droptail" => Aqm::DropTail,
                "red" => {
                    let r = a
                        .red
                        .ok_or_else(|| ConfigError::Aqm("aqm = \"red\" needs red.* keys".into()))?;
                    Aqm::Red(RedParams {
                        min_thresh_bytes: r.min_bytes,
                        max_thresh_bytes: r.max_bytes,
                        max_prob: r.prob,
                        ewma_weight: r.ewma_weight.unwrap_or(DEFAULT_RED_EWMA_WEIGHT),
                    })
                }
                other => {
                    return Err(ConfigError::Aqm(format!(
                        "unknown aqm `{other}` (expected droptail or red)"
                    )))
                }
            },
        };

        let mut flows = Vec::with_capacity(self.flow.len());
        for (i, f) in self.flow.into_iter().enumerate() {
            let bad = |reason: String| ConfigError::Flow { flow: i, reason };
            let cc: Variant = f.cc.parse().map_err(bad)?;
            let mut bbq = BbqParams::default();
            if let Some(a) = f.alpha_ms {
                if a.is_nan() || a <= 0.0 {
                    return Err(bad("alpha_ms must be positive".into()));
                }
                bbq.alpha = SimTime::from_millis_f64(a);
            }
            if let Some(b) = f.beta {
                bbq.beta = b;
            }
            let rtt_ms = nonneg(f.rtt_ms, "rtt_ms").map_err(bad)?;
            let start = nonneg(f.start_s.unwrap_or(0.0), "start_s").map_err(bad)?;
            let duration = nonneg(
                f.duration_s.unwrap_or(DEFAULT_DURATION.as_secs_f64()),
                "duration_s",
            )
            .map_err(bad)?;
            let delay = nonneg(f.extra_ack_delay_ms.unwrap_or(0.0), "extra_ack_delay_ms")
                .map_err(bad)?;
            flows.push(FlowConfig {
                rtt: SimTime::from_millis_f64(rtt_ms),
                start: SimTime::from_secs_f64(start),
                duration: SimTime::from_secs_f64(duration),
                cc,
                bbq,
                extra_ack_delay: SimTime::from_millis_f64(delay),
            });
        }

        let metrics_interval = match self.metrics_interval_ms {
            Some(ms) if ms > 0.0 => SimTime::from_millis_f64(ms),
            Some(_) => return Err(ConfigError::Link("metrics_interval_ms must be positive".into())),
            None => DEFAULT_METRICS_INTERVAL,
        };
        let warmup = match self.warmup_s {
            Some(s) if s >= 0.0 => Warmup::AtLeast(SimTime::from_secs_f64(s)),
            Some(_) => return Err(ConfigError::Link("warmup_s must be non-negative".into())),
            None => Warmup::ExcludeStartup,
        };

        Ok(ScenarioConfig {
            link_rate_bps: (self.link.rate_mbps * 1e6).round() as u64,
            buffer_bytes: self.link.buffer_bytes.unwrap_or(DEFAULT_BUFFER_BYTES),
            aqm,
            flows,
            seed: self.seed.unwrap_or(1),
            metrics_interval,
            warmup,
            cheat: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_FLOW: &str = r#"
seed = 7

[link]
rate_mbps = 100
buffer_bytes = 2000000

[aqm]
aqm = "red"
red.min_bytes = 170000
red.max_bytes = 500000
red.prob = 0.02

[[flow]]
rtt_ms = 10
cc = "bbq"
alpha_ms = 3
beta = 0.01
start_s = 0
duration_s = 120

[[flow]]
rtt_ms = 50
cc = "bbr"
extra_ack_delay_ms = 5
"#;

    #[test]
    fn parses_full_file() {
        let cfg = ScenarioConfig::from_toml(TWO_FLOW).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.link_rate_bps, 100_000_000);
        assert_eq!(cfg.aqm, Aqm::Red(RedParams::new(170_000, 500_000, 0.02)));
        assert_eq!(cfg.flows.len(), 2);
        assert_eq!(cfg.flows[0].cc, Variant::Bbq);
        assert_eq!(cfg.flows[0].bbq.alpha, SimTime::from_millis(3));
        assert_eq!(cfg.flows[1].rtt, SimTime::from_millis(50));
        assert_eq!(cfg.flows[1].extra_ack_delay, SimTime::from_millis(5));
        assert_eq!(cfg.flows[1].duration, DEFAULT_DURATION);
    }

    #[test]
    fn infinite_alpha() {
        let text = "[link]\nrate_mbps = 10\n[[flow]]\nrtt_ms = 10\ncc = \"bbq\"\nalpha_ms = inf\n";
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.flows[0].bbq.alpha, SimTime::MAX);
    }

    #[test]
    fn rejects_bad_configs() {
        let no_flows = "[link]\nrate_mbps = 100\n";
        assert!(matches!(ScenarioConfig::from_toml(no_flows), Err(ConfigError::NoFlows)));

        let bad_cc = "[link]\nrate_mbps = 100\n[[flow]]\nrtt_ms = 10\ncc = \"cubic\"\n";
        assert!(matches!(
            ScenarioConfig::from_toml(bad_cc),
            Err(ConfigError::Flow { flow: 0, .. })
        ));

        let zero_dur = "[link]\nrate_mbps = 100\n[[flow]]\nrtt_ms = 10\nduration_s = 0\n";
        assert!(ScenarioConfig::from_toml(zero_dur).is_err());

        let bad_red = "[link]\nrate_mbps = 100\n[aqm]\naqm = \"red\"\nred.min_bytes = 5\nred.max_bytes = 4\nred.prob = 0.1\n[[flow]]\nrtt_ms = 10\n";
        assert!(matches!(ScenarioConfig::from_toml(bad_red), Err(ConfigError::Aqm(_))));

        let typo = "[link]\nrate_mbps = 100\n[[flow]]\nrtt = 10\n";
        assert!(matches!(ScenarioConfig::from_toml(typo), Err(ConfigError::Parse(_))));
    }
}
