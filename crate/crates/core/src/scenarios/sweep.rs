//! One-dimensional parameter sweeps over a base scenario.
//!
//! Axis syntax is `KEY=V1,V2,...`. Keys:
//!
//! | key                      | applies to                         |
//! |--------------------------|------------------------------------|
//! | `rate_mbps`              | link rate                          |
//! | `buffer_bytes`           | buffer capacity                    |
//! | `seed`                   | scenario seed                      |
//! | `red.min_bytes` etc.     | RED parameters (switches AQM on)   |
//! | `flow.<k>`               | field `<k>` of every flow          |
//! | `flow[i].<k>`            | field `<k>` of flow `i`            |
//! | `flow[i].count`          | replicate flow `i` to `count` copies |
//!
//! Flow fields: `rtt_ms`, `cc`, `alpha_ms`, `beta`, `start_s`,
//! `duration_s`, `extra_ack_delay_ms`.

use rayon::prelude::*;

use crate::cc::Variant;
use crate::engine::SimTime;
use crate::error::ConfigError;
use crate::net::{Aqm, RedParams};

use super::config::{FlowConfig, ScenarioConfig};
use super::sim::{run_scenario, RunOutput};

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (key, vals) = text
            .split_once('=')
            .ok_or_else(|| ConfigError::UnknownAxis(text.to_string()))?;
        let values: Vec<String> = vals
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if values.is_empty() {
            return Err(ConfigError::EmptyAxis);
        }
        Ok(Axis { key: key.trim().to_string(), values })
    }
}

enum Target {
    Link(String),
    Red(String),
    Flow(Option<usize>, String),
}

fn parse_key(key: &str) -> Result<Target, ConfigError> {
    let unknown = || ConfigError::UnknownAxis(key.to_string());
    if matches!(key, "rate_mbps" | "buffer_bytes" | "seed") {
        return Ok(Target::Link(key.into()));
    }
    if let Some(field) = key.strip_prefix("red.") {
        return Ok(Target::Red(field.into()));
    }
    if let Some(field) = key.strip_prefix("flow.") {
        return Ok(Target::Flow(None, field.into()));
    }
    let rest = key.strip_prefix("flow[").ok_or_else(unknown)?;
    let (idx, field) = rest.split_once("].").ok_or_else(unknown)?;
    let idx = idx.parse().map_err(|_| unknown())?;
    Ok(Target::Flow(Some(idx), field.into()))
}

fn set_flow_field(f: &mut FlowConfig, field: &str, v: &str) -> Result<(), String> {
    let num = || v.parse::<f64>().map_err(|_| format!("not a number: {v}"));
    match field {
        "rtt_ms" => f.rtt = SimTime::from_millis_f64(num()?),
        "cc" => f.cc = v.parse::<Variant>()?,
        "alpha_ms" => f.bbq.alpha = SimTime::from_millis_f64(num()?),
        "beta" => f.bbq.beta = num()?,
        "start_s" => f.start = SimTime::from_secs_f64(num()?),
        "duration_s" => f.duration = SimTime::from_secs_f64(num()?),
        "extra_ack_delay_ms" => f.extra_ack_delay = SimTime::from_millis_f64(num()?),
        _ => return Err(format!("unknown flow field `{field}`")),
    }
    Ok(())
}

/// Returns `base` with axis `key` set to `value`.
pub fn apply_axis(base: &ScenarioConfig, key: &str, value: &str) -> Result<ScenarioConfig, ConfigError> {
    let bad = || ConfigError::AxisValue { axis: key.to_string(), value: value.to_string() };
    let mut cfg = base.clone();
    match parse_key(key)? {
        Target::Link(k) => match k.as_str() {
            "rate_mbps" => {
                let r: f64 = value.parse().map_err(|_| bad())?;
                cfg.link_rate_bps = (r * 1e6).round() as u64;
            }
            "buffer_bytes" => cfg.buffer_bytes = value.parse().map_err(|_| bad())?,
            _ => cfg.seed = value.parse().map_err(|_| bad())?,
        },
        Target::Red(field) => {
            let mut p = match cfg.aqm {
                Aqm::Red(p) => p,
                Aqm::DropTail => RedParams::new(170_000, 500_000, 0.02),
            };
            match field.as_str() {
                "min_bytes" => p.min_thresh_bytes = value.parse().map_err(|_| bad())?,
                "max_bytes" => p.max_thresh_bytes = value.parse().map_err(|_| bad())?,
                "prob" => p.max_prob = value.parse().map_err(|_| bad())?,
                "ewma_weight" => p.ewma_weight = value.parse().map_err(|_| bad())?,
                _ => return Err(ConfigError::UnknownAxis(key.to_string())),
            }
            cfg.aqm = Aqm::Red(p);
        }
        Target::Flow(idx, field) => {
            let n = cfg.flows.len();
            if let Some(i) = idx {
                if i >= n {
                    return Err(ConfigError::UnknownAxis(key.to_string()));
                }
            }
            if field == "count" {
                let i = idx.ok_or_else(|| ConfigError::UnknownAxis(key.to_string()))?;
                let count: usize = value.parse().map_err(|_| bad())?;
                let proto = cfg.flows[i].clone();
                cfg.flows.remove(i);
                for k in 0..count {
                    cfg.flows.insert(i + k, proto.clone());
                }
                if let Some(c) = &cfg.cheat {
                    if c.players.iter().any(|&p| p >= i) {
                        return Err(bad());
                    }
                }
            } else {
                let range = match idx {
                    Some(i) => i..i + 1,
                    None => 0..n,
                };
                for f in &mut cfg.flows[range] {
                    set_flow_field(f, &field, value).map_err(|_| {
                        if matches!(
                            field.as_str(),
                            "rtt_ms" | "cc" | "alpha_ms" | "beta" | "start_s" | "duration_s" | "extra_ack_delay_ms"
                        ) {
                            bad()
                        } else {
                            ConfigError::UnknownAxis(key.to_string())
                        }
                    })?;
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Expands every point first, so a bad value fails before anything runs.
pub fn expand(base: &ScenarioConfig, axis: &Axis) -> Result<Vec<ScenarioConfig>, ConfigError> {
    if axis.values.is_empty() {
        return Err(ConfigError::EmptyAxis);
    }
    axis.values.iter().map(|v| apply_axis(base, &axis.key, v)).collect()
}

/// Runs every point independently, in parallel. Results keep axis order.
pub fn sweep(base: &ScenarioConfig, axis: &Axis) -> Result<Vec<(String, RunOutput)>, ConfigError> {
    let points = expand(base, axis)?;
    points
        .par_iter()
        .zip(axis.values.par_iter())
        .map(|(cfg, v)| run_scenario(cfg).map(|out| (v.clone(), out)))
        .collect()
}
