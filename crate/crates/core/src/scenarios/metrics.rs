//! Trace samples, steady-state summaries and CSV output.

use std::io::Write;

use crate::cc::{Mode, Variant};
use crate::engine::SimTime;
use crate::net::FlowId;

use super::config::{ScenarioConfig, Warmup};
use super::sim::FlowReport;

pub const RUN_CSV_HEADER: [&str; 11] = [
    "t_s",
    "flow_id",
    "goodput_mbps",
    "rtt_ms",
    "queueing_ms",
    "inflight_bytes",
    "cwnd_bytes",
    "queue_share",
    "mode",
    "gain",
    "cwnd_bounded",
];

/// Aggregate goodput must hold at this fraction of the link rate for the
/// remaining flows to count as having converged.
pub const CONVERGED_UTILIZATION: f64 = 0.95;
const CONVERGENCE_WINDOW: SimTime = SimTime::from_secs(1);

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSample {
    pub t: SimTime,
    pub flow_id: FlowId,
    /// Unique bytes acknowledged during the preceding interval, in bit/s.
    pub goodput_bps: f64,
    pub rtt: Option<SimTime>,
    /// Propagation RTT plus receiver ACK delay at sampling time.
    pub path_rtt: SimTime,
    pub inflight_bytes: u64,
    pub cwnd_bytes: u64,
    pub queue_backlog_bytes: u64,
    pub queue_occupancy_bytes: u64,
    pub queue_share: f64,
    pub mode: Mode,
    pub pacing_gain: f64,
    pub cwnd_bounded: bool,
}

impl MetricsSample {
    /// Measured RTT minus the configured path RTT, floored at zero.
    pub fn queueing(&self) -> Option<SimTime> {
        self.rtt.map(|r| r.saturating_sub(self.path_rtt))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSummary {
    pub flow_id: FlowId,
    pub cc: Variant,
    pub rtt: SimTime,
    pub mean_goodput_bps: f64,
    /// Fraction of the aggregate goodput of all flows in the window.
    pub share: f64,
    pub mean_queueing_ms: f64,
    pub retransmits: u64,
    pub drops: u64,
    pub drain_fraction: f64,
    pub cwnd_bounded_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryStats {
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub flows: Vec<FlowSummary>,
    /// Aggregate goodput over the window divided by the link rate.
    pub utilization: f64,
    pub jain: f64,
    pub mean_queueing_ms: f64,
    /// Time after the first flow departure until the rest reach
    /// [`CONVERGED_UTILIZATION`], if any flow departs early.
    pub convergence: Option<SimTime>,
}

impl SummaryStats {
    pub fn share(&self, flow: FlowId) -> f64 {
        self.flows[flow].share
    }
}

/// `(Σx)² / (n·Σx²)`; 1 for all-zero input.
pub fn jain_index(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "jain index of an empty set");
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        1.0
    } else {
        sum * sum / (xs.len() as f64 * sq)
    }
}

/// Per-sample queueing delay (measured minus configured RTT, floored at 0).
pub fn queueing_delay_series(trace: &[MetricsSample]) -> Vec<Option<SimTime>> {
    trace.iter().map(MetricsSample::queueing).collect()
}

/// Mean goodput of each flow over the samples with `start < t <= end`.
pub fn mean_goodput_in_window(
    trace: &[MetricsSample],
    n_flows: usize,
    start: SimTime,
    end: SimTime,
    interval: SimTime,
) -> Vec<f64> {
    let mut bytes = vec![0.0; n_flows];
    for s in trace.iter().filter(|s| s.t > start && s.t <= end) {
        bytes[s.flow_id] += s.goodput_bps * interval.as_secs_f64();
    }
    let span = end.saturating_sub(start).as_secs_f64();
    bytes
        .into_iter()
        .map(|b| if span > 0.0 { b / span } else { 0.0 })
        .collect()
}

/// Each flow's fraction of the aggregate goodput over `(start, end]`.
pub fn share_in_window(
    trace: &[MetricsSample],
    n_flows: usize,
    start: SimTime,
    end: SimTime,
    interval: SimTime,
) -> Vec<f64> {
    let g = mean_goodput_in_window(trace, n_flows, start, end, interval);
    let total: f64 = g.iter().sum();
    g.iter()
        .map(|x| if total > 0.0 { x / total } else { 0.0 })
        .collect()
}

fn measurement_window(cfg: &ScenarioConfig, reports: &[FlowReport]) -> (SimTime, SimTime) {
    let settled = reports
        .iter()
        .map(|r| r.first_steady_at.unwrap_or(cfg.flows[r.flow_id].start))
        .max()
        .unwrap_or(SimTime::ZERO);
    let start = match cfg.warmup {
        Warmup::ExcludeStartup => settled,
        Warmup::AtLeast(t) => settled.max(t),
    };
    let end = cfg.flows.iter().map(|f| f.end()).min().unwrap_or(SimTime::ZERO);
    // Never collapse to nothing: fall back to the latter half of the run.
    if start >= end {
        (SimTime::from_nanos(end.as_nanos() / 2), end)
    } else {
        (start, end)
    }
}

fn convergence_time(cfg: &ScenarioConfig, trace: &[MetricsSample]) -> Option<SimTime> {
    let end = cfg.end_time();
    let departure = cfg.flows.iter().map(|f| f.end()).filter(|&t| t < end).min()?;
    let remaining: Vec<bool> = cfg.flows.iter().map(|f| f.end() > departure).collect();
    let step = cfg.metrics_interval;
    let n = cfg.flows.len();
    let target = CONVERGED_UTILIZATION * cfg.link_rate_bps as f64;
    let mut delta = SimTime::ZERO;
    while departure + delta + CONVERGENCE_WINDOW <= end {
        let lo = departure + delta;
        let g = mean_goodput_in_window(trace, n, lo, lo + CONVERGENCE_WINDOW, step);
        let agg: f64 = g.iter().zip(&remaining).filter(|(_, &r)| r).map(|(x, _)| x).sum();
        if agg >= target {
            return Some(delta);
        }
        delta += step;
    }
    None
}

pub(crate) fn summarize(
    cfg: &ScenarioConfig,
    trace: &[MetricsSample],
    reports: &[FlowReport],
) -> SummaryStats {
    let n = cfg.flows.len();
    let (start, end) = measurement_window(cfg, reports);
    let goodput = mean_goodput_in_window(trace, n, start, end, cfg.metrics_interval);
    let total: f64 = goodput.iter().sum();

    let mut q_sum = vec![0.0; n];
    let mut q_n = vec![0u64; n];
    let mut bounded = vec![0u64; n];
    let mut samples = vec![0u64; n];
    for s in trace.iter().filter(|s| s.t > start && s.t <= end) {
        samples[s.flow_id] += 1;
        bounded[s.flow_id] += s.cwnd_bounded as u64;
        if let Some(q) = s.queueing() {
            q_sum[s.flow_id] += q.as_millis_f64();
            q_n[s.flow_id] += 1;
        }
    }
    let ratio = |a: f64, b: u64| if b > 0 { a / b as f64 } else { 0.0 };

    let flows = (0..n)
        .map(|i| FlowSummary {
            flow_id: i,
            cc: cfg.flows[i].cc,
            rtt: cfg.flows[i].rtt,
            mean_goodput_bps: goodput[i],
            share: if total > 0.0 { goodput[i] / total } else { 0.0 },
            mean_queueing_ms: ratio(q_sum[i], q_n[i]),
            retransmits: reports[i].stats.retransmitted_segments,
            drops: reports[i].drops,
            drain_fraction: reports[i].phases.drain_fraction(),
            cwnd_bounded_fraction: ratio(bounded[i] as f64, samples[i]),
        })
        .collect();

    SummaryStats {
        window_start: start,
        window_end: end,
        flows,
        utilization: total / cfg.link_rate_bps as f64,
        jain: jain_index(&goodput),
        mean_queueing_ms: ratio(q_sum.iter().sum(), q_n.iter().sum()),
        convergence: convergence_time(cfg, trace),
    }
}

fn ms(t: Option<SimTime>) -> String {
    t.map(|t| format!("{:.3}", t.as_millis_f64())).unwrap_or_default()
}

pub fn write_run_csv<W: Write>(out: W, trace: &[MetricsSample]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_CSV_HEADER)?;
    for s in trace {
        w.write_record([
            format!("{:.3}", s.t.as_secs_f64()),
            s.flow_id.to_string(),
            format!("{:.4}", s.goodput_bps / 1e6),
            ms(s.rtt),
            ms(s.queueing()),
            s.inflight_bytes.to_string(),
            s.cwnd_bytes.to_string(),
            format!("{:.4}", s.queue_share),
            s.mode.as_str().to_string(),
            format!("{:.4}", s.pacing_gain),
            s.cwnd_bounded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_CSV_HEADER: [&str; 15] = [
    "flow_id",
    "cc",
    "rtt_ms",
    "goodput_mbps",
    "share",
    "queueing_ms",
    "retransmits",
    "drops",
    "drain_fraction",
    "cwnd_bounded_fraction",
    "utilization",
    "jain",
    "window_start_s",
    "window_end_s",
    "convergence_s",
];

fn summary_rows(s: &SummaryStats) -> Vec<Vec<String>> {
    s.flows
        .iter()
        .map(|f| {
            vec![
                f.flow_id.to_string(),
                f.cc.to_string(),
                format!("{:.3}", f.rtt.as_millis_f64()),
                format!("{:.4}", f.mean_goodput_bps / 1e6),
                format!("{:.4}", f.share),
                format!("{:.3}", f.mean_queueing_ms),
                f.retransmits.to_string(),
                f.drops.to_string(),
                format!("{:.4}", f.drain_fraction),
                format!("{:.4}", f.cwnd_bounded_fraction),
                format!("{:.4}", s.utilization),
                format!("{:.4}", s.jain),
                format!("{:.3}", s.window_start.as_secs_f64()),
                format!("{:.3}", s.window_end.as_secs_f64()),
                s.convergence
                    .map(|c| format!("{:.3}", c.as_secs_f64()))
                    .unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(out: W, s: &SummaryStats) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_CSV_HEADER)?;
    for row in summary_rows(s) {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One table for a whole sweep: the axis columns followed by the per-flow
/// summary columns, one row per (point, flow).
pub fn write_sweep_csv<W: Write>(out: W, rows: &[(String, String, SummaryStats)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["axis", "value"];
    header.extend(SUMMARY_CSV_HEADER);
    w.write_record(header)?;
    for (axis, value, s) in rows {
        for row in summary_rows(s) {
            let mut rec = vec![axis.clone(), value.clone()];
            rec.extend(row);
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable digest of a summary.
pub fn render_summary(s: &SummaryStats) -> String {
    let mut out = format!(
        "window {:.1}-{:.1} s  utilization {:.1}%  jain {:.3}  queueing {:.2} ms",
        s.window_start.as_secs_f64(),
        s.window_end.as_secs_f64(),
        100.0 * s.utilization,
        s.jain,
        s.mean_queueing_ms
    );
    if let Some(c) = s.convergence {
        out.push_str(&format!("  convergence {:.2} s", c.as_secs_f64()));
    }
    out.push('\n');
    for f in &s.flows {
        out.push_str(&format!(
            "  flow {:>2} {:<16} rtt {:>6.1} ms  {:>7.2} Mbps  share {:.3}  retx {}\n",
            f.flow_id,
            f.cc.as_str(),
            f.rtt.as_millis_f64(),
            f.mean_goodput_bps / 1e6,
            f.share,
            f.retransmits
        ));
    }
    out
}
