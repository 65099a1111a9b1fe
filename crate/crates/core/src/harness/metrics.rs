//! Benchmark metrics with two-level averaging: scenes within a scenario
//! template first, then across templates.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EpisodeLog, HarnessError};
use crate::planner::EffortStats;
use crate::world::Outcome;

pub const CSV_COLUMNS: [&str; 14] = [
    "method",
    "SI90",
    "crashPct",
    "nearMissPct",
    "timeoutPct",
    "TTG",
    "executionMs",
    "trainingDays",
    "PT",
    "PTN",
    "PTD",
    "BNN",
    "OBF",
    "NNET",
];

/// One CSV row. `None` marks a metric with no contributing data, such as
/// TTG when no episode reached the goal or effort counters for a method
/// that never runs the planner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MethodMetrics {
    pub method: String,
    /// Templates whose failure rate is at most 10%.
    pub si90: usize,
    pub crash_pct: f64,
    /// Episodes with a near-miss and no crash, so that crash and near-miss
    /// percentages add up to the failure rate.
    pub near_miss_pct: f64,
    pub timeout_pct: f64,
    pub ttg_s: Option<f64>,
    pub execution_ms: Option<f64>,
    pub training_days: f64,
    pub pt: Option<f64>,
    pub ptn: Option<f64>,
    pub ptd: Option<f64>,
    pub bnn: Option<f64>,
    pub obf: Option<f64>,
    pub nnet: Option<f64>,
}

impl MethodMetrics {
    pub fn failure_pct(&self) -> f64 {
        self.crash_pct + self.near_miss_pct
    }
}

/// Mean over groups of the within-group means; empty groups are skipped.
pub fn two_level_mean(groups: &BTreeMap<u8, Vec<f64>>) -> Option<f64> {
    let means: Vec<f64> =
        groups.values().filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-template values of `f` over episodes, skipping episodes where it is `None`.
fn by_template(logs: &[EpisodeLog], f: impl Fn(&EpisodeLog) -> Option<f64>) -> BTreeMap<u8, Vec<f64>> {
    let mut g: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for log in logs {
        let e = g.entry(log.summary.template_id).or_default();
        if let Some(v) = f(log) {
            e.push(v);
        }
    }
    g
}

fn effort_mean(log: &EpisodeLog, f: impl Fn(&EffortStats) -> f64) -> Option<f64> {
    mean(log.steps.iter().filter_map(|s| s.effort.as_ref()).map(f))
}

fn pct(b: bool) -> Option<f64> {
    Some(if b { 100.0 } else { 0.0 })
}

pub fn compute_metrics(method: &str, logs: &[EpisodeLog], training_days: f64) -> MethodMetrics {
    let outcome = |o: Outcome| move |l: &EpisodeLog| pct(l.summary.outcome == o);
    let rate = |f: &dyn Fn(&EpisodeLog) -> Option<f64>| two_level_mean(&by_template(logs, f)).unwrap_or(0.0);
    let failing = by_template(logs, |l| pct(l.failed()));
    let si90 = failing.values().filter(|v| !v.is_empty() && v.iter().sum::<f64>() / v.len() as f64 <= 10.0).count();
    let effort = |f: fn(&EffortStats) -> f64| two_level_mean(&by_template(logs, |l| effort_mean(l, f)));
    MethodMetrics {
        method: method.to_string(),
        si90,
        crash_pct: rate(&outcome(Outcome::Crash)),
        near_miss_pct: rate(&|l| pct(l.summary.near_miss && l.summary.outcome != Outcome::Crash)),
        timeout_pct: rate(&outcome(Outcome::Timeout)),
        ttg_s: two_level_mean(&by_template(logs, |l| l.summary.ttg_s)),
        execution_ms: two_level_mean(&by_template(logs, |l| mean(l.steps.iter().map(|s| s.exec_ms)))),
        training_days,
        pt: effort(|e| e.planning_time_ms),
        ptn: effort(|e| e.trial_count as f64),
        ptd: effort(|e| e.mean_trial_depth),
        bnn: effort(|e| e.nodes_created as f64),
        obf: effort(|e| e.mean_obs_branching),
        nnet: effort(|e| e.network_eval_ms),
    }
}

fn field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_csv(rows: &[MethodMetrics], out: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| HarnessError::Io(e.into());
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.si90.to_string(),
            r.crash_pct.to_string(),
            r.near_miss_pct.to_string(),
            r.timeout_pct.to_string(),
            field(r.ttg_s),
            field(r.execution_ms),
            r.training_days.to_string(),
            field(r.pt),
            field(r.ptn),
            field(r.ptd),
            field(r.bnn),
            field(r.obf),
            field(r.nnet),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
