//! Grid sweeps over theta or lambda_1, and their CSV tables.

use std::collections::HashMap;
use std::io::Write;

use aoi_core::analytic::{self, AnalyticError};
use aoi_core::exec::{map_indexed, Execution};
use aoi_core::sim::{self, Policy, SimConfig, SimError, SimReport};
use aoi_core::SystemConfig;
use thiserror::Error;

use crate::spec::{Axis, ExperimentSpec, PolicyKind};

pub const CSV_HEADER: [&str; 12] = [
    "axis_value",
    "policy",
    "source",
    "mean_aoi",
    "mean_paoi",
    "aoi_m2",
    "paoi_m2",
    "ci_halfwidth",
    "sum_mean_aoi",
    "diff_ratio_pct",
    "mode",
    "remark",
];

pub const NO_CLOSED_FORM: &str = "no closed form; use simulate mode";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("analytic evaluation failed at {axis} = {value}: {source}")]
    Analytic {
        axis: &'static str,
        value: f64,
        source: AnalyticError,
    },
    #[error("simulation failed at {axis} = {value}: {source}")]
    Simulation {
        axis: &'static str,
        value: f64,
        source: SimError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowMode {
    Analytic,
    Simulate,
}

impl RowMode {
    pub fn name(&self) -> &'static str {
        match self {
            RowMode::Analytic => "analytic",
            RowMode::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceValues {
    pub mean_aoi: f64,
    pub mean_paoi: f64,
    pub aoi_m2: f64,
    pub paoi_m2: f64,
    pub ci_halfwidth: Option<f64>,
}

/// Results for one (grid point, policy, mode).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub policy: PolicyKind,
    pub mode: RowMode,
    /// Per-source values; `None` when the combination has no result.
    pub sources: Option<Vec<SourceValues>>,
    pub sum_mean_aoi: Option<f64>,
    /// Batch-means half-width of the summed AoI (simulation only).
    pub sum_ci_halfwidth: Option<f64>,
    pub diff_ratio_pct: Option<f64>,
    pub remark: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: Axis,
    pub source_count: usize,
    pub rows: Vec<SweepRow>,
}

/// A failed sweep together with the rows completed before the failing point.
#[derive(Debug)]
pub struct SweepFailure {
    pub partial: SweepTable,
    pub error: SweepError,
}

/// System configuration at a grid value, or `None` for excluded λ₁ points.
pub fn config_at(spec: &ExperimentSpec, value: f64) -> Option<SystemConfig> {
    match spec.sweep.axis {
        Axis::None => Some(spec.system.clone()),
        Axis::Theta => spec.system.with_theta(value).ok(),
        Axis::Lambda1 => {
            let lambda = spec.system.total_rate();
            let l2 = lambda - value;
            if value <= 0.0 || l2 <= 0.0 {
                return None;
            }
            spec.system.with_rates(vec![value, l2]).ok()
        }
    }
}

fn sim_policy(kind: PolicyKind, cfg: &SystemConfig) -> Policy {
    match kind {
        PolicyKind::Probabilistic => Policy::Probabilistic { theta: cfg.theta() },
        PolicyKind::NonPreemptive => Policy::NonPreemptive,
        PolicyKind::SelfPreemptive => Policy::SelfPreemptive,
        PolicyKind::GloballyPreemptive => Policy::GloballyPreemptive,
    }
}

fn analytic_config(kind: PolicyKind, cfg: &SystemConfig) -> Option<SystemConfig> {
    match kind {
        PolicyKind::Probabilistic => Some(cfg.clone()),
        PolicyKind::NonPreemptive => cfg.with_theta(0.0).ok(),
        PolicyKind::SelfPreemptive => cfg.with_theta(1.0).ok(),
        PolicyKind::GloballyPreemptive => None,
    }
}

fn analytic_values(cfg: &SystemConfig) -> Result<Vec<SourceValues>, AnalyticError> {
    Ok(analytic::all_moments(cfg, 2)?
        .into_iter()
        .map(|m| SourceValues {
            mean_aoi: m.aoi_moments[0],
            mean_paoi: m.paoi_moments[0],
            aoi_m2: m.aoi_moments[1],
            paoi_m2: m.paoi_moments[1],
            ci_halfwidth: None,
        })
        .collect())
}

fn simulated_values(r: &SimReport) -> Vec<SourceValues> {
    r.sources
        .iter()
        .map(|s| SourceValues {
            mean_aoi: s.mean_aoi,
            mean_paoi: s.mean_paoi,
            aoi_m2: s.aoi_m2,
            paoi_m2: s.paoi.moment(2),
            ci_halfwidth: Some(s.mean_aoi_ci),
        })
        .collect()
}

/// Key identifying a simulation run; the θ of non-probabilistic policies is irrelevant.
fn sim_key(cfg: &SystemConfig, policy: Policy) -> (Vec<u64>, &'static str, u64) {
    let rates = cfg.arrival_rates().iter().map(|r| r.to_bits()).collect();
    let theta = match policy {
        Policy::Probabilistic { theta } => theta.to_bits(),
        _ => 0,
    };
    (rates, policy.name(), theta)
}

/// Evaluates every (grid point, policy, mode) of the spec.
///
/// Rows come out in grid order, then policy order, analytic before simulated.
/// Simulations are deduplicated (baselines do not depend on θ) and run
/// through [`map_indexed`].
pub fn run_sweep(spec: &ExperimentSpec, exec: Execution) -> Result<SweepTable, SweepFailure> {
    run_sweep_logged(spec, exec).map(|(t, _)| t)
}

/// Simulation runs of a sweep, keyed by grid value and policy.
pub type SimRuns = Vec<(f64, PolicyKind, SimReport)>;

/// [`run_sweep`] that also returns the simulation reports.
pub fn run_sweep_logged(
    spec: &ExperimentSpec,
    exec: Execution,
) -> Result<(SweepTable, SimRuns), SweepFailure> {
    let axis = spec.sweep.axis;
    let points: Vec<(f64, SystemConfig)> = spec
        .sweep
        .grid()
        .into_iter()
        .filter_map(|v| config_at(spec, v).map(|cfg| (v, cfg)))
        .collect();

    // unique simulation jobs
    let mut jobs: Vec<(SystemConfig, Policy)> = Vec::new();
    let mut job_index = HashMap::new();
    if spec.mode.simulate() {
        for (_, cfg) in &points {
            for &kind in &spec.policies {
                let policy = sim_policy(kind, cfg);
                job_index.entry(sim_key(cfg, policy)).or_insert_with(|| {
                    jobs.push((cfg.clone(), policy));
                    jobs.len() - 1
                });
            }
        }
    }
    let sim_cfg = SimConfig {
        record_deliveries: spec.samples_output.is_some(),
        ..spec.sim.clone()
    };
    let results: Vec<Result<SimReport, SimError>> = map_indexed(jobs.len(), exec, |j| {
        let (cfg, policy) = &jobs[j];
        sim::run_with(cfg, *policy, &sim_cfg, exec)
    });

    let mut table = SweepTable {
        axis,
        source_count: spec.system.sources(),
        rows: Vec::new(),
    };
    let mut runs = Vec::new();
    for (value, cfg) in &points {
        let first = table.rows.len();
        let mut modes = Vec::new();
        if spec.mode.analytic() {
            modes.push(RowMode::Analytic);
        }
        if spec.mode.simulate() {
            modes.push(RowMode::Simulate);
        }
        for &kind in &spec.policies {
            for &mode in &modes {
                let (sources, sum_ci, remark) = match mode {
                    RowMode::Analytic => match analytic_config(kind, cfg) {
                        None => (None, None, NO_CLOSED_FORM.to_string()),
                        Some(acfg) => match analytic_values(&acfg) {
                            Ok(v) => (Some(v), None, String::new()),
                            Err(source) => {
                                return Err(SweepFailure {
                                    partial: truncate(table, first),
                                    error: SweepError::Analytic {
                                        axis: axis.name(),
                                        value: *value,
                                        source,
                                    },
                                })
                            }
                        },
                    },
                    RowMode::Simulate => {
                        let j = job_index[&sim_key(cfg, sim_policy(kind, cfg))];
                        match &results[j] {
                            Ok(r) => {
                                runs.push((*value, kind, r.clone()));
                                (Some(simulated_values(r)), Some(r.sum_mean_aoi_ci), String::new())
                            }
                            Err(source) => {
                                return Err(SweepFailure {
                                    partial: truncate(table, first),
                                    error: SweepError::Simulation {
                                        axis: axis.name(),
                                        value: *value,
                                        source: source.clone(),
                                    },
                                })
                            }
                        }
                    }
                };
                let sum_mean_aoi = sources
                    .as_ref()
                    .map(|v| v.iter().map(|s| s.mean_aoi).sum::<f64>());
                table.rows.push(SweepRow {
                    axis_value: *value,
                    policy: kind,
                    mode,
                    sources,
                    sum_mean_aoi,
                    sum_ci_halfwidth: sum_ci,
                    diff_ratio_pct: None,
                    remark,
                });
            }
        }
        fill_diff_ratios(&mut table.rows[first..]);
    }
    Ok((table, runs))
}

fn truncate(mut table: SweepTable, len: usize) -> SweepTable {
    table.rows.truncate(len);
    table
}

/// `(sum - sum_prob) / sum_prob * 100` against the probabilistic row of the same mode.
fn fill_diff_ratios(rows: &mut [SweepRow]) {
    for mode in [RowMode::Analytic, RowMode::Simulate] {
        let reference = rows
            .iter()
            .find(|r| r.mode == mode && r.policy == PolicyKind::Probabilistic)
            .and_then(|r| r.sum_mean_aoi);
        let Some(reference) = reference else { continue };
        for r in rows.iter_mut().filter(|r| r.mode == mode) {
            r.diff_ratio_pct = r
                .sum_mean_aoi
                .map(|s| (s - reference) / reference * 100.0);
        }
    }
}

/// `%.{digits}g`-style formatting.
pub fn format_number(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format_number(v, 12)).unwrap_or_default()
}

/// Writes the table as CSV with one line per (row, source).
pub fn write_csv<W: Write>(table: &SweepTable, out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in &table.rows {
        let axis_value = if table.axis == Axis::None {
            String::new()
        } else {
            format_number(row.axis_value, 12)
        };
        for c in 0..table.source_count {
            let v = row.sources.as_ref().map(|s| &s[c]);
            w.write_record([
                axis_value.clone(),
                row.policy.name().to_string(),
                (c + 1).to_string(),
                num(v.map(|v| v.mean_aoi)),
                num(v.map(|v| v.mean_paoi)),
                num(v.map(|v| v.aoi_m2)),
                num(v.map(|v| v.paoi_m2)),
                num(v.and_then(|v| v.ci_halfwidth)),
                num(row.sum_mean_aoi),
                num(row.diff_ratio_pct),
                row.mode.name().to_string(),
                row.remark.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes per-delivery logs of the simulation runs.
pub fn write_samples_csv<W: Write>(axis: Axis, runs: &SimRuns, out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis_value",
        "policy",
        "source",
        "generated",
        "delivered",
        "system_time",
        "interdeparture",
        "paoi",
    ])?;
    for (value, kind, report) in runs {
        let axis_value = if axis == Axis::None { String::new() } else { format_number(*value, 12) };
        for d in report.deliveries.iter().flatten() {
            w.write_record([
                axis_value.clone(),
                kind.name().to_string(),
                (d.source + 1).to_string(),
                format_number(d.generated, 12),
                format_number(d.delivered, 12),
                format_number(d.system_time, 12),
                num(d.interdeparture),
                num(d.paoi),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
