//! Discrete-event simulation of the multi-source M/G/1/1 status-update system.
//!
//! Each source has an independent Poisson arrival stream; the server holds at
//! most one packet. An arrival at a busy server either preempts the packet in
//! service or is discarded, depending on the [`Policy`]. Statistics are taken
//! over a window that excludes the warm-up, with AoI areas integrated exactly
//! over each delivery-to-delivery segment of the sawtooth.

mod checks;
mod engine;
pub mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::SystemConfig;
use crate::exec::{map_indexed, Execution};
use crate::service::ServiceError;
use engine::{run_replication, Replication};
use stats::{mean_half_width, PowerSums};

pub use checks::{
    empirical_checks, empirical_mgf, CheckSummary, ChiSquareCheck, ProportionCheck, SourceChecks,
    CHI_SQUARE_BINS, CHI_SQUARE_MIN_P, MIN_FIT_SAMPLES, PROPORTION_SIGMAS,
};

/// Default capacity of each per-source sample buffer.
pub const DEFAULT_SAMPLE_CAPACITY: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient samples for {what}: have {have}, need {need}")]
    InsufficientSamples {
        what: String,
        have: usize,
        need: usize,
    },
    #[error("empirical MGF requires s <= 0, got {0}")]
    PositiveExponentRejected(f64),
    #[error("{0}")]
    NotApplicable(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Packet-management policy at a busy server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    /// Same-source arrivals preempt with probability `theta`; others are discarded.
    Probabilistic { theta: f64 },
    /// Arrivals to a busy server are always discarded.
    NonPreemptive,
    /// Same-source arrivals always preempt; others are discarded.
    SelfPreemptive,
    /// Every arrival preempts the packet in service.
    GloballyPreemptive,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Probabilistic { .. } => "probabilistic",
            Policy::NonPreemptive => "non_preemptive",
            Policy::SelfPreemptive => "self_preemptive",
            Policy::GloballyPreemptive => "globally_preemptive",
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let Policy::Probabilistic { theta } = *self {
            if !(0.0..=1.0).contains(&theta) {
                return Err(SimError::InvalidConfig(format!(
                    "preemption probability must lie in [0, 1], got {theta}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Simulated time per replication.
    Horizon(f64),
    /// Post-warm-up deliveries required from every source.
    Deliveries(u64),
}

/// Run-length, seeding and output-analysis settings.
///
/// With a horizon, the warm-up is the first `warmup` fraction of simulated
/// time. With a delivery target `n`, statistics start once every source has
/// delivered `ceil(warmup * n)` packets and stop once every source has `n`
/// deliveries after that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub stop: StopRule,
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
    pub batches: usize,
    pub sample_capacity: usize,
    pub record_deliveries: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            stop: StopRule::Horizon(1e5),
            warmup: 0.1,
            seed: 1,
            replications: 1,
            batches: 10,
            sample_capacity: DEFAULT_SAMPLE_CAPACITY,
            record_deliveries: false,
        }
    }
}

impl SimConfig {
    pub fn horizon(horizon: f64, seed: u64) -> Self {
        Self {
            stop: StopRule::Horizon(horizon),
            seed,
            ..Self::default()
        }
    }

    pub fn deliveries(count: u64, seed: u64) -> Self {
        Self {
            stop: StopRule::Deliveries(count),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        match self.stop {
            StopRule::Horizon(h) if !(h.is_finite() && h > 0.0) => {
                return bad(format!("horizon must be positive, got {h}"))
            }
            StopRule::Deliveries(0) => return bad("delivery target must be positive".into()),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad(format!("warm-up fraction must lie in [0, 1), got {}", self.warmup));
        }
        if self.replications == 0 {
            return bad("at least one replication is required".into());
        }
        if self.batches < 10 {
            return bad(format!("at least 10 batches are required, got {}", self.batches));
        }
        Ok(())
    }
}

/// Whole-run packet accounting for one source.
///
/// `arrivals = delivered + preempted + discarded + in_flight`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Counters {
    pub arrivals: u64,
    pub delivered: u64,
    pub preempted: u64,
    pub discarded: u64,
    pub in_flight: u64,
}

impl Counters {
    fn merge(&mut self, o: &Counters) {
        self.arrivals += o.arrivals;
        self.delivered += o.delivered;
        self.preempted += o.preempted;
        self.discarded += o.discarded;
        self.in_flight += o.in_flight;
    }

    pub fn is_conserved(&self) -> bool {
        self.arrivals == self.delivered + self.preempted + self.discarded + self.in_flight
    }
}

/// In-window event counts matching the delivery-cycle transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Transitions {
    /// Arrivals of this source that found the server idle.
    pub race_wins: u64,
    /// Packets of this source that entered service.
    pub entered_service: u64,
    /// Services begun in the window that ended in delivery.
    pub resolved_delivered: u64,
    /// Services begun in the window that ended in preemption.
    pub resolved_preempted: u64,
}

impl Transitions {
    fn merge(&mut self, o: &Transitions) {
        self.race_wins += o.race_wins;
        self.entered_service += o.entered_service;
        self.resolved_delivered += o.resolved_delivered;
        self.resolved_preempted += o.resolved_preempted;
    }
}

/// One delivered packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub source: usize,
    pub generated: f64,
    pub delivered: f64,
    pub system_time: f64,
    pub interdeparture: Option<f64>,
    pub paoi: Option<f64>,
}

/// Empirical statistics for one source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub source: usize,
    /// Time-average AoI, total sawtooth area over covered time.
    pub mean_aoi: f64,
    pub mean_aoi_ci: f64,
    /// Time-average of the squared AoI.
    pub aoi_m2: f64,
    pub mean_paoi: f64,
    pub mean_paoi_ci: f64,
    pub paoi: PowerSums,
    pub system_time: PowerSums,
    pub interdeparture: PowerSums,
    pub mean_interdeparture_ci: f64,
    /// Delivered system times (capped per replication).
    pub system_time_samples: Vec<f64>,
    /// Interdeparture times (capped per replication).
    pub interdeparture_samples: Vec<f64>,
    /// Time from service start to preemption (capped per replication).
    pub preempt_gap_samples: Vec<f64>,
    pub counters: Counters,
    pub transitions: Transitions,
}

/// Aggregated results over all replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub sources: Vec<SourceReport>,
    pub sum_mean_aoi: f64,
    pub sum_mean_aoi_ci: f64,
    /// Number of batch estimates behind each confidence interval.
    pub batch_count: usize,
    pub replications: usize,
    pub observed_time: f64,
    /// Per-delivery log, present when requested in [`SimConfig`].
    pub deliveries: Option<Vec<DeliveryRecord>>,
}

impl SimReport {
    /// Fraction of window arrivals at an idle server that came from source `c`.
    pub fn race_frequency(&self, c: usize) -> (u64, u64) {
        let total = self.sources.iter().map(|s| s.transitions.race_wins).sum();
        (self.sources[c].transitions.race_wins, total)
    }

    /// AoI samples `delta_c(t)` at `t = start + k * step`, read off the delivery log.
    pub fn aoi_samples(&self, c: usize, start: f64, step: f64, count: usize) -> Option<Vec<f64>> {
        let log = self.deliveries.as_ref()?;
        let mut out = Vec::with_capacity(count);
        let mut iter = log.iter().filter(|d| d.source == c).peekable();
        let mut latest: Option<f64> = None;
        for k in 0..count {
            let t = start + k as f64 * step;
            while let Some(d) = iter.peek() {
                if d.delivered <= t {
                    latest = Some(d.generated);
                    iter.next();
                } else {
                    break;
                }
            }
            if let Some(g) = latest {
                out.push(t - g);
            }
        }
        Some(out)
    }
}

/// Runs all replications with the default [`Execution`].
pub fn run(cfg: &SystemConfig, policy: Policy, sim: &SimConfig) -> Result<SimReport, SimError> {
    run_with(cfg, policy, sim, Execution::default())
}

pub fn run_with(
    cfg: &SystemConfig,
    policy: Policy,
    sim: &SimConfig,
    exec: Execution,
) -> Result<SimReport, SimError> {
    policy.validate()?;
    sim.validate()?;
    let reps = map_indexed(sim.replications, exec, |r| {
        run_replication(cfg, policy, sim, r as u64)
    });
    Ok(summarize(cfg.sources(), sim, &reps))
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchCell {
    area: f64,
    time: f64,
    paoi_sum: f64,
    paoi_count: u64,
    y_sum: f64,
}

fn summarize(n: usize, sim: &SimConfig, reps: &[Replication]) -> SimReport {
    let b = sim.batches;
    let mut cells: Vec<Vec<BatchCell>> = vec![Vec::new(); n]; // [source][rep * b + batch]
    let mut area = vec![0.0; n];
    let mut area_sq = vec![0.0; n];
    let mut covered = vec![0.0; n];
    let mut paoi = vec![PowerSums::default(); n];
    let mut sys = vec![PowerSums::default(); n];
    let mut inter = vec![PowerSums::default(); n];
    let mut counters = vec![Counters::default(); n];
    let mut transitions = vec![Transitions::default(); n];
    let mut sys_samples = vec![Vec::new(); n];
    let mut inter_samples = vec![Vec::new(); n];
    let mut gap_samples = vec![Vec::new(); n];
    let mut deliveries = sim.record_deliveries.then(Vec::new);
    let mut observed = 0.0;

    for rep in reps {
        let span = rep.window_end - rep.window_start;
        observed += span;
        for (c, tr) in rep.sources.iter().enumerate() {
            let mut batch = vec![BatchCell::default(); b];
            for seg in &tr.segments {
                let idx = if span > 0.0 {
                    (((seg.end - rep.window_start) / span * b as f64) as usize).min(b - 1)
                } else {
                    0
                };
                let cell = &mut batch[idx];
                cell.area += seg.area();
                cell.time += seg.length;
                cell.paoi_sum += seg.paoi();
                cell.paoi_count += 1;
                cell.y_sum += seg.length;
                area[c] += seg.area();
                area_sq[c] += seg.area_sq();
                covered[c] += seg.length;
                paoi[c].push(seg.paoi());
                inter[c].push(seg.length);
            }
            for &t in &tr.system_times {
                sys[c].push(t);
            }
            inter_samples[c].extend(tr.segments.iter().take(sim.sample_capacity).map(|s| s.length));
            cells[c].extend(batch);
            counters[c].merge(&tr.counters);
            transitions[c].merge(&tr.transitions);
            sys_samples[c].extend_from_slice(&tr.system_times);
            gap_samples[c].extend_from_slice(&tr.preempt_gaps);
        }
        if let Some(d) = deliveries.as_mut() {
            d.extend_from_slice(&rep.deliveries);
        }
    }

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let batch_aoi: Vec<Vec<Option<f64>>> = cells
        .iter()
        .map(|cs| {
            cs.iter()
                .map(|cell| (cell.time > 0.0).then(|| cell.area / cell.time))
                .collect()
        })
        .collect();

    let sources: Vec<SourceReport> = (0..n)
        .map(|c| {
            let aoi_batches: Vec<f64> = batch_aoi[c].iter().flatten().copied().collect();
            let paoi_batches: Vec<f64> = cells[c]
                .iter()
                .filter(|cell| cell.paoi_count > 0)
                .map(|cell| cell.paoi_sum / cell.paoi_count as f64)
                .collect();
            let y_batches: Vec<f64> = cells[c]
                .iter()
                .filter(|cell| cell.paoi_count > 0)
                .map(|cell| cell.y_sum / cell.paoi_count as f64)
                .collect();
            SourceReport {
                source: c,
                mean_aoi: ratio(area[c], covered[c]),
                mean_aoi_ci: mean_half_width(&aoi_batches),
                aoi_m2: ratio(area_sq[c], covered[c]),
                mean_paoi: paoi[c].mean(),
                mean_paoi_ci: mean_half_width(&paoi_batches),
                paoi: paoi[c].clone(),
                system_time: sys[c].clone(),
                interdeparture: inter[c].clone(),
                mean_interdeparture_ci: mean_half_width(&y_batches),
                system_time_samples: std::mem::take(&mut sys_samples[c]),
                interdeparture_samples: std::mem::take(&mut inter_samples[c]),
                preempt_gap_samples: std::mem::take(&mut gap_samples[c]),
                counters: counters[c],
                transitions: transitions[c],
            }
        })
        .collect();

    // batches where every source has coverage
    let total_cells = cells.first().map_or(0, Vec::len);
    let sum_batches: Vec<f64> = (0..total_cells)
        .filter_map(|i| {
            (0..n)
                .map(|c| batch_aoi[c][i])
                .sum::<Option<f64>>()
        })
        .collect();

    SimReport {
        sum_mean_aoi: sources.iter().map(|s| s.mean_aoi).sum(),
        sum_mean_aoi_ci: mean_half_width(&sum_batches),
        sources,
        batch_count: total_cells,
        replications: reps.len(),
        observed_time: observed,
        deliveries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::ServiceDistribution;

    fn two_source() -> SystemConfig {
        SystemConfig::new(
            vec![1.0, 2.0],
            0.5,
            ServiceDistribution::exponential(1.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut s = SimConfig::horizon(100.0, 1);
        assert!(s.validate().is_ok());
        s.batches = 5;
        assert!(s.validate().is_err());
        let s = SimConfig { warmup: 1.0, ..SimConfig::default() };
        assert!(s.validate().is_err());
        assert!(SimConfig::horizon(-1.0, 1).validate().is_err());
        assert!(SimConfig::deliveries(0, 1).validate().is_err());
        assert!(Policy::Probabilistic { theta: 1.5 }.validate().is_err());
    }

    #[test]
    fn counters_are_conserved() {
        for policy in [
            Policy::Probabilistic { theta: 0.3 },
            Policy::NonPreemptive,
            Policy::SelfPreemptive,
            Policy::GloballyPreemptive,
        ] {
            let r = run(&two_source(), policy, &SimConfig::horizon(2_000.0, 3)).unwrap();
            for s in &r.sources {
                assert!(s.counters.is_conserved(), "{policy:?}: {:?}", s.counters);
                assert!(s.counters.delivered > 0);
            }
        }
    }

    #[test]
    fn non_preemptive_never_preempts() {
        let r = run(&two_source(), Policy::NonPreemptive, &SimConfig::horizon(2_000.0, 3)).unwrap();
        assert!(r.sources.iter().all(|s| s.counters.preempted == 0));
    }

    #[test]
    fn delivery_target_is_met() {
        let sim = SimConfig::deliveries(500, 11);
        let r = run(&two_source(), Policy::SelfPreemptive, &sim).unwrap();
        for s in &r.sources {
            assert!(s.system_time.count >= 500);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let sim = SimConfig {
            replications: 4,
            ..SimConfig::horizon(500.0, 9)
        };
        let cfg = two_source();
        let p = Policy::Probabilistic { theta: 0.4 };
        let a = run_with(&cfg, p, &sim, Execution::Sequential).unwrap();
        let b = run_with(&cfg, p, &sim, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aoi_samples_from_log() {
        let sim = SimConfig {
            record_deliveries: true,
            ..SimConfig::horizon(200.0, 2)
        };
        let r = run(&two_source(), Policy::SelfPreemptive, &sim).unwrap();
        let samples = r.aoi_samples(0, 50.0, 1.0, 100).unwrap();
        assert!(!samples.is_empty());
        assert!(samples.iter().all(|&x| x > 0.0));
    }
}
