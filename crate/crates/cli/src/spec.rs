//! Experiment configuration files.

use std::path::PathBuf;

use aoi_core::sim::{SimConfig, StopRule};
use aoi_core::{ServiceDistribution, SystemConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SpecError> {
    Err(SpecError::Validation(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Theta,
    Lambda1,
    None,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::Lambda1 => "lambda1",
            Axis::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analytic,
    Simulate,
    Both,
}

impl Mode {
    pub fn analytic(&self) -> bool {
        matches!(self, Mode::Analytic | Mode::Both)
    }

    pub fn simulate(&self) -> bool {
        matches!(self, Mode::Simulate | Mode::Both)
    }
}

/// Policy family evaluated in a sweep; `Probabilistic` takes its `theta` from
/// the grid point or the system section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Probabilistic,
    NonPreemptive,
    SelfPreemptive,
    GloballyPreemptive,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Probabilistic,
        PolicyKind::NonPreemptive,
        PolicyKind::SelfPreemptive,
        PolicyKind::GloballyPreemptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Probabilistic => "probabilistic",
            PolicyKind::NonPreemptive => "non_preemptive",
            PolicyKind::SelfPreemptive => "self_preemptive",
            PolicyKind::GloballyPreemptive => "globally_preemptive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    /// Evenly spaced grid including both ends; a single point when not sweeping.
    pub fn grid(&self) -> Vec<f64> {
        if self.axis == Axis::None {
            return vec![f64::NAN];
        }
        let n = self.points;
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    self.stop
                } else {
                    self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub sweep: Sweep,
    pub mode: Mode,
    pub policies: Vec<PolicyKind>,
    pub sim: SimConfig,
    pub output: Option<PathBuf>,
    pub samples_output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    system: RawSystem,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    arrival_rates: Vec<f64>,
    #[serde(default)]
    theta: f64,
    service: ServiceDistribution,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default = "default_axis")]
    axis: Axis,
    start: Option<f64>,
    stop: Option<f64>,
    points: Option<usize>,
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default = "default_policies")]
    policies: Vec<PolicyKind>,
}

impl Default for RawSweep {
    fn default() -> Self {
        Self {
            axis: default_axis(),
            start: None,
            stop: None,
            points: None,
            mode: default_mode(),
            policies: default_policies(),
        }
    }
}

fn default_axis() -> Axis {
    Axis::None
}

fn default_mode() -> Mode {
    Mode::Analytic
}

fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::Probabilistic]
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    horizon: Option<f64>,
    deliveries: Option<u64>,
    warmup: Option<f64>,
    seed: Option<u64>,
    replications: Option<usize>,
    batches: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
    samples_path: Option<PathBuf>,
}

/// Parses and validates a TOML experiment description.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, SpecError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
    let s = raw.system;
    if !(0.0..=1.0).contains(&s.theta) || s.theta.is_nan() {
        return invalid(format!("system.theta must lie in [0, 1], got {}", s.theta));
    }
    let system = SystemConfig::new(s.arrival_rates, s.theta, s.service)
        .map_err(|e| SpecError::Validation(format!("system: {e}")))?;

    let w = raw.sweep;
    let sweep = match w.axis {
        Axis::None => Sweep {
            axis: Axis::None,
            start: f64::NAN,
            stop: f64::NAN,
            points: 1,
        },
        axis => {
            let (Some(start), Some(stop), Some(points)) = (w.start, w.stop, w.points) else {
                return invalid(format!(
                    "sweep over {} needs start, stop and points",
                    axis.name()
                ));
            };
            Sweep {
                axis,
                start,
                stop,
                points,
            }
        }
    };
    if sweep.axis == Axis::None && (w.start.is_some() || w.stop.is_some() || w.points.is_some()) {
        return invalid("sweep.start/stop/points given without a sweep axis");
    }
    if w.policies.is_empty() {
        return invalid("sweep.policies must name at least one policy");
    }

    let r = raw.simulation;
    let stop = match (r.horizon, r.deliveries) {
        (Some(_), Some(_)) => return invalid("simulation: give either horizon or deliveries, not both"),
        (Some(h), None) => StopRule::Horizon(h),
        (None, Some(d)) => StopRule::Deliveries(d),
        (None, None) => SimConfig::default().stop,
    };
    let defaults = SimConfig::default();
    let sim = SimConfig {
        stop,
        warmup: r.warmup.unwrap_or(defaults.warmup),
        seed: r.seed.unwrap_or(defaults.seed),
        replications: r.replications.unwrap_or(defaults.replications),
        batches: r.batches.unwrap_or(defaults.batches),
        ..defaults
    };

    let spec = ExperimentSpec {
        system,
        sweep,
        mode: w.mode,
        policies: dedup(w.policies),
        sim,
        output: raw.output.path,
        samples_output: raw.output.samples_path,
    };
    validate_spec(&spec)?;
    Ok(spec)
}

fn dedup(policies: Vec<PolicyKind>) -> Vec<PolicyKind> {
    let mut out = Vec::with_capacity(policies.len());
    for p in policies {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Checks the cross-field invariants; re-run after command-line overrides.
pub fn validate_spec(spec: &ExperimentSpec) -> Result<(), SpecError> {
    let w = &spec.sweep;
    if w.axis != Axis::None {
        if !(w.start.is_finite() && w.stop.is_finite()) || w.start >= w.stop {
            return invalid(format!(
                "sweep.start must be below sweep.stop, got {} and {}",
                w.start, w.stop
            ));
        }
        if w.points < 2 {
            return invalid(format!("sweep.points must be at least 2, got {}", w.points));
        }
    }
    match w.axis {
        Axis::Theta if w.start < 0.0 || w.stop > 1.0 => {
            return invalid(format!(
                "theta sweep must stay within [0, 1], got [{}, {}]",
                w.start, w.stop
            ))
        }
        Axis::Lambda1 => {
            if spec.system.sources() != 2 {
                return invalid(format!(
                    "lambda1 sweep requires exactly two sources, got {}",
                    spec.system.sources()
                ));
            }
            let lambda = spec.system.total_rate();
            if !spec
                .sweep
                .grid()
                .iter()
                .any(|&l1| l1 > 0.0 && lambda - l1 > 0.0)
            {
                return invalid(format!(
                    "lambda1 grid has no point inside (0, {lambda})"
                ));
            }
        }
        _ => {}
    }
    if spec.mode.simulate() {
        spec.sim
            .validate()
            .map_err(|e| SpecError::Validation(format!("simulation: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
arrival_rates = [2.0, 6.0]
service = { dist = "exponential", rate = 1.0 }
"#;

    #[test]
    fn minimal_spec_gets_defaults() {
        let spec = parse_spec(MINIMAL).unwrap();
        assert_eq!(spec.system.theta(), 0.0);
        assert_eq!(spec.sweep.axis, Axis::None);
        assert_eq!(spec.mode, Mode::Analytic);
        assert_eq!(spec.policies, vec![PolicyKind::Probabilistic]);
        assert_eq!(spec.sim, SimConfig::default());
        assert_eq!(spec.sweep.grid().len(), 1);
    }

    #[test]
    fn theta_out_of_range_names_the_bound() {
        let text = MINIMAL.replace("[system]", "[system]\ntheta = 1.5");
        let err = parse_spec(&text).unwrap_err();
        assert!(matches!(err, SpecError::Validation(_)));
        assert!(err.to_string().contains("[0, 1]"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[system]", "[system]\ncolour = 3");
        let err = parse_spec(&text).unwrap_err();
        assert!(matches!(err, SpecError::Parse(_)));
        assert!(err.to_string().contains("colour"), "{err}");
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(matches!(parse_spec(&text), Err(SpecError::Parse(_))));
    }

    #[test]
    fn lambda1_sweep_is_two_source_only() {
        let text = r#"
[system]
arrival_rates = [2.0, 3.0, 3.0]
service = { dist = "exponential", rate = 1.0 }
[sweep]
axis = "lambda1"
start = 1.0
stop = 7.0
points = 7
"#;
        let err = parse_spec(text).unwrap_err();
        assert!(err.to_string().contains("two sources"), "{err}");
    }

    #[test]
    fn grid_hits_both_ends() {
        let s = Sweep {
            axis: Axis::Theta,
            start: 0.0,
            stop: 1.0,
            points: 11,
        };
        let g = s.grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        assert!((g[3] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn bad_grid_rejected() {
        let text = format!("{MINIMAL}\n[sweep]\naxis = \"theta\"\nstart = 0.5\nstop = 0.5\npoints = 3\n");
        assert!(matches!(parse_spec(&text), Err(SpecError::Validation(_))));
        let text = format!("{MINIMAL}\n[sweep]\naxis = \"theta\"\nstart = 0.0\nstop = 1.0\npoints = 1\n");
        assert!(matches!(parse_spec(&text), Err(SpecError::Validation(_))));
    }
}
