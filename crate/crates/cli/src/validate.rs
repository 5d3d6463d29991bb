//! Cross-check suite: closed forms against the graph solver, the two moment
//! routes against each other, and the analytic results against simulation.

use std::fmt;

use aoi_core::analytic::{self, Perturbation};
use aoi_core::exec::Execution;
use aoi_core::semi_markov;
use aoi_core::sim::{self, Policy, SimConfig, StopRule};
use aoi_core::SystemConfig;

use crate::spec::ExperimentSpec;

/// Jet order of the transform comparisons.
pub const CHECK_ORDER: usize = 8;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-10;
pub const AOI_NORMALIZATION_TOLERANCE: f64 = 1e-8;
pub const GRAPH_TOLERANCE: f64 = 1e-9;
/// Relative slack of the analytic-vs-simulation check, used when wider than the CI.
pub const SIM_RELATIVE_SLACK: f64 = 0.02;
/// Per-source delivered packets for the distribution fits.
pub const FIT_DELIVERIES: u64 = 20_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Flip the sign of `a'` in the closed-form interdeparture MGF.
    pub corrupt_a_prime: bool,
    /// Skip the simulation-based checks.
    pub analytic_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest measured discrepancy, in the check's own units.
    pub discrepancy: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, passed: bool, discrepancy: f64, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            discrepancy,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<28} discrepancy={:<12.4e} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.discrepancy,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Largest per-coefficient relative difference, with absolute comparison
/// for coefficients below `1e-12`.
pub fn coefficient_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-12))
        .fold(0.0, f64::max)
}

/// Runs every check against the spec's system configuration.
pub fn validate(spec: &ExperimentSpec, options: ValidateOptions, exec: Execution) -> ValidationReport {
    let cfg = &spec.system;
    let mut report = ValidationReport::default();
    normalization(cfg, &mut report);
    graph_equivalence(cfg, options, &mut report);
    moment_routes(cfg, &mut report);
    if !options.analytic_only {
        policy_limits(cfg, &spec.sim, exec, &mut report);
        analytic_vs_simulation(cfg, &spec.sim, exec, &mut report);
        distribution_fits(cfg, &spec.sim, &mut report);
    }
    report
}

fn normalization(cfg: &SystemConfig, report: &mut ValidationReport) {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut detail = String::new();
    for c in 0..cfg.sources() {
        let jets = [
            ("system_time", analytic::system_time_mgf_jet(cfg, c, CHECK_ORDER), NORMALIZATION_TOLERANCE),
            ("interdeparture", analytic::interdeparture_mgf_jet(cfg, c, CHECK_ORDER), NORMALIZATION_TOLERANCE),
            ("paoi", analytic::paoi_mgf_jet(cfg, c, CHECK_ORDER), NORMALIZATION_TOLERANCE),
            ("aoi", analytic::aoi_mgf_jet(cfg, c, CHECK_ORDER), AOI_NORMALIZATION_TOLERANCE),
        ];
        for (name, jet, tol) in jets {
            match jet {
                Ok(j) => {
                    let gap = (j.value() - 1.0).abs();
                    worst = worst.max(gap);
                    ok &= gap <= tol;
                }
                Err(e) => {
                    ok = false;
                    worst = f64::INFINITY;
                    detail = format!("source {} {name}: {e}", c + 1);
                }
            }
        }
    }
    report.push("normalization", ok, worst, detail);
}

fn graph_equivalence(cfg: &SystemConfig, options: ValidateOptions, report: &mut ValidationReport) {
    let perturbation = if options.corrupt_a_prime {
        Perturbation::FlipAPrimeSign
    } else {
        Perturbation::None
    };
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for c in 0..cfg.sources() {
        let closed = analytic::interdeparture_mgf_jet_perturbed(cfg, c, CHECK_ORDER, perturbation);
        let graph = semi_markov::interdeparture_via_graph(cfg, c, CHECK_ORDER);
        match (closed, graph) {
            (Ok(a), Ok(b)) => worst = worst.max(coefficient_gap(a.coeffs(), b.coeffs())),
            (Err(e), _) => {
                worst = f64::INFINITY;
                detail = format!("closed form, source {}: {e}", c + 1);
            }
            (_, Err(e)) => {
                worst = f64::INFINITY;
                detail = format!("graph solver, source {}: {e}", c + 1);
            }
        }
    }
    report.push("closed_form_vs_graph", worst <= GRAPH_TOLERANCE, worst, detail);
}

fn moment_routes(cfg: &SystemConfig, report: &mut ValidationReport) {
    match analytic::all_moments(cfg, 4) {
        Ok(_) => report.push("corollary_vs_jet", true, 0.0, "m = 1..4".into()),
        Err(e) => report.push("corollary_vs_jet", false, f64::INFINITY, e.to_string()),
    }
}

fn policy_limits(cfg: &SystemConfig, sim_cfg: &SimConfig, exec: Execution, report: &mut ValidationReport) {
    let pairs = [
        ("limit_theta0_non_preemptive", 0.0, Policy::NonPreemptive),
        ("limit_theta1_self_preemptive", 1.0, Policy::SelfPreemptive),
    ];
    for (name, theta, baseline) in pairs {
        let a = sim::run_with(cfg, Policy::Probabilistic { theta }, sim_cfg, exec);
        let b = sim::run_with(cfg, baseline, sim_cfg, exec);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let same = a == b;
                let gap = (a.sum_mean_aoi - b.sum_mean_aoi).abs();
                report.push(name, same, gap, if same { "bit-identical".into() } else { "reports differ".into() });
            }
            (Err(e), _) | (_, Err(e)) => report.push(name, false, f64::INFINITY, e.to_string()),
        }
    }
}

fn analytic_vs_simulation(
    cfg: &SystemConfig,
    sim_cfg: &SimConfig,
    exec: Execution,
    report: &mut ValidationReport,
) {
    let metrics = match analytic::all_moments(cfg, 1) {
        Ok(m) => m,
        Err(e) => return report.push("analytic_vs_simulation", false, f64::INFINITY, e.to_string()),
    };
    let sim = match sim::run_with(cfg, Policy::Probabilistic { theta: cfg.theta() }, sim_cfg, exec) {
        Ok(r) => r,
        Err(e) => return report.push("analytic_vs_simulation", false, f64::INFINITY, e.to_string()),
    };
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (m, s) in metrics.iter().zip(&sim.sources) {
        for (what, exact, est, ci) in [
            ("aoi", m.mean_aoi(), s.mean_aoi, s.mean_aoi_ci),
            ("paoi", m.mean_paoi(), s.mean_paoi, s.mean_paoi_ci),
        ] {
            let rel = (est - exact).abs() / exact;
            let allowed = (SIM_RELATIVE_SLACK * exact).max(ci);
            worst = worst.max(rel);
            if (est - exact).abs() > allowed {
                ok = false;
                detail.push(format!("source {} {what}: {est:.6} vs {exact:.6}", m.source + 1));
            }
        }
    }
    report.push("analytic_vs_simulation", ok, worst, detail.join("; "));
}

fn distribution_fits(cfg: &SystemConfig, sim_cfg: &SimConfig, report: &mut ValidationReport) {
    let policy = Policy::Probabilistic { theta: cfg.theta() };
    let fit_cfg = SimConfig {
        stop: StopRule::Deliveries(FIT_DELIVERIES),
        replications: 1,
        ..sim_cfg.clone()
    };
    let result = sim::run(cfg, policy, &fit_cfg)
        .map_err(|e| e.to_string())
        .and_then(|r| sim::empirical_checks(&r, cfg, policy).map_err(|e| e.to_string()));
    match result {
        Ok(summary) => {
            let mut worst_z: f64 = 0.0;
            let mut min_p: f64 = 1.0;
            for s in &summary.sources {
                worst_z = worst_z.max(s.delivery.z().abs()).max(s.race.z().abs());
                for fit in [&s.system_time_fit, &s.preempt_gap_fit].into_iter().flatten() {
                    min_p = min_p.min(fit.p_value);
                }
            }
            report.push(
                "distribution_fits",
                summary.passed(),
                worst_z,
                format!("max |z| = {worst_z:.2}, min chi-square p = {min_p:.3e}"),
            );
        }
        Err(e) => report.push("distribution_fits", false, f64::INFINITY, e),
    }
}
