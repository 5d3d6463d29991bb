//! Acceptance suite. Each test prints one `acceptance N: PASS|FAIL` line to
//! stderr (bypassing output capture) and then asserts its criterion.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use aoi_cli::spec::{Mode, PolicyKind};
use aoi_cli::sweep::RowMode;
use aoi_cli::validate::coefficient_gap;
use aoi_cli::{parse_spec, run_sweep};
use aoi_core::analytic;
use aoi_core::exec::Execution;
use aoi_core::semi_markov;
use aoi_core::sim::{self, Policy, SimConfig};
use aoi_core::{ServiceDistribution, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, passed: bool, detail: &str) {
    let line = format!(
        "\nacceptance {criterion}: {} {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn lognormal() -> ServiceDistribution {
    ServiceDistribution::lognormal(-1.0, 1.0).unwrap()
}

/// 64 configurations: every service family x theta x source count, with
/// seeded random rates and service parameters.
fn config_grid() -> Vec<SystemConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();
    for family in 0..4 {
        for theta in [0.0, 0.28, 0.5, 1.0] {
            for sources in 1..=4 {
                let service = match family {
                    0 => ServiceDistribution::exponential(rng.random_range(0.5..3.0)),
                    1 => ServiceDistribution::gamma(rng.random_range(0.5..4.0), rng.random_range(0.5..4.0)),
                    2 => ServiceDistribution::deterministic(rng.random_range(0.2..1.5)),
                    _ => ServiceDistribution::lognormal(rng.random_range(-1.5..0.0), rng.random_range(0.3..1.2)),
                }
                .unwrap();
                let rates = (0..sources).map(|_| rng.random_range(0.2..4.0)).collect();
                out.push(SystemConfig::new(rates, theta, service).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_1_normalization() {
    let start = Instant::now();
    let grid = config_grid();
    let mut worst_aoi: f64 = 0.0;
    let mut worst_other: f64 = 0.0;
    for cfg in &grid {
        for c in 0..cfg.sources() {
            let t = analytic::system_time_mgf_jet(cfg, c, 8).unwrap();
            let y = analytic::interdeparture_mgf_jet(cfg, c, 8).unwrap();
            let p = analytic::paoi_mgf_jet(cfg, c, 8).unwrap();
            let a = analytic::aoi_mgf_jet(cfg, c, 8).unwrap();
            for j in [&t, &y, &p] {
                worst_other = worst_other.max((j.value() - 1.0).abs());
            }
            worst_aoi = worst_aoi.max((a.value() - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    let passed = grid.len() >= 50
        && worst_aoi <= 1e-8
        && worst_other <= 1e-10
        && elapsed < Duration::from_secs(10);
    report(
        1,
        passed,
        &format!(
            "{} configs, max |M(0)-1|: aoi {worst_aoi:.2e}, others {worst_other:.2e}, {elapsed:.2?}",
            grid.len()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_2_closed_form_matches_graph_solver() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for cfg in &config_grid() {
        for c in 0..cfg.sources() {
            let closed = analytic::interdeparture_mgf_jet(cfg, c, 8).unwrap();
            let graph = semi_markov::interdeparture_via_graph(cfg, c, 8).unwrap();
            assert_eq!(closed.order(), 8);
            worst = worst.max(coefficient_gap(closed.coeffs(), graph.coeffs()));
        }
    }
    let elapsed = start.elapsed();
    let passed = worst <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        2,
        passed,
        &format!("max relative coefficient gap {worst:.2e} (orders 0..8), {elapsed:.2?}"),
    );
    assert!(passed);
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn criterion_3_moment_routes_agree() {
    let mut worst: f64 = 0.0;
    for cfg in &config_grid() {
        for c in 0..cfg.sources() {
            let t = analytic::system_time_mgf_jet(cfg, c, 7).unwrap().derivatives();
            let y = analytic::interdeparture_mgf_jet(cfg, c, 7).unwrap().derivatives();
            let paoi = analytic::paoi_mgf_jet(cfg, c, 7).unwrap().derivatives();
            let aoi = analytic::aoi_mgf_jet(cfg, c, 7).unwrap().derivatives();
            let conv = |m: usize| (0..=m).map(|i| binomial(m, i) * t[i] * y[m - i]).sum::<f64>();
            for m in 1..=4 {
                let paoi_cor = conv(m);
                let aoi_cor = (conv(m + 1) - t[m + 1]) / ((m + 1) as f64 * y[1]);
                worst = worst
                    .max((paoi_cor - paoi[m]).abs() / paoi[m].abs())
                    .max((aoi_cor - aoi[m]).abs() / aoi[m].abs());
            }
            analytic::moments(cfg, c, 4).unwrap();
        }
    }
    let passed = worst <= 1e-8;
    report(3, passed, &format!("max relative gap over m <= 4: {worst:.2e}"));
    assert!(passed);
}

#[test]
fn criterion_4_single_source_anchor() {
    let start = Instant::now();
    let cfg = SystemConfig::new(vec![1.0], 1.0, ServiceDistribution::exponential(1.0).unwrap()).unwrap();
    let m = analytic::moments(&cfg, 0, 1).unwrap();
    let analytic_ok =
        (m.mean_aoi() - 2.0).abs() < 1e-12 && (m.mean_interdeparture - 2.0).abs() < 1e-12;
    let sim_cfg = SimConfig {
        batches: 20,
        ..SimConfig::horizon(1e6, 11)
    };
    let r = sim::run(&cfg, Policy::Probabilistic { theta: 1.0 }, &sim_cfg).unwrap();
    let s = &r.sources[0];
    let aoi_ok = (s.mean_aoi - 2.0).abs() <= s.mean_aoi_ci && s.mean_aoi_ci < 0.02;
    let y_ok = (s.interdeparture.mean() - 2.0).abs() <= s.mean_interdeparture_ci
        && s.mean_interdeparture_ci < 0.02;
    let elapsed = start.elapsed();
    let passed = analytic_ok && aoi_ok && y_ok && elapsed < Duration::from_secs(30);
    report(
        4,
        passed,
        &format!(
            "analytic AoI {:.12} Y {:.12}; simulated AoI {:.4} +/- {:.4}, Y {:.4} +/- {:.4}, {elapsed:.2?}",
            m.mean_aoi(),
            m.mean_interdeparture,
            s.mean_aoi,
            s.mean_aoi_ci,
            s.interdeparture.mean(),
            s.mean_interdeparture_ci
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_5_limit_reductions() {
    let cfg = SystemConfig::new(vec![2.0, 6.0], 0.28, lognormal()).unwrap();
    let sim_cfg = SimConfig {
        replications: 3,
        ..SimConfig::horizon(5_000.0, 99)
    };
    let run = |p| sim::run(&cfg, p, &sim_cfg).unwrap();
    let a = run(Policy::Probabilistic { theta: 0.0 }) == run(Policy::NonPreemptive);
    let b = run(Policy::Probabilistic { theta: 1.0 }) == run(Policy::SelfPreemptive);

    // worst gap per service family
    let mut worst = [0.0f64; 2];
    for theta in [0.0, 0.28, 1.0] {
        for (family, service) in [ServiceDistribution::exponential(1.3).unwrap(), lognormal()]
            .into_iter()
            .enumerate()
        {
            let single = SystemConfig::new(vec![2.0], theta, service).unwrap();
            let multi = SystemConfig::new(vec![2.0, 1e-9], theta, service).unwrap();
            let pairs = [
                (analytic::system_time_mgf_jet(&single, 0, 8), analytic::system_time_mgf_jet(&multi, 0, 8)),
                (analytic::interdeparture_mgf_jet(&single, 0, 8), analytic::interdeparture_mgf_jet(&multi, 0, 8)),
                (analytic::paoi_mgf_jet(&single, 0, 8), analytic::paoi_mgf_jet(&multi, 0, 8)),
                (analytic::aoi_mgf_jet(&single, 0, 8), analytic::aoi_mgf_jet(&multi, 0, 8)),
            ];
            for (s, m) in pairs {
                let gap = coefficient_gap(m.unwrap().coeffs(), s.unwrap().coeffs());
                worst[family] = worst[family].max(gap);
            }
        }
    }
    let c = worst.iter().all(|&w| w <= 1e-6);
    let passed = a && b && c;
    report(
        5,
        passed,
        &format!(
            "(a) theta=0 == non-preemptive: {a}; (b) theta=1 == self-preemptive: {b}; (c) max coefficient gap at lambda_2=1e-9: exponential {:.2e}, log-normal {:.2e}",
            worst[0], worst[1]
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_6_appendix_oracles() {
    let start = Instant::now();
    let theta = 0.28;
    let cfg = SystemConfig::new(vec![2.0, 6.0], theta, lognormal()).unwrap();
    let policy = Policy::Probabilistic { theta };
    let r = sim::run(&cfg, policy, &SimConfig::deliveries(100_000, 6)).unwrap();
    let summary = sim::empirical_checks(&r, &cfg, policy).unwrap();
    let s1 = &summary.sources[0];
    let fit = s1.system_time_fit.as_ref().expect("log-normal has a density");
    let elapsed = start.elapsed();
    let passed = fit.samples >= 100_000
        && fit.passed
        && s1.delivery.passed
        && s1.race.passed
        && elapsed < Duration::from_secs(120);
    report(
        6,
        passed,
        &format!(
            "(i) chi-square p = {:.3} on {} samples; (ii) delivery {:.5} vs {:.5} (z = {:.2}); (iii) race {:.5} vs {:.5} (z = {:.2}); {elapsed:.2?}",
            fit.p_value,
            fit.samples,
            s1.delivery.observed,
            s1.delivery.expected,
            s1.delivery.z(),
            s1.race.observed,
            s1.race.expected,
            s1.race.z()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_7_analytic_inside_simulated_ci() {
    let start = Instant::now();
    let text = std::fs::read_to_string(config_path("theta_sweep_lambda1_2.toml")).unwrap();
    let mut spec = parse_spec(&text).unwrap();
    spec.sweep.points = 11;
    spec.mode = Mode::Both;
    spec.policies = vec![PolicyKind::Probabilistic];
    assert!(spec.sim.replications >= 20);
    let table = run_sweep(&spec, Execution::default()).unwrap();
    let mut misses = Vec::new();
    let mut worst_width: f64 = 0.0;
    for pair in table.rows.chunks(2) {
        let (a, s) = (&pair[0], &pair[1]);
        assert_eq!((a.mode, s.mode), (RowMode::Analytic, RowMode::Simulate));
        let exact = a.sum_mean_aoi.unwrap();
        let est = s.sum_mean_aoi.unwrap();
        let ci = s.sum_ci_halfwidth.unwrap();
        worst_width = worst_width.max(ci / est);
        if (exact - est).abs() > ci {
            misses.push(format!(
                "theta {:.1}: analytic {exact:.5} vs {est:.5} +/- {ci:.5}",
                a.axis_value
            ));
        }
    }
    let elapsed = start.elapsed();
    let passed = misses.is_empty() && worst_width < 0.01 && elapsed < Duration::from_secs(600);
    report(
        7,
        passed,
        &format!(
            "{} points, {} outside CI, widest CI {:.3}% of value, {elapsed:.2?}{}{}",
            table.rows.len() / 2,
            misses.len(),
            100.0 * worst_width,
            if misses.is_empty() { "" } else { "; " },
            misses.join("; ")
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_8_probabilistic_beats_baselines() {
    let text = std::fs::read_to_string(config_path("theta_sweep_lambda1_2.toml")).unwrap();
    let mut spec = parse_spec(&text).unwrap();
    spec.mode = Mode::Analytic;
    spec.policies = vec![
        PolicyKind::Probabilistic,
        PolicyKind::NonPreemptive,
        PolicyKind::SelfPreemptive,
    ];
    let table = run_sweep(&spec, Execution::default()).unwrap();
    let prob: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.policy == PolicyKind::Probabilistic)
        .map(|r| (r.axis_value, r.sum_mean_aoi.unwrap()))
        .collect();
    let (theta_opt, best) = prob
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let baseline = |k| {
        table.rows.iter().find(|r| r.policy == k).unwrap().sum_mean_aoi.unwrap()
    };
    let non = baseline(PolicyKind::NonPreemptive);
    let slf = baseline(PolicyKind::SelfPreemptive);

    // no closed form for global preemption: simulate it
    let cfg = spec.system.clone();
    let global = sim::run(&cfg, Policy::GloballyPreemptive, &spec.sim).unwrap().sum_mean_aoi;

    let best_baseline = non.min(slf).min(global);
    let improvement = (best_baseline - best) / best * 100.0;
    let interior = theta_opt > 0.0 && theta_opt < 1.0;
    let strict = best < best_baseline;
    let in_band = (improvement - 18.0).abs() <= 8.0;
    let passed = interior && strict;
    report(
        8,
        passed,
        &format!(
            "optimum theta {theta_opt:.2} (sum AoI {best:.4}); baselines non {non:.4}, self {slf:.4}, global {global:.4} (simulated); improvement {improvement:.2}% ({} the 18 +/- 8 band)",
            if in_band { "inside" } else { "outside" }
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_9_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        r#"
[system]
arrival_rates = [2.0, 6.0]
theta = 0.28
service = { dist = "lognormal", location = -1.0, scale = 1.0 }

[sweep]
axis = "theta"
start = 0.0
stop = 1.0
points = 5
mode = "both"
policies = ["probabilistic", "non_preemptive", "self_preemptive", "globally_preemptive"]

[simulation]
horizon = 2000.0
seed = 31
replications = 3
"#,
    )
    .unwrap();
    let run = |name: &str, extra: &[&str]| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_aoi"))
            .arg("sweep")
            .arg("--config")
            .arg(&spec)
            .arg("--output")
            .arg(&out)
            .args(extra)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let first = run("a.csv", &[]);
    let second = run("b.csv", &[]);
    let sequential = run("c.csv", &["--sequential"]);
    let passed = !first.is_empty() && first == second && first == sequential;
    report(
        9,
        passed,
        &format!(
            "{} bytes; rerun identical: {}; sequential identical: {}",
            first.len(),
            first == second,
            first == sequential
        ),
    );
    assert!(passed);
}
