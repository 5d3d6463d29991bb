//! Distributional checks of simulated output against the delivery-cycle laws.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{Policy, SimError, SimReport};
use crate::analytic::SystemConfig;

pub const CHI_SQUARE_BINS: usize = 50;
/// A fit passes when its p-value exceeds this.
pub const CHI_SQUARE_MIN_P: f64 = 1e-3;
/// Proportions pass within this many standard deviations.
pub const PROPORTION_SIGMAS: f64 = 3.0;
/// Minimum delivered system-time samples per source.
pub const MIN_FIT_SAMPLES: usize = 10_000;
/// Below this many preemption gaps the gap fit is skipped.
const MIN_GAP_SAMPLES: usize = 20 * CHI_SQUARE_BINS;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareCheck {
    pub samples: usize,
    pub bins: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionCheck {
    pub successes: u64,
    pub trials: u64,
    pub observed: f64,
    pub expected: f64,
    pub sigma: f64,
    pub passed: bool,
}

impl ProportionCheck {
    fn new(successes: u64, trials: u64, expected: f64) -> Self {
        let observed = if trials > 0 { successes as f64 / trials as f64 } else { f64::NAN };
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        let diff = (observed - expected).abs();
        Self {
            successes,
            trials,
            observed,
            expected,
            sigma,
            passed: trials > 0 && (diff <= PROPORTION_SIGMAS * sigma || diff < 1e-12),
        }
    }

    /// Deviation in units of sigma.
    pub fn z(&self) -> f64 {
        (self.observed - self.expected) / self.sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceChecks {
    pub source: usize,
    /// Delivered system times against the tilted service law.
    pub system_time_fit: Option<ChiSquareCheck>,
    /// Fraction of services that end in delivery.
    pub delivery: ProportionCheck,
    /// Share of idle-server arrivals won by this source.
    pub race: ProportionCheck,
    /// Service-start-to-preemption times against their conditional law.
    pub preempt_gap_fit: Option<ChiSquareCheck>,
}

impl SourceChecks {
    pub fn passed(&self) -> bool {
        self.system_time_fit.as_ref().is_none_or(|c| c.passed)
            && self.delivery.passed
            && self.race.passed
            && self.preempt_gap_fit.as_ref().is_none_or(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub theta: f64,
    pub sources: Vec<SourceChecks>,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.sources.iter().all(SourceChecks::passed)
    }
}

/// Compares a simulated report with the per-cycle laws of its policy.
///
/// The policy must be one of the probabilistic family (`NonPreemptive` is
/// `theta = 0`, `SelfPreemptive` is `theta = 1`). Distribution fits are
/// skipped for laws without a density.
pub fn empirical_checks(
    report: &SimReport,
    cfg: &SystemConfig,
    policy: Policy,
) -> Result<CheckSummary, SimError> {
    let theta = match policy {
        Policy::Probabilistic { theta } => theta,
        Policy::NonPreemptive => 0.0,
        Policy::SelfPreemptive => 1.0,
        Policy::GloballyPreemptive => {
            return Err(SimError::NotApplicable(
                "per-cycle laws do not cover global preemption".into(),
            ))
        }
    };
    if report.sources.len() != cfg.sources() {
        return Err(SimError::InvalidConfig(format!(
            "report has {} sources, configuration has {}",
            report.sources.len(),
            cfg.sources()
        )));
    }
    let service = *cfg.service();
    let lambda = cfg.total_rate();
    let mut sources = Vec::with_capacity(cfg.sources());
    for (c, src) in report.sources.iter().enumerate() {
        let have = src.system_time_samples.len();
        if have < MIN_FIT_SAMPLES {
            return Err(SimError::InsufficientSamples {
                what: format!("system times of source {c}"),
                have,
                need: MIN_FIT_SAMPLES,
            });
        }
        let r = theta * cfg.rate(c);
        let norm = service.mgf_point(-r)?;

        let system_time_fit = if service.has_density() {
            let cdf = |t: f64| service.partial_mgf(-r, t).map(|v| v / norm).map_err(SimError::from);
            Some(chi_square_fit(&src.system_time_samples, cdf)?)
        } else {
            None
        };

        let tr = &src.transitions;
        let delivery = ProportionCheck::new(
            tr.resolved_delivered,
            tr.resolved_delivered + tr.resolved_preempted,
            norm,
        );
        let (wins, total) = report.race_frequency(c);
        let race = ProportionCheck::new(wins, total, cfg.rate(c) / lambda);

        let preempt_gap_fit = if r > 0.0
            && service.has_density()
            && src.preempt_gap_samples.len() >= MIN_GAP_SAMPLES
        {
            let p_preempt = 1.0 - norm;
            let cdf = |t: f64| -> Result<f64, SimError> {
                let hit = service.partial_mgf(-r, t)?;
                let censored = (-r * t).exp() * service.survival(t);
                Ok(((1.0 - hit - censored) / p_preempt).clamp(0.0, 1.0))
            };
            Some(chi_square_fit(&src.preempt_gap_samples, cdf)?)
        } else {
            None
        };

        sources.push(SourceChecks {
            source: c,
            system_time_fit,
            delivery,
            race,
            preempt_gap_fit,
        });
    }
    Ok(CheckSummary { theta, sources })
}

/// Pearson chi-square on equal-probability bins of a continuous law.
fn chi_square_fit<F>(samples: &[f64], cdf: F) -> Result<ChiSquareCheck, SimError>
where
    F: Fn(f64) -> Result<f64, SimError>,
{
    let bins = CHI_SQUARE_BINS;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = Vec::with_capacity(bins - 1);
    for i in 1..bins {
        edges.push(quantile(&cdf, i as f64 / bins as f64)?);
    }
    let expected = n as f64 / bins as f64;
    let mut prev = 0usize;
    let mut statistic = 0.0;
    for i in 0..bins {
        let idx = if i + 1 < bins {
            sorted.partition_point(|&x| x <= edges[i])
        } else {
            n
        };
        let observed = (idx - prev) as f64;
        statistic += (observed - expected).powi(2) / expected;
        prev = idx;
    }
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    let p_value = dist.sf(statistic);
    Ok(ChiSquareCheck {
        samples: n,
        bins,
        statistic,
        p_value,
        passed: p_value > CHI_SQUARE_MIN_P,
    })
}

/// Smallest `t` with `cdf(t) >= q`, by bracketing and bisection.
fn quantile<F>(cdf: &F, q: f64) -> Result<f64, SimError>
where
    F: Fn(f64) -> Result<f64, SimError>,
{
    let mut lo = 0.0;
    let mut hi = 1.0;
    while cdf(hi)? < q {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SimError::NotApplicable(format!(
                "distribution function never reaches {q}"
            )));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid)? < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Sample mean and standard error of `e^{s x}`.
pub fn empirical_mgf(samples: &[f64], s: f64) -> Result<(f64, f64), SimError> {
    if s > 0.0 {
        return Err(SimError::PositiveExponentRejected(s));
    }
    const MIN: usize = 100;
    if samples.len() < MIN {
        return Err(SimError::InsufficientSamples {
            what: "empirical MGF".into(),
            have: samples.len(),
            need: MIN,
        });
    }
    let n = samples.len() as f64;
    let values: Vec<f64> = samples.iter().map(|&x| (s * x).exp()).collect();
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
