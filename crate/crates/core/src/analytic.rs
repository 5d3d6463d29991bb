//! Closed-form MGFs of system time, interdeparture time, PAoI and AoI for the
//! multi-source M/G/1/1 queue with probabilistic same-source preemption, and
//! the moments extracted from them.
//!
//! All transforms are assembled in jet arithmetic around `s = 0`, so moments
//! of any order up to the jet order come out as exact derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::{Jet, JetError};
use crate::service::{ServiceDistribution, ServiceError};

/// Agreement required between the two moment routes in [`moments`].
pub const MOMENT_CONSISTENCY_TOLERANCE: f64 = 1e-8;

/// Pointwise evaluation refuses `s` this close to `theta * lambda_c`.
pub const REMOVABLE_POINT_GUARD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
    #[error("source index {index} out of range for {sources} sources")]
    SourceOutOfRange { index: usize, sources: usize },
    #[error("requested moment order {0} must be at least 1")]
    MomentOrder(usize),
    #[error("moment routes disagree for {metric} m={order}: corollary {corollary} vs jet {jet}")]
    ConsistencyError {
        metric: &'static str,
        order: usize,
        corollary: f64,
        jet: f64,
    },
    #[error("s = {s} outside the convergence region: {reason}")]
    OutsideConvergenceRegion { s: f64, reason: String },
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// Source arrival rates, preemption probability and the shared service law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    arrival_rates: Vec<f64>,
    theta: f64,
    service: ServiceDistribution,
}

impl SystemConfig {
    pub fn new(
        arrival_rates: Vec<f64>,
        theta: f64,
        service: ServiceDistribution,
    ) -> Result<Self, AnalyticError> {
        if arrival_rates.is_empty() {
            return Err(AnalyticError::InvalidConfig("at least one source is required".into()));
        }
        if let Some(bad) = arrival_rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(AnalyticError::InvalidConfig(format!(
                "arrival rates must be positive and finite, got {bad}"
            )));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(AnalyticError::InvalidConfig(format!(
                "theta must lie in [0, 1], got {theta}"
            )));
        }
        service
            .validate()
            .map_err(|e| AnalyticError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            arrival_rates,
            theta,
            service,
        })
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rates
    }

    pub fn rate(&self, c: usize) -> f64 {
        self.arrival_rates[c]
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn service(&self) -> &ServiceDistribution {
        &self.service
    }

    pub fn sources(&self) -> usize {
        self.arrival_rates.len()
    }

    pub fn total_rate(&self) -> f64 {
        self.arrival_rates.iter().sum()
    }

    /// Rate `theta * lambda_c` of the thinned stream of preempting arrivals.
    pub fn preemption_rate(&self, c: usize) -> f64 {
        self.theta * self.arrival_rates[c]
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self, AnalyticError> {
        Self::new(self.arrival_rates.clone(), theta, self.service)
    }

    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self, AnalyticError> {
        Self::new(rates, self.theta, self.service)
    }

    pub(crate) fn check_source(&self, c: usize) -> Result<(), AnalyticError> {
        if c >= self.sources() {
            return Err(AnalyticError::SourceOutOfRange {
                index: c,
                sources: self.sources(),
            });
        }
        Ok(())
    }
}

/// Moments of AoI and PAoI for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiMetrics {
    pub source: usize,
    /// `aoi_moments[m-1]` is `E[delta^m]`.
    pub aoi_moments: Vec<f64>,
    /// `paoi_moments[m-1]` is `E[A^m]`.
    pub paoi_moments: Vec<f64>,
    pub mean_system_time: f64,
    pub mean_interdeparture: f64,
}

impl AoiMetrics {
    pub fn mean_aoi(&self) -> f64 {
        self.aoi_moments[0]
    }

    pub fn mean_paoi(&self) -> f64 {
        self.paoi_moments[0]
    }
}

/// Which transform [`mgf_point_eval`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Aoi,
    Paoi,
    SystemTime,
    Interdeparture,
}

/// Deliberate formula corruption used to confirm that the cross-checks can fail.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Perturbation {
    #[default]
    None,
    FlipAPrimeSign,
}

/// `M_U(s - theta lambda_c)` as a jet in `s` around `center`.
fn shifted_service_jet(
    cfg: &SystemConfig,
    c: usize,
    center: f64,
    order: usize,
) -> Result<Jet, AnalyticError> {
    let shift = cfg.preemption_rate(c);
    Ok(cfg
        .service
        .mgf_jet(center - shift, order)?
        .recentered(center))
}

fn system_time_jet_at(
    cfg: &SystemConfig,
    c: usize,
    center: f64,
    order: usize,
) -> Result<Jet, AnalyticError> {
    let shifted = shifted_service_jet(cfg, c, center, order)?;
    let norm = cfg.service.mgf_point(-cfg.preemption_rate(c))?;
    Ok(shifted.scale(1.0 / norm))
}

/// `a_c = lambda_c M_U(s - theta lambda_c) / (lambda - s)`.
fn a_jet(cfg: &SystemConfig, c: usize, center: f64, order: usize) -> Result<Jet, AnalyticError> {
    let num = shifted_service_jet(cfg, c, center, order)?.scale(cfg.rate(c));
    let den = Jet::affine(center, order, cfg.total_rate(), -1.0);
    Ok(num.try_div(&den)?)
}

/// `a'_c = theta lambda_c (1 - M_U(s - theta lambda_c)) / (theta lambda_c - s)`.
///
/// Evaluated as `theta lambda_c G(s - theta lambda_c)` with the service tail
/// transform `G(t) = (M_U(t) - 1)/t`, which has no cancellation as
/// `theta lambda_c -> 0` and is identically zero at `theta lambda_c = 0`.
fn a_prime_jet(
    cfg: &SystemConfig,
    c: usize,
    center: f64,
    order: usize,
) -> Result<Jet, AnalyticError> {
    let rate = cfg.preemption_rate(c);
    if rate == 0.0 {
        return Ok(Jet::zero(center, order));
    }
    Ok(cfg
        .service
        .tail_transform_jet(center - rate, order)?
        .recentered(center)
        .scale(rate))
}

fn interdeparture_jet_at(
    cfg: &SystemConfig,
    c: usize,
    center: f64,
    order: usize,
    perturbation: Perturbation,
) -> Result<Jet, AnalyticError> {
    let sign = match perturbation {
        Perturbation::None => 1.0,
        Perturbation::FlipAPrimeSign => -1.0,
    };
    let own = |k: usize| -> Result<(Jet, Jet), AnalyticError> {
        let a = a_jet(cfg, k, center, order)?;
        let one_minus_ap = a_prime_jet(cfg, k, center, order)?
            .scale(sign)
            .rsub_scalar(1.0);
        Ok((a, one_minus_ap))
    };
    let (a_c, d_c) = own(c)?;
    let mut others = Jet::one(center, order);
    for k in (0..cfg.sources()).filter(|&k| k != c) {
        let (a_k, d_k) = own(k)?;
        others = others.try_sub(&a_k.try_div(&d_k)?)?;
    }
    Ok(a_c.try_div(&d_c.try_mul(&others)?)?)
}

/// Jet at `s = 0` of the system-time MGF `M_U(s - theta lambda_c) / M_U(-theta lambda_c)`.
pub fn system_time_mgf_jet(
    cfg: &SystemConfig,
    c: usize,
    order: usize,
) -> Result<Jet, AnalyticError> {
    cfg.check_source(c)?;
    system_time_jet_at(cfg, c, 0.0, order)
}

/// Jet at `s = 0` of the interdeparture MGF
/// `a_c / ((1 - a'_c)(1 - sum_{c' != c} a_{c'} / (1 - a'_{c'})))`.
pub fn interdeparture_mgf_jet(
    cfg: &SystemConfig,
    c: usize,
    order: usize,
) -> Result<Jet, AnalyticError> {
    interdeparture_mgf_jet_perturbed(cfg, c, order, Perturbation::None)
}

#[doc(hidden)]
pub fn interdeparture_mgf_jet_perturbed(
    cfg: &SystemConfig,
    c: usize,
    order: usize,
    perturbation: Perturbation,
) -> Result<Jet, AnalyticError> {
    cfg.check_source(c)?;
    interdeparture_jet_at(cfg, c, 0.0, order, perturbation)
}

/// PAoI MGF jet, `M_T(s) M_Y(s)`.
pub fn paoi_mgf_jet(cfg: &SystemConfig, c: usize, order: usize) -> Result<Jet, AnalyticError> {
    let t = system_time_mgf_jet(cfg, c, order)?;
    let y = interdeparture_mgf_jet(cfg, c, order)?;
    Ok(t.try_mul(&y)?)
}

/// AoI MGF jet `(M_A(s) - M_T(s)) / (s Ybar)`, of order `order - 1`.
pub fn aoi_mgf_jet(cfg: &SystemConfig, c: usize, order: usize) -> Result<Jet, AnalyticError> {
    let t = system_time_mgf_jet(cfg, c, order)?;
    let y = interdeparture_mgf_jet(cfg, c, order)?;
    aoi_from_parts(&t, &y)
}

fn aoi_from_parts(t: &Jet, y: &Jet) -> Result<Jet, AnalyticError> {
    let ybar = y.derivative_value(1)?;
    let a = t.try_mul(y)?;
    Ok(a.try_sub(t)?.deflate()?.scale(1.0 / ybar))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= MOMENT_CONSISTENCY_TOLERANCE * a.abs().max(b.abs())
}

/// Moments `m = 1..=max_order` of AoI and PAoI for source `c`.
///
/// Values come from the binomial formulas over system-time and interdeparture
/// moments; every value is also read directly off the AoI/PAoI jets and the two
/// must agree to [`MOMENT_CONSISTENCY_TOLERANCE`].
pub fn moments(cfg: &SystemConfig, c: usize, max_order: usize) -> Result<AoiMetrics, AnalyticError> {
    if max_order == 0 {
        return Err(AnalyticError::MomentOrder(max_order));
    }
    let order = max_order + 3;
    let t = system_time_mgf_jet(cfg, c, order)?;
    let y = interdeparture_mgf_jet(cfg, c, order)?;
    let et = t.derivatives();
    let ey = y.derivatives();
    let ybar = ey[1];

    let paoi_jet = t.try_mul(&y)?;
    let aoi_jet = aoi_from_parts(&t, &y)?;

    let paoi_binomial = |m: usize| -> f64 {
        (0..=m)
            .map(|i| binomial(m, i) * et[i] * ey[m - i])
            .sum()
    };

    let mut aoi_moments = Vec::with_capacity(max_order);
    let mut paoi_moments = Vec::with_capacity(max_order);
    for m in 1..=max_order {
        let paoi = paoi_binomial(m);
        let aoi = (paoi_binomial(m + 1) - et[m + 1]) / ((m + 1) as f64 * ybar);

        let paoi_direct = paoi_jet.derivative_value(m)?;
        let aoi_direct = aoi_jet.derivative_value(m)?;
        if !agree(paoi, paoi_direct) {
            return Err(AnalyticError::ConsistencyError {
                metric: "paoi",
                order: m,
                corollary: paoi,
                jet: paoi_direct,
            });
        }
        if !agree(aoi, aoi_direct) {
            return Err(AnalyticError::ConsistencyError {
                metric: "aoi",
                order: m,
                corollary: aoi,
                jet: aoi_direct,
            });
        }
        aoi_moments.push(aoi);
        paoi_moments.push(paoi);
    }
    Ok(AoiMetrics {
        source: c,
        aoi_moments,
        paoi_moments,
        mean_system_time: et[1],
        mean_interdeparture: ybar,
    })
}

/// [`moments`] for every source.
pub fn all_moments(cfg: &SystemConfig, max_order: usize) -> Result<Vec<AoiMetrics>, AnalyticError> {
    (0..cfg.sources()).map(|c| moments(cfg, c, max_order)).collect()
}

/// Sum over sources of the mean AoI.
pub fn sum_mean_aoi(cfg: &SystemConfig) -> Result<f64, AnalyticError> {
    Ok(all_moments(cfg, 1)?.iter().map(AoiMetrics::mean_aoi).sum())
}

/// Pointwise value of one of the four transforms at `s`.
pub fn mgf_point_eval(
    cfg: &SystemConfig,
    c: usize,
    s: f64,
    which: Transform,
) -> Result<f64, AnalyticError> {
    cfg.check_source(c)?;
    if s == 0.0 {
        return Ok(1.0);
    }
    let outside = |reason: String| AnalyticError::OutsideConvergenceRegion { s, reason };
    if !s.is_finite() {
        return Err(outside("s must be finite".into()));
    }
    let lambda = cfg.total_rate();
    if s >= lambda {
        return Err(outside(format!("s must be below the total arrival rate {lambda}")));
    }
    for k in 0..cfg.sources() {
        let rate = cfg.preemption_rate(k);
        if !cfg.service.in_mgf_domain(s - rate) {
            return Err(outside(format!(
                "service MGF undefined at s - theta*lambda_{} = {}",
                k + 1,
                s - rate
            )));
        }
        if rate > 0.0 && (s - rate).abs() < REMOVABLE_POINT_GUARD {
            return Err(outside(format!(
                "s coincides with theta*lambda_{} = {rate}",
                k + 1
            )));
        }
    }

    let order = 1;
    let t = system_time_jet_at(cfg, c, s, order)?;
    if which == Transform::SystemTime {
        return Ok(t.value());
    }

    let mut others = 1.0;
    let mut own = (0.0, 0.0);
    for k in 0..cfg.sources() {
        let a = a_jet(cfg, k, s, order)?.value();
        let d = 1.0 - a_prime_jet(cfg, k, s, order)?.value();
        if d <= 0.0 {
            return Err(outside(format!("1 - a'_{} = {d} is not positive", k + 1)));
        }
        if k == c {
            own = (a, d);
        } else {
            others -= a / d;
        }
    }
    if others <= 0.0 {
        return Err(outside(format!(
            "interdeparture denominator 1 - sum a/(1 - a') = {others} is not positive"
        )));
    }
    let y = own.0 / (own.1 * others);
    match which {
        Transform::Interdeparture => Ok(y),
        Transform::Paoi => Ok(t.value() * y),
        Transform::Aoi => {
            let ybar = interdeparture_mgf_jet(cfg, c, 2)?.derivative_value(1)?;
            Ok(t.value() * (y - 1.0) / (s * ybar))
        }
        Transform::SystemTime => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> ServiceDistribution {
        ServiceDistribution::exponential(1.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(vec![], 0.5, exp1()).is_err());
        assert!(SystemConfig::new(vec![1.0, -1.0], 0.5, exp1()).is_err());
        assert!(SystemConfig::new(vec![1.0], 1.5, exp1()).is_err());
        assert!(SystemConfig::new(vec![1.0], 1.0, exp1()).is_ok());
        let cfg = SystemConfig::new(vec![1.0], 0.0, exp1()).unwrap();
        assert!(matches!(
            moments(&cfg, 3, 1),
            Err(AnalyticError::SourceOutOfRange { .. })
        ));
    }

    #[test]
    fn theta_zero_system_time_is_service_time() {
        let dist = ServiceDistribution::gamma(2.0, 3.0).unwrap();
        let cfg = SystemConfig::new(vec![1.0, 2.0], 0.0, dist).unwrap();
        let t = system_time_mgf_jet(&cfg, 1, 6).unwrap();
        assert_eq!(t, dist.mgf_jet(0.0, 6).unwrap());
    }

    #[test]
    fn single_source_preemptive_exponential() {
        // T ~ Exp(mu + lambda), Ybar = 2, mean AoI = 1/lambda + 1/mu
        let cfg = SystemConfig::new(vec![1.0], 1.0, exp1()).unwrap();
        let t = system_time_mgf_jet(&cfg, 0, 6).unwrap();
        let want = ServiceDistribution::exponential(2.0)
            .unwrap()
            .mgf_jet(0.0, 6)
            .unwrap();
        assert!(t.max_relative_diff(&want) < 1e-14);
        let y = interdeparture_mgf_jet(&cfg, 0, 6).unwrap();
        assert!((y.derivative_value(1).unwrap() - 2.0).abs() < 1e-13);
        let paoi = paoi_mgf_jet(&cfg, 0, 6).unwrap();
        assert!((paoi.derivative_value(1).unwrap() - 2.5).abs() < 1e-13);
        let aoi = aoi_mgf_jet(&cfg, 0, 6).unwrap();
        assert_eq!(aoi.order(), 5);
        assert!((aoi.value() - 1.0).abs() < 1e-12);
        assert!((aoi.derivative_value(1).unwrap() - 2.0).abs() < 1e-12);
        let m = moments(&cfg, 0, 4).unwrap();
        assert!((m.mean_aoi() - 2.0).abs() < 1e-12);
        assert!((m.mean_paoi() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn single_source_mean_aoi_for_other_rates() {
        for &(lambda, mu) in &[(0.5, 2.0), (3.0, 1.5)] {
            let cfg = SystemConfig::new(
                vec![lambda],
                1.0,
                ServiceDistribution::exponential(mu).unwrap(),
            )
            .unwrap();
            let m = moments(&cfg, 0, 1).unwrap();
            assert!((m.mean_aoi() - (1.0 / lambda + 1.0 / mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_of_all_transforms() {
        let cfg = SystemConfig::new(
            vec![2.0, 6.0, 0.5],
            0.28,
            ServiceDistribution::lognormal(-1.0, 1.0).unwrap(),
        )
        .unwrap();
        for c in 0..3 {
            assert_eq!(system_time_mgf_jet(&cfg, c, 8).unwrap().value(), 1.0);
            assert!((interdeparture_mgf_jet(&cfg, c, 8).unwrap().value() - 1.0).abs() < 1e-10);
            assert!((paoi_mgf_jet(&cfg, c, 8).unwrap().value() - 1.0).abs() < 1e-10);
            assert!((aoi_mgf_jet(&cfg, c, 8).unwrap().value() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn theta_continuity_at_one() {
        let dist = ServiceDistribution::lognormal(-1.0, 1.0).unwrap();
        let a = SystemConfig::new(vec![2.0, 6.0], 1.0, dist).unwrap();
        let b = a.with_theta(1.0 - 1e-9).unwrap();
        let ma = moments(&a, 0, 1).unwrap().mean_aoi();
        let mb = moments(&b, 0, 1).unwrap().mean_aoi();
        assert!((ma - mb).abs() < 1e-6 * ma);
    }

    #[test]
    fn point_evaluation() {
        let cfg = SystemConfig::new(vec![1.0], 1.0, exp1()).unwrap();
        for which in [Transform::Aoi, Transform::Paoi, Transform::SystemTime, Transform::Interdeparture] {
            assert_eq!(mgf_point_eval(&cfg, 0, 0.0, which).unwrap(), 1.0);
        }
        let v = mgf_point_eval(&cfg, 0, -1.0, Transform::SystemTime).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-14);
        // near-zero s approaches the normalization smoothly
        let near = mgf_point_eval(&cfg, 0, -1e-6, Transform::Aoi).unwrap();
        assert!((near - 1.0).abs() < 1e-5);
        assert!(matches!(
            mgf_point_eval(&cfg, 0, 1.0, Transform::Aoi),
            Err(AnalyticError::OutsideConvergenceRegion { .. })
        ));
        let ln = SystemConfig::new(
            vec![1.0, 1.0],
            0.5,
            ServiceDistribution::lognormal(-1.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(mgf_point_eval(&ln, 0, 0.6, Transform::Paoi).is_err());
        let err = mgf_point_eval(&cfg, 0, 1.0 + 1e-12, Transform::Paoi).unwrap_err();
        assert!(matches!(err, AnalyticError::OutsideConvergenceRegion { .. }));
    }

    #[test]
    fn point_evaluation_matches_jet_taylor_series() {
        let cfg = SystemConfig::new(
            vec![1.0, 2.0],
            0.4,
            ServiceDistribution::gamma(2.0, 3.0).unwrap(),
        )
        .unwrap();
        let s: f64 = -0.01;
        for (which, jet) in [
            (Transform::Interdeparture, interdeparture_mgf_jet(&cfg, 0, 10).unwrap()),
            (Transform::Paoi, paoi_mgf_jet(&cfg, 0, 10).unwrap()),
            (Transform::Aoi, aoi_mgf_jet(&cfg, 0, 10).unwrap()),
        ] {
            let series: f64 = jet
                .coeffs()
                .iter()
                .enumerate()
                .map(|(k, c)| c * s.powi(k as i32))
                .sum();
            let point = mgf_point_eval(&cfg, 0, s, which).unwrap();
            assert!((series - point).abs() < 1e-12, "{which:?}: {series} vs {point}");
        }
    }

    #[test]
    fn flipped_a_prime_changes_interdeparture() {
        let cfg = SystemConfig::new(vec![1.0, 1.0], 0.5, exp1()).unwrap();
        let good = interdeparture_mgf_jet(&cfg, 0, 4).unwrap();
        let bad =
            interdeparture_mgf_jet_perturbed(&cfg, 0, 4, Perturbation::FlipAPrimeSign).unwrap();
        assert!(good.max_relative_diff(&bad) > 1e-3);
    }

    #[test]
    fn a_prime_agrees_with_literal_quotient_when_well_conditioned() {
        // the literal quotient theta*lambda*(1 - M_U(s - theta*lambda))/(theta*lambda - s)
        // is accurate when theta*lambda is of order one
        let cfg = SystemConfig::new(
            vec![3.0],
            0.8,
            ServiceDistribution::lognormal(-1.0, 1.0).unwrap(),
        )
        .unwrap();
        let rate = cfg.preemption_rate(0);
        let order = 6;
        let stable = a_prime_jet(&cfg, 0, 0.0, order).unwrap();
        let num = shifted_service_jet(&cfg, 0, 0.0, order)
            .unwrap()
            .rsub_scalar(1.0)
            .scale(rate);
        let literal = num.try_div(&Jet::affine(0.0, order, rate, -1.0)).unwrap();
        assert!(stable.max_relative_diff(&literal) < 1e-9);
    }
}
