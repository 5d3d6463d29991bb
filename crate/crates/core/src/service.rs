//! Service-time laws.
//!
//! Every analytic formula consumes the service MGF `M_U(t) = E[e^{tU}]` at
//! non-positive (shifted) arguments, either pointwise or as a jet. Exponential,
//! Gamma and Deterministic laws use closed forms; the log-normal law uses
//! Gauss-Hermite quadrature in the standard-normal variable with node doubling.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

use crate::jet::{factorial, Jet};
use crate::quadrature::{self, hermite_level, hermite_levels};

/// Relative change between successive Gauss-Hermite levels accepted as converged.
pub const QUADRATURE_TOLERANCE: f64 = 1e-9;

/// Relative safety margin kept between an expansion point and an MGF pole.
pub const POLE_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("invalid service parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("argument {t} outside the MGF domain (must be {bound})")]
    MgfDomainError { t: f64, bound: String },
    #[error("quadrature did not converge with {nodes} Gauss-Hermite nodes")]
    ConvergenceError { nodes: usize },
    #[error("the deterministic law has no density")]
    UnsupportedDensity,
}

/// Distribution of the i.i.d. service time `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServiceDistribution {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Deterministic { value: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { location: f64, scale: f64 },
}

impl ServiceDistribution {
    pub fn exponential(rate: f64) -> Result<Self, ServiceError> {
        Self::Exponential { rate }.validated()
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self, ServiceError> {
        Self::Gamma { shape, rate }.validated()
    }

    pub fn deterministic(value: f64) -> Result<Self, ServiceError> {
        Self::Deterministic { value }.validated()
    }

    pub fn lognormal(location: f64, scale: f64) -> Result<Self, ServiceError> {
        Self::LogNormal { location, scale }.validated()
    }

    pub fn validated(self) -> Result<Self, ServiceError> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let positive = |name: &'static str, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ServiceError::InvalidParameter { name, value })
            }
        };
        match *self {
            Self::Exponential { rate } => positive("rate", rate),
            Self::Gamma { shape, rate } => {
                positive("shape", shape)?;
                positive("rate", rate)
            }
            Self::Deterministic { value } => positive("value", value),
            Self::LogNormal { location, scale } => {
                if !location.is_finite() {
                    return Err(ServiceError::InvalidParameter {
                        name: "location",
                        value: location,
                    });
                }
                positive("scale", scale)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::Deterministic { .. } => "deterministic",
            Self::LogNormal { .. } => "lognormal",
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, rate } => shape / rate,
            Self::Deterministic { value } => value,
            Self::LogNormal { location, scale } => (location + 0.5 * scale * scale).exp(),
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, Self::Deterministic { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            Self::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma")
                .sample(rng),
            Self::Deterministic { value } => value,
            Self::LogNormal { location, scale } => LogNormal::new(location, scale)
                .expect("validated lognormal")
                .sample(rng),
        }
    }

    pub fn pdf(&self, t: f64) -> Result<f64, ServiceError> {
        if t <= 0.0 {
            return match self {
                Self::Deterministic { .. } => Err(ServiceError::UnsupportedDensity),
                Self::Exponential { rate } if t == 0.0 => Ok(*rate),
                _ => Ok(0.0),
            };
        }
        Ok(match *self {
            Self::Exponential { rate } => rate * (-rate * t).exp(),
            Self::Gamma { shape, rate } => {
                (shape * rate.ln() + (shape - 1.0) * t.ln() - rate * t - ln_gamma(shape)).exp()
            }
            Self::Deterministic { .. } => return Err(ServiceError::UnsupportedDensity),
            Self::LogNormal { location, scale } => {
                let z = (t.ln() - location) / scale;
                (-0.5 * z * z).exp() / (t * scale * (2.0 * PI).sqrt())
            }
        })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t == f64::INFINITY {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            Self::Exponential { rate } => -(-rate * t).exp_m1(),
            Self::Gamma { shape, rate } => gamma_lr(shape, rate * t),
            Self::Deterministic { value } => {
                if t >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LogNormal { location, scale } => {
                0.5 * erfc(-(t.ln() - location) / (scale * SQRT_2))
            }
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    /// Upper limit on MGF arguments, as `(bound, inclusive)`.
    fn domain_bound(&self) -> (f64, bool) {
        match *self {
            Self::Exponential { rate } | Self::Gamma { rate, .. } => {
                (rate * (1.0 - POLE_MARGIN), false)
            }
            Self::Deterministic { .. } => (f64::INFINITY, false),
            Self::LogNormal { .. } => (0.0, true),
        }
    }

    /// Whether `t` lies in the region where MGF values and jets are defined.
    pub fn in_mgf_domain(&self, t: f64) -> bool {
        let (bound, inclusive) = self.domain_bound();
        t.is_finite() && (t < bound || (inclusive && t == bound))
    }

    pub fn check_mgf_domain(&self, t: f64) -> Result<(), ServiceError> {
        if self.in_mgf_domain(t) {
            return Ok(());
        }
        let (bound, inclusive) = self.domain_bound();
        Err(ServiceError::MgfDomainError {
            t,
            bound: format!("{} {bound}", if inclusive { "<=" } else { "<" }),
        })
    }

    /// `E[e^{tU}]`.
    pub fn mgf_point(&self, t: f64) -> Result<f64, ServiceError> {
        self.check_mgf_domain(t)?;
        if t == 0.0 {
            return Ok(1.0);
        }
        Ok(self.mgf_coeffs(t, 0)?[0])
    }

    /// Jet of `M_U` centered at `t0`, `coeffs[k] = E[U^k e^{t0 U}] / k!`.
    pub fn mgf_jet(&self, t0: f64, order: usize) -> Result<Jet, ServiceError> {
        self.check_mgf_domain(t0)?;
        let mut coeffs = self.mgf_coeffs(t0, order)?;
        if t0 == 0.0 {
            coeffs[0] = 1.0;
        }
        Ok(Jet::new(t0, coeffs).expect("finite mgf coefficients"))
    }

    fn mgf_coeffs(&self, t0: f64, order: usize) -> Result<Vec<f64>, ServiceError> {
        Ok(match *self {
            Self::Exponential { rate } => {
                let d = rate - t0;
                (0..=order).map(|k| rate / d.powi(k as i32 + 1)).collect()
            }
            Self::Gamma { shape, rate } => {
                let d = rate - t0;
                let mut c = (shape * (rate / d).ln()).exp();
                let mut out = Vec::with_capacity(order + 1);
                out.push(c);
                for k in 1..=order {
                    c *= (shape + k as f64 - 1.0) / (k as f64 * d);
                    out.push(c);
                }
                out
            }
            Self::Deterministic { value } => {
                let base = (t0 * value).exp();
                (0..=order)
                    .map(|k| base * value.powi(k as i32) / factorial(k))
                    .collect()
            }
            Self::LogNormal { location, scale } => {
                lognormal_expectations(location, scale, order, |ln_u, u, k| {
                    (k as f64 * ln_u + t0 * u - ln_factorial(k), 1.0)
                })?
            }
        })
    }

    /// Jet centered at `t0` of `G(t) = E[(e^{tU} - 1) / t] = int_0^inf e^{tv} P(U > v) dv`,
    /// i.e. `coeffs[k] = E[int_0^U v^k e^{t0 v} dv] / k!`.
    ///
    /// This is the divided difference `(M_U(t) - 1)/t` evaluated without
    /// cancellation; at `t0 = 0` it starts at `E[U]`.
    pub fn tail_transform_jet(&self, t0: f64, order: usize) -> Result<Jet, ServiceError> {
        self.check_mgf_domain(t0)?;
        let coeffs: Vec<f64> = match *self {
            Self::Exponential { rate } => {
                let d = rate - t0;
                (0..=order).map(|k| 1.0 / d.powi(k as i32 + 1)).collect()
            }
            Self::Gamma { shape, rate } => (0..=order)
                .map(|k| gamma_tail_coeff(shape, rate, t0, k))
                .collect(),
            Self::Deterministic { value } => (0..=order)
                .map(|k| value.powi(k as i32 + 1) * unit_exp_moment(k, -t0 * value) / factorial(k))
                .collect(),
            Self::LogNormal { location, scale } => {
                lognormal_expectations(location, scale, order, |ln_u, u, k| {
                    (
                        (k as f64 + 1.0) * ln_u - ln_factorial(k),
                        unit_exp_moment(k, -t0 * u),
                    )
                })?
            }
        };
        Ok(Jet::new(t0, coeffs).expect("finite tail-transform coefficients"))
    }

    /// `E[e^{t0 U}; U <= t]`, the unnormalized distribution function of the
    /// exponentially tilted law.
    pub fn partial_mgf(&self, t0: f64, t: f64) -> Result<f64, ServiceError> {
        self.check_mgf_domain(t0)?;
        if t <= 0.0 {
            return Ok(0.0);
        }
        Ok(match *self {
            Self::Exponential { rate } => {
                let d = rate - t0;
                rate * -(-d * t).exp_m1() / d
            }
            Self::Gamma { shape, rate } => {
                let d = rate - t0;
                (shape * (rate / d).ln()).exp() * gamma_lr(shape, d * t)
            }
            Self::Deterministic { value } => {
                if t >= value {
                    (t0 * value).exp()
                } else {
                    0.0
                }
            }
            Self::LogNormal { location, scale } => {
                let zt = ((t.ln() - location) / scale).min(40.0);
                if zt <= -40.0 {
                    return Ok(0.0);
                }
                let f = |z: f64| {
                    let u = (location + scale * z).exp();
                    (-0.5 * z * z + t0 * u).exp() / (2.0 * PI).sqrt()
                };
                quadrature::integrate(f, -40.0, zt, 1e-16, 1e-13).value
            }
        })
    }
}

/// `ln k!`
fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// `int_0^1 tau^k e^{-y tau} d tau`, stable for any real `y` of moderate size.
pub(crate) fn unit_exp_moment(k: usize, y: f64) -> f64 {
    let kf = k as f64;
    if y < 0.0 {
        // sum_n (-y)^n / (n! (k + n + 1)), all terms positive
        let x = -y;
        let mut term = 1.0; // x^n / n!
        let mut sum = 1.0 / (kf + 1.0);
        for n in 1..10_000 {
            term *= x / n as f64;
            let add = term / (kf + n as f64 + 1.0);
            sum += add;
            if add <= 1e-17 * sum {
                break;
            }
        }
        sum
    } else if y <= kf + 20.0 {
        // e^{-y} sum_n y^n k! / (k + n + 1)!, all terms positive
        let mut term = 1.0 / (kf + 1.0);
        let mut sum = term;
        for n in 1..10_000 {
            term *= y / (kf + n as f64 + 1.0);
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
        }
        (-y).exp() * sum
    } else {
        // k!/y^{k+1} (1 - P(Poisson(y) <= k))
        let ln_y = y.ln();
        let head: f64 = (0..=k)
            .map(|j| (-y + j as f64 * ln_y - ln_factorial(j)).exp())
            .sum();
        (ln_factorial(k) - (kf + 1.0) * ln_y).exp() * (1.0 - head)
    }
}

/// `E[U^{k+1} e^{y U}] / (k+1)!` for a Gamma(shape, rate) law.
fn gamma_scaled_moment(shape: f64, rate: f64, y: f64, j: usize) -> f64 {
    let d = rate - y;
    let mut c = (shape * (rate / d).ln()).exp();
    for i in 1..=j {
        c *= (shape + i as f64 - 1.0) / (i as f64 * d);
    }
    c
}

/// Tail-transform coefficient for Gamma: `(k+1) int_0^1 tau^k c_{k+1}(tau t0) d tau`.
fn gamma_tail_coeff(shape: f64, rate: f64, t0: f64, k: usize) -> f64 {
    if t0 == 0.0 {
        return gamma_scaled_moment(shape, rate, 0.0, k + 1);
    }
    let f = |tau: f64| tau.powi(k as i32) * gamma_scaled_moment(shape, rate, tau * t0, k + 1);
    (k as f64 + 1.0) * quadrature::integrate(f, 0.0, 1.0, 1e-300, 1e-14).value
}

/// Expectations over a log-normal law by Gauss-Hermite quadrature in `z`,
/// `U = exp(location + scale * sqrt(2) x)`.
///
/// `term(ln_u, u, k)` returns `(ln_factor, multiplier)` for coefficient `k`;
/// the node contribution is `w exp(ln_factor) multiplier / sqrt(pi)`. Each
/// coefficient is frozen at the first level whose change from the previous
/// level is below [`QUADRATURE_TOLERANCE`].
fn lognormal_expectations(
    location: f64,
    scale: f64,
    order: usize,
    term: impl Fn(f64, f64, usize) -> (f64, f64),
) -> Result<Vec<f64>, ServiceError> {
    let n = order + 1;
    let eval = |level: usize| -> Vec<f64> {
        let rule = hermite_level(level);
        let mut acc = vec![0.0; n];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            if w == 0.0 {
                continue;
            }
            let ln_w = w.ln();
            let ln_u = location + scale * SQRT_2 * x;
            let u = ln_u.exp();
            for (k, a) in acc.iter_mut().enumerate() {
                let (ln_f, mult) = term(ln_u, u, k);
                if mult != 0.0 {
                    *a += (ln_w + ln_f).exp() * mult;
                }
            }
        }
        let norm = PI.sqrt();
        acc.iter().map(|a| a / norm).collect()
    };

    let mut previous = eval(0);
    let mut result: Vec<Option<f64>> = vec![None; n];
    for level in 1..hermite_levels() {
        let current = eval(level);
        for k in 0..n {
            if result[k].is_none() {
                let diff = (current[k] - previous[k]).abs();
                if diff <= QUADRATURE_TOLERANCE * current[k].abs() || diff < f64::MIN_POSITIVE {
                    result[k] = Some(current[k]);
                }
            }
        }
        if result.iter().all(Option::is_some) {
            return Ok(result.into_iter().map(Option::unwrap).collect());
        }
        previous = current;
    }
    Err(ServiceError::ConvergenceError {
        nodes: quadrature::HERMITE_MAX_NODES,
    })
}
