//! Truncated Taylor series ("jets") of scalar functions.
//!
//! A [`Jet`] of order `K` stores the normalized Taylor coefficients
//! `f^(k)(s0) / k!` for `k = 0..=K` around a center `s0`. Products and
//! quotients are Cauchy convolutions truncated at order `K`, which lets the
//! composite MGF expressions of the analytic engine be differentiated exactly
//! without symbolic manipulation.

use thiserror::Error;

/// Default truncation order.
pub const DEFAULT_ORDER: usize = 8;

/// Constant terms below this magnitude are refused as divisors.
pub const DIVISION_FLOOR: f64 = 1e-13;

/// Relative tolerance used by [`Jet::deflate`] on the vanishing constant term.
pub const DEFLATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("jet mismatch: center {left_center} order {left_order} vs center {right_center} order {right_order}")]
    Mismatch {
        left_center: f64,
        left_order: usize,
        right_center: f64,
        right_order: usize,
    },
    #[error("division by a jet with constant term {constant:e} (floor {floor:e})")]
    DivisionBySingularJet { constant: f64, floor: f64 },
    #[error("cannot deflate: constant term {constant:e} exceeds tolerance {tolerance:e}")]
    NonVanishingConstantTerm { constant: f64, tolerance: f64 },
    #[error("derivative order {requested} outside 0..={order}")]
    OrderOutOfRange { requested: usize, order: usize },
    #[error("deflation requires a jet centered at 0, got {center}")]
    NotCenteredAtZero { center: f64 },
    #[error("invalid jet: {0}")]
    Invalid(&'static str),
}

/// Truncated Taylor expansion `sum_k coeffs[k] (s - center)^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    center: f64,
    coeffs: Vec<f64>,
}

impl Jet {
    /// Builds a jet from normalized coefficients. Order is `coeffs.len() - 1`.
    pub fn new(center: f64, coeffs: Vec<f64>) -> Result<Self, JetError> {
        if coeffs.len() < 2 {
            return Err(JetError::Invalid("a jet needs at least two coefficients"));
        }
        if !center.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(JetError::Invalid("non-finite coefficient or center"));
        }
        Ok(Self { center, coeffs })
    }

    pub fn constant(center: f64, order: usize, value: f64) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = value;
        Self { center, coeffs }
    }

    pub fn zero(center: f64, order: usize) -> Self {
        Self::constant(center, order, 0.0)
    }

    pub fn one(center: f64, order: usize) -> Self {
        Self::constant(center, order, 1.0)
    }

    /// The identity function `s` expanded around `center`.
    pub fn variable(center: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = center;
        coeffs[1] = 1.0;
        Self { center, coeffs }
    }

    /// `a + b s` as a jet around `center` (the affine map is exact at any center).
    pub fn affine(center: f64, order: usize, intercept: f64, slope: f64) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = intercept + slope * center;
        coeffs[1] = slope;
        Self { center, coeffs }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k]
    }

    /// Value of the expanded function at the center.
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Same coefficients, relabelled as an expansion around `center`.
    ///
    /// Used when `g(s) = f(s + shift)`: the Taylor coefficients of `g` at `s0`
    /// are those of `f` at `s0 + shift`.
    pub fn recentered(&self, center: f64) -> Self {
        Self {
            center,
            coeffs: self.coeffs.clone(),
        }
    }

    /// Drops coefficients above `order`.
    pub fn truncated(&self, order: usize) -> Self {
        let keep = (order + 1).min(self.coeffs.len());
        Self {
            center: self.center,
            coeffs: self.coeffs[..keep].to_vec(),
        }
    }

    fn check(&self, other: &Jet) -> Result<(), JetError> {
        if self.center != other.center || self.coeffs.len() != other.coeffs.len() {
            return Err(JetError::Mismatch {
                left_center: self.center,
                left_order: self.order(),
                right_center: other.center,
                right_order: other.order(),
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check(other)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn try_sub(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check(other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        Jet {
            center: self.center,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Jet {
        Jet {
            center: self.center,
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    pub fn add_scalar(&self, v: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += v;
        out
    }

    /// `v - self`.
    pub fn rsub_scalar(&self, v: f64) -> Jet {
        let mut out = self.scale(-1.0);
        out.coeffs[0] += v;
        out
    }

    /// Cauchy product truncated at the common order.
    pub fn try_mul(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check(other)?;
        let n = self.coeffs.len();
        let coeffs = (0..n)
            .map(|k| (0..=k).map(|j| self.coeffs[j] * other.coeffs[k - j]).sum())
            .collect();
        Ok(Jet {
            center: self.center,
            coeffs,
        })
    }

    /// Cauchy quotient `self / other`.
    pub fn try_div(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check(other)?;
        let b0 = other.coeffs[0];
        if b0.abs() < DIVISION_FLOOR {
            return Err(JetError::DivisionBySingularJet {
                constant: b0,
                floor: DIVISION_FLOOR,
            });
        }
        let n = self.coeffs.len();
        let mut q = Vec::with_capacity(n);
        for k in 0..n {
            let acc: f64 = (1..=k).map(|j| other.coeffs[j] * q[k - j]).sum();
            q.push((self.coeffs[k] - acc) / b0);
        }
        Ok(Jet {
            center: self.center,
            coeffs: q,
        })
    }

    /// `1 / self`.
    pub fn recip(&self) -> Result<Jet, JetError> {
        Jet::one(self.center, self.order()).try_div(self)
    }

    /// Taylor series of `f(s) / s` for a jet at `s = 0` whose constant term vanishes.
    ///
    /// The result has order `K - 1`.
    pub fn deflate(&self) -> Result<Jet, JetError> {
        if self.center != 0.0 {
            return Err(JetError::NotCenteredAtZero {
                center: self.center,
            });
        }
        if self.order() < 2 {
            return Err(JetError::Invalid("deflation needs order >= 2"));
        }
        let norm = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let tolerance = DEFLATE_TOLERANCE * norm.max(1.0);
        if self.coeffs[0].abs() > tolerance {
            return Err(JetError::NonVanishingConstantTerm {
                constant: self.coeffs[0],
                tolerance,
            });
        }
        Ok(Jet {
            center: 0.0,
            coeffs: self.coeffs[1..].to_vec(),
        })
    }

    /// `f^(k)(center) = k! * coeffs[k]`.
    pub fn derivative_value(&self, k: usize) -> Result<f64, JetError> {
        if k > self.order() {
            return Err(JetError::OrderOutOfRange {
                requested: k,
                order: self.order(),
            });
        }
        Ok(factorial(k) * self.coeffs[k])
    }

    /// All derivatives `f^(k)(center)` for `k = 0..=K`.
    pub fn derivatives(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| factorial(k) * c)
            .collect()
    }

    /// Largest per-coefficient difference relative to `max(1, |other_k|)`.
    pub fn max_relative_diff(&self, other: &Jet) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(c: &[f64]) -> Jet {
        Jet::new(0.0, c.to_vec()).unwrap()
    }

    #[test]
    fn linear_ops() {
        assert_eq!(j(&[1.0, 2.0]).try_add(&j(&[3.0, 4.0])).unwrap(), j(&[4.0, 6.0]));
        let a = j(&[1.5, -2.0, 7.0]);
        assert_eq!(a.try_sub(&a).unwrap(), Jet::zero(0.0, 2));
        assert_eq!(j(&[1.0, 1.0, 1.0]).scale(2.0), j(&[2.0, 2.0, 2.0]));
    }

    #[test]
    fn products() {
        let p = j(&[1.0, 1.0, 0.0]).try_mul(&j(&[1.0, -1.0, 0.0])).unwrap();
        assert_eq!(p, j(&[1.0, 0.0, -1.0]));
        let a = j(&[0.3, -1.0, 2.5, 4.0]);
        assert_eq!(a.try_mul(&Jet::one(0.0, 3)).unwrap(), a);
        let s = Jet::variable(0.0, 2);
        assert_eq!(s.try_mul(&s).unwrap(), j(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn quotients() {
        let g = Jet::one(0.0, 5)
            .try_div(&j(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(g.coeffs(), &[1.0; 6]);
        assert_eq!(g.derivative_value(3).unwrap(), 6.0);
        let a = j(&[2.0, 0.5, -3.0, 1.0]);
        let q = a.try_div(&a).unwrap();
        assert!(q.max_relative_diff(&Jet::one(0.0, 3)) < 1e-15);
    }

    #[test]
    fn singular_division_is_refused() {
        let err = j(&[1.0, 1.0]).try_div(&j(&[1e-14, 1.0])).unwrap_err();
        assert!(matches!(err, JetError::DivisionBySingularJet { .. }));
    }

    #[test]
    fn mismatch_is_an_error() {
        let a = j(&[1.0, 2.0]);
        let b = Jet::new(0.5, vec![1.0, 2.0]).unwrap();
        assert!(matches!(a.try_add(&b), Err(JetError::Mismatch { .. })));
        assert!(matches!(a.try_mul(&j(&[1.0, 2.0, 3.0])), Err(JetError::Mismatch { .. })));
    }

    #[test]
    fn deflation() {
        assert_eq!(j(&[0.0, 2.0, 3.0]).deflate().unwrap(), j(&[2.0, 3.0]));
        let a = j(&[0.7, -0.2, 1.1, 0.4]);
        let sa = Jet::variable(0.0, 3).try_mul(&a).unwrap();
        assert_eq!(sa.deflate().unwrap(), a.truncated(2));
        assert!(matches!(
            j(&[1e-3, 1.0, 1.0]).deflate(),
            Err(JetError::NonVanishingConstantTerm { .. })
        ));
    }

    #[test]
    fn deflate_expm1() {
        // (e^s - 1)/s has coefficients 1/(k+1)!
        let mut c = vec![0.0];
        c.extend((1..=7).map(|k| 1.0 / factorial(k)));
        let d = j(&c).deflate().unwrap();
        for (k, v) in d.coeffs().iter().enumerate() {
            assert!((v - 1.0 / factorial(k + 1)).abs() < 1e-16);
        }
    }

    #[test]
    fn derivative_values() {
        assert_eq!(j(&[1.0, 1.0, 0.5]).derivative_value(2).unwrap(), 1.0);
        assert_eq!(j(&[4.2, 1.0]).derivative_value(0).unwrap(), 4.2);
        assert!(j(&[4.2, 1.0]).derivative_value(2).is_err());
    }

    #[test]
    fn affine_at_offset_center() {
        let a = Jet::affine(2.0, 3, 5.0, -1.0);
        assert_eq!(a.coeffs(), &[3.0, -1.0, 0.0, 0.0]);
    }
}
