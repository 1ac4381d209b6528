//! Forward-mode automatic differentiation with dense multi-partials.
//!
//! Every numeric routine on the gradient path (curve evaluation, the
//! simulator, the loss) is written against the [`Scalar`] trait so it runs
//! unchanged on plain `f64` and on [`Dual`]. A `Dual` carries its value and
//! the partial derivatives with respect to every free parameter; constants
//! keep an empty partials vector and never allocate.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Numeric failure inside a differentiated computation.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{primitive}`{}", step_suffix(*.step))]
pub struct AdError {
    pub primitive: &'static str,
    pub kind: AdErrorKind,
    /// Simulation step index, when the failure happened inside a step.
    pub step: Option<usize>,
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(m) => format!(" at step {m}"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdErrorKind {
    DivisionByZero,
    NegativeSqrt(f64),
    NonFinite,
}

impl fmt::Display for AdErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdErrorKind::DivisionByZero => write!(f, "division by zero"),
            AdErrorKind::NegativeSqrt(v) => write!(f, "sqrt of negative value {v}"),
            AdErrorKind::NonFinite => write!(f, "non-finite value"),
        }
    }
}

impl AdError {
    pub fn new(primitive: &'static str, kind: AdErrorKind) -> Self {
        Self {
            primitive,
            kind,
            step: None,
        }
    }

    /// Attaches a step index unless one is already recorded.
    pub fn at_step(mut self, step: usize) -> Self {
        self.step.get_or_insert(step);
        self
    }
}

/// The scalar interface shared by `f64` and [`Dual`].
///
/// Non-smooth primitives follow fixed derivative rules: `sign` and `floor`
/// have zero derivative, `abs` has subgradient 0 at 0, and `clamp` passes
/// the derivative through strictly inside its bounds and zeroes it at or
/// beyond them. Comparisons branch on [`Scalar::value`].
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;

    fn checked_div(&self, rhs: &Self) -> Result<Self, AdError>;
    fn checked_sqrt(&self) -> Result<Self, AdError>;
    fn exp(&self) -> Self;
    fn abs(&self) -> Self;
    fn sign(&self) -> Self;
    fn floor(&self) -> Self;
    fn clamp(&self, lo: f64, hi: f64) -> Self;

    /// `Σ weights[i] * terms[i]`, accumulated left to right from zero.
    fn lincomb(weights: &[f64], terms: &[Self]) -> Self {
        let mut acc = Self::constant(0.0);
        for (w, t) in weights.iter().zip(terms) {
            acc = acc + t.clone() * *w;
        }
        acc
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

fn sign_f64(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }

    fn value(&self) -> f64 {
        *self
    }

    fn checked_div(&self, rhs: &Self) -> Result<Self, AdError> {
        if *rhs == 0.0 {
            return Err(AdError::new("div", AdErrorKind::DivisionByZero));
        }
        Ok(self / rhs)
    }

    fn checked_sqrt(&self) -> Result<Self, AdError> {
        if *self < 0.0 {
            return Err(AdError::new("sqrt", AdErrorKind::NegativeSqrt(*self)));
        }
        Ok(f64::sqrt(*self))
    }

    fn exp(&self) -> Self {
        f64::exp(*self)
    }

    fn abs(&self) -> Self {
        f64::abs(*self)
    }

    fn sign(&self) -> Self {
        sign_f64(*self)
    }

    fn floor(&self) -> Self {
        f64::floor(*self)
    }

    fn clamp(&self, lo: f64, hi: f64) -> Self {
        if *self <= lo {
            lo
        } else if *self >= hi {
            hi
        } else {
            *self
        }
    }

    fn lincomb(weights: &[f64], terms: &[Self]) -> Self {
        let mut acc = 0.0;
        for (w, t) in weights.iter().zip(terms) {
            acc += t * w;
        }
        acc
    }
}

/// Dual number with a dense gradient. An empty `partials` vector is the
/// zero gradient.
#[derive(Clone, PartialEq)]
pub struct Dual {
    value: f64,
    partials: Vec<f64>,
}

impl fmt::Debug for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({}, {:?})", self.value, self.partials)
    }
}

impl Dual {
    /// Independent variable `index` out of `count`.
    pub fn variable(value: f64, index: usize, count: usize) -> Self {
        let mut partials = vec![0.0; count];
        partials[index] = 1.0;
        Self { value, partials }
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials
    }

    /// Gradient padded to `count` entries.
    pub fn gradient(&self, count: usize) -> Vec<f64> {
        if self.partials.is_empty() {
            vec![0.0; count]
        } else {
            self.partials.clone()
        }
    }

    fn scaled(value: f64, partials: &[f64], factor: f64) -> Self {
        Self {
            value,
            partials: partials.iter().map(|p| p * factor).collect(),
        }
    }

    // a' * fa + b' * fb
    fn combine(value: f64, a: &[f64], fa: f64, b: &[f64], fb: f64) -> Self {
        let partials = match (a.is_empty(), b.is_empty()) {
            (true, true) => Vec::new(),
            (false, true) => a.iter().map(|x| x * fa).collect(),
            (true, false) => b.iter().map(|x| x * fb).collect(),
            (false, false) => {
                assert_eq!(a.len(), b.len(), "dual partials length mismatch");
                a.iter().zip(b).map(|(x, y)| x * fa + y * fb).collect()
            }
        };
        Self { value, partials }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        let value = self.value + rhs.value;
        if rhs.partials.is_empty() {
            return Dual { value, ..self };
        }
        if self.partials.is_empty() {
            return Dual { value, ..rhs };
        }
        let mut partials = self.partials;
        assert_eq!(partials.len(), rhs.partials.len(), "dual partials length mismatch");
        for (p, q) in partials.iter_mut().zip(&rhs.partials) {
            *p += q;
        }
        Dual { value, partials }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        let value = self.value - rhs.value;
        if rhs.partials.is_empty() {
            return Dual { value, ..self };
        }
        if self.partials.is_empty() {
            return Dual {
                value,
                partials: rhs.partials.iter().map(|q| -q).collect(),
            };
        }
        let mut partials = self.partials;
        assert_eq!(partials.len(), rhs.partials.len(), "dual partials length mismatch");
        for (p, q) in partials.iter_mut().zip(&rhs.partials) {
            *p -= q;
        }
        Dual { value, partials }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::combine(
            self.value * rhs.value,
            &self.partials,
            rhs.value,
            &rhs.partials,
            self.value,
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(mut self) -> Dual {
        self.value = -self.value;
        for p in &mut self.partials {
            *p = -*p;
        }
        self
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: f64) -> Dual {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(mut self, rhs: f64) -> Dual {
        self.value *= rhs;
        for p in &mut self.partials {
            *p *= rhs;
        }
        self
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual {
            value: v,
            partials: Vec::new(),
        }
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn checked_div(&self, rhs: &Self) -> Result<Self, AdError> {
        if rhs.value == 0.0 {
            return Err(AdError::new("div", AdErrorKind::DivisionByZero));
        }
        let value = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        Ok(Dual::combine(
            value,
            &self.partials,
            inv,
            &rhs.partials,
            -value * inv,
        ))
    }

    fn checked_sqrt(&self) -> Result<Self, AdError> {
        if self.value < 0.0 {
            return Err(AdError::new("sqrt", AdErrorKind::NegativeSqrt(self.value)));
        }
        let value = self.value.sqrt();
        if self.partials.is_empty() {
            return Ok(Dual::constant(value));
        }
        if value == 0.0 {
            return Err(AdError::new("sqrt", AdErrorKind::DivisionByZero));
        }
        Ok(Dual::scaled(value, &self.partials, 0.5 / value))
    }

    fn exp(&self) -> Self {
        let value = self.value.exp();
        Dual::scaled(value, &self.partials, value)
    }

    fn abs(&self) -> Self {
        Dual::scaled(self.value.abs(), &self.partials, sign_f64(self.value))
    }

    fn sign(&self) -> Self {
        Dual::constant(sign_f64(self.value))
    }

    fn floor(&self) -> Self {
        Dual::constant(self.value.floor())
    }

    fn clamp(&self, lo: f64, hi: f64) -> Self {
        if self.value <= lo {
            Dual::constant(lo)
        } else if self.value >= hi {
            Dual::constant(hi)
        } else {
            self.clone()
        }
    }

    fn lincomb(weights: &[f64], terms: &[Self]) -> Self {
        let mut value = 0.0;
        let mut partials: Vec<f64> = Vec::new();
        for (w, t) in weights.iter().zip(terms) {
            value += t.value * w;
            if t.partials.is_empty() {
                continue;
            }
            if partials.is_empty() {
                partials = vec![0.0; t.partials.len()];
            }
            for (p, q) in partials.iter_mut().zip(&t.partials) {
                *p += q * w;
            }
        }
        Dual { value, partials }
    }
}

/// A scalar objective that can be evaluated on any [`Scalar`].
pub trait Objective {
    type Error: From<AdError>;

    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, Self::Error>;
}

/// Value and gradient of `f` at `theta` via forward mode.
pub fn grad<F: Objective + ?Sized>(f: &F, theta: &[f64]) -> Result<(f64, Vec<f64>), F::Error> {
    let n = theta.len();
    let vars: Vec<Dual> = theta
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::variable(v, i, n))
        .collect();
    let out = f.eval(&vars)?;
    if !out.value.is_finite() {
        return Err(AdError::new("output", AdErrorKind::NonFinite).into());
    }
    let gradient = out.gradient(n);
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(AdError::new("gradient", AdErrorKind::NonFinite).into());
    }
    Ok((out.value, gradient))
}

/// Comparison of the forward-mode gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub value: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

impl GradientReport {
    /// Components whose relative error exceeds `tol`; NaN counts as a failure.
    pub fn failures(&self, tol: f64) -> Vec<usize> {
        self.rel_errors
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_nan() || **e >= tol)
            .map(|(i, _)| i)
            .collect()
    }
}

const REL_ERROR_FLOOR: f64 = 1e-8;

/// Central-difference gradient check. Evaluation failures at the probe
/// points become `NaN` entries rather than errors, so a kink or an
/// infeasible neighbourhood shows up as a flagged component.
pub fn check_gradient<F: Objective + ?Sized>(
    f: &F,
    theta: &[f64],
    h: f64,
) -> Result<GradientReport, F::Error> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let (value, analytic) = grad(f, theta)?;
    let mut probe = theta.to_vec();
    let mut numeric = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = f.eval::<f64>(&probe);
        probe[i] = theta[i] - h;
        let minus = f.eval::<f64>(&probe);
        probe[i] = theta[i];
        numeric.push(match (plus, minus) {
            (Ok(p), Ok(m)) => (p - m) / (2.0 * h),
            _ => f64::NAN,
        });
    }
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR))
        .collect();
    let max_rel_error = rel_errors.iter().cloned().fold(0.0, |m: f64, e| {
        if e.is_nan() {
            f64::NAN
        } else {
            m.max(e)
        }
    });
    let mean_rel_error = rel_errors.iter().sum::<f64>() / rel_errors.len().max(1) as f64;
    Ok(GradientReport {
        value,
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        mean_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SumSquares;
    impl Objective for SumSquares {
        type Error = AdError;

        fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, AdError> {
            Ok(theta
                .iter()
                .fold(S::constant(0.0), |acc, t| acc + t.square()))
        }
    }

    struct Clamped;
    impl Objective for Clamped {
        type Error = AdError;

        fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, AdError> {
            Ok(theta[0].clamp(0.0, 1.0))
        }
    }

    struct SignKink;
    impl Objective for SignKink {
        type Error = AdError;

        fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, AdError> {
            Ok(theta[0].sign() + theta[1].square())
        }
    }

    struct Quotient;
    impl Objective for Quotient {
        type Error = AdError;

        fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, AdError> {
            let num = theta[0].clone() * theta[1].clone() + theta[0].exp();
            let den = theta[1].square() + 1.0;
            num.checked_div(&den)?.checked_sqrt()
        }
    }

    #[test]
    fn sum_of_squares() {
        let (v, g) = grad(&SumSquares, &[1.0, 2.0]).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g, vec![2.0, 4.0]);
    }

    #[test]
    fn clamp_rule() {
        assert_eq!(grad(&Clamped, &[0.5]).unwrap().1, vec![1.0]);
        assert_eq!(grad(&Clamped, &[1.5]).unwrap().1, vec![0.0]);
        assert_eq!(grad(&Clamped, &[1.0]).unwrap().1, vec![0.0]);
    }

    #[test]
    fn quadratic_check_is_tight() {
        let r = check_gradient(&SumSquares, &[0.3, -1.7, 2.2], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn sign_kink_is_flagged_not_asserted() {
        let r = check_gradient(&SignKink, &[0.0, 0.5], 1e-6).unwrap();
        assert_eq!(r.failures(1e-4), vec![0]);
    }

    #[test]
    fn value_matches_plain_evaluation_bitwise() {
        let theta = [0.7, -0.3];
        let plain = Quotient.eval::<f64>(&theta).unwrap();
        let (v, _) = grad(&Quotient, &theta).unwrap();
        assert_eq!(v.to_bits(), plain.to_bits());
        let r = check_gradient(&Quotient, &theta, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn domain_errors_name_the_primitive() {
        struct Bad;
        impl Objective for Bad {
        type Error = AdError;

            fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, AdError> {
                (theta[0].clone() - 5.0).checked_sqrt().map_err(|e| e.at_step(3))
            }
        }
        let err = grad(&Bad, &[1.0]).unwrap_err();
        assert_eq!(err.primitive, "sqrt");
        assert_eq!(err.step, Some(3));
        assert!(err.to_string().contains("at step 3"));

        struct DivZero;
        impl Objective for DivZero {
        type Error = AdError;

            fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S, AdError> {
                theta[0].checked_div(&S::constant(0.0))
            }
        }
        assert_eq!(grad(&DivZero, &[1.0]).unwrap_err().kind, AdErrorKind::DivisionByZero);
    }

    #[test]
    fn abs_subgradient_zero_at_origin() {
        let x = Dual::variable(0.0, 0, 1);
        assert_eq!(x.abs().partials(), &[0.0]);
        let y = Dual::variable(-2.0, 0, 1);
        assert_eq!(y.abs().partials(), &[-1.0]);
    }

    #[test]
    fn lincomb_matches_fold() {
        let xs: Vec<Dual> = (0..4).map(|i| Dual::variable(i as f64 * 0.3, i, 4)).collect();
        let w = [0.1, 0.2, 0.3, 0.4];
        let fast = Dual::lincomb(&w, &xs);
        let mut slow = Dual::constant(0.0);
        for (wi, x) in w.iter().zip(&xs) {
            slow = slow + x.clone() * *wi;
        }
        assert_eq!(fast.value(), slow.value());
        assert_eq!(fast.partials(), slow.partials());
    }
}
