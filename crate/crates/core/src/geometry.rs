//! Bezier curve evaluation in Bernstein form, hodograph derivatives,
//! curvature and per-interval arc length. Generic over [`Scalar`] so the
//! simulator can differentiate through it.

use thiserror::Error;

use crate::autodiff::{AdError, Scalar};

/// Highest supported curve order.
pub const MAX_ORDER: usize = 32;

/// Tangent-norm floor below which curvature is reported as degenerate.
pub const EPS_SPEED: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("curve parameter u = {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("a curve needs at least 2 control points, got {0}")]
    TooFewPoints(usize),
    #[error("curve order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooHigh(usize),
    #[error("interval {m} outside 0..{n}")]
    IntervalOutOfRange { m: usize, n: usize },
    #[error(transparent)]
    Numeric(#[from] AdError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    pub fn value(&self) -> crate::scenario::Vec2 {
        crate::scenario::Vec2::new(self.x.value(), self.y.value())
    }
}

/// Control points of a Bezier curve of order `len - 1`.
#[derive(Debug, Clone)]
pub struct CurveParams<S> {
    xs: Vec<S>,
    ys: Vec<S>,
}

const fn binomial_table() -> [[f64; MAX_ORDER + 1]; MAX_ORDER + 1] {
    let mut t = [[0.0; MAX_ORDER + 1]; MAX_ORDER + 1];
    let mut n = 0;
    while n <= MAX_ORDER {
        t[n][0] = 1.0;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0.0 };
            k += 1;
        }
        n += 1;
    }
    t
}

// Every entry is an integer below 2^53, so the table is exact.
static BINOMIAL: [[f64; MAX_ORDER + 1]; MAX_ORDER + 1] = binomial_table();

pub fn binomial(n: usize, k: usize) -> f64 {
    BINOMIAL[n][k]
}

/// Bernstein basis of order `n` at `u`.
fn bernstein(n: usize, u: f64) -> Vec<f64> {
    let v = 1.0 - u;
    (0..=n)
        .map(|i| binomial(n, i) * v.powi((n - i) as i32) * u.powi(i as i32))
        .collect()
}

impl<S: Scalar> CurveParams<S> {
    pub fn new(points: Vec<Point<S>>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        if points.len() - 1 > MAX_ORDER {
            return Err(GeometryError::OrderTooHigh(points.len() - 1));
        }
        let (xs, ys) = points.into_iter().map(|p| (p.x, p.y)).unzip();
        Ok(Self { xs, ys })
    }

    pub fn order(&self) -> usize {
        self.xs.len() - 1
    }

    fn combine(&self, weights: &[f64]) -> Point<S> {
        Point {
            x: S::lincomb(weights, &self.xs),
            y: S::lincomb(weights, &self.ys),
        }
    }

    /// Weights on the control points giving the first derivative.
    fn first_weights(&self, u: f64) -> Vec<f64> {
        let n = self.order();
        let lower = bernstein(n - 1, u);
        let nf = n as f64;
        (0..=n)
            .map(|j| {
                let left = if j >= 1 { lower[j - 1] } else { 0.0 };
                let right = if j < n { lower[j] } else { 0.0 };
                nf * (left - right)
            })
            .collect()
    }

    fn second_weights(&self, u: f64) -> Vec<f64> {
        let n = self.order();
        if n < 2 {
            return vec![0.0; n + 1];
        }
        let lower = bernstein(n - 2, u);
        let c = (n * (n - 1)) as f64;
        (0..=n)
            .map(|j| {
                let a = if j >= 2 { lower[j - 2] } else { 0.0 };
                let b = if j >= 1 && j - 1 <= n - 2 { lower[j - 1] } else { 0.0 };
                let d = if j <= n - 2 { lower[j] } else { 0.0 };
                c * (a - 2.0 * b + d)
            })
            .collect()
    }
}

fn check_u(u: f64) -> Result<(), GeometryError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(GeometryError::ParameterOutOfRange(u))
    }
}

pub fn bezier_point<S: Scalar>(c: &CurveParams<S>, u: f64) -> Result<Point<S>, GeometryError> {
    check_u(u)?;
    Ok(c.combine(&bernstein(c.order(), u)))
}

/// First and second derivatives with respect to `u`. The second derivative
/// is zero for linear curves.
/// `n` points evenly spaced in the curve parameter, endpoints included.
pub fn sample_curve(ctrl: &[crate::scenario::Vec2], n: usize) -> Result<Vec<crate::scenario::Vec2>, GeometryError> {
    let c = CurveParams::new(ctrl.iter().map(|p| Point::new(p.x, p.y)).collect())?;
    (0..n)
        .map(|i| {
            let u = if n < 2 { 0.0 } else { i as f64 / (n - 1) as f64 };
            bezier_point(&c, u).map(|p| p.value())
        })
        .collect()
}

pub fn bezier_derivatives<S: Scalar>(
    c: &CurveParams<S>,
    u: f64,
) -> Result<(Point<S>, Point<S>), GeometryError> {
    check_u(u)?;
    Ok((c.combine(&c.first_weights(u)), c.combine(&c.second_weights(u))))
}

fn first_derivative<S: Scalar>(c: &CurveParams<S>, u: f64) -> Point<S> {
    c.combine(&c.first_weights(u))
}

/// Norm of a 2-vector; zero vectors get a zero derivative.
pub fn norm<S: Scalar>(p: &Point<S>) -> Result<S, AdError> {
    let sq = p.x.square() + p.y.square();
    if sq.value() == 0.0 {
        return Ok(S::constant(0.0));
    }
    sq.checked_sqrt()
}

#[derive(Debug, Clone)]
pub struct Curvature<S> {
    pub kappa: S,
    /// Set when the tangent norm fell below [`EPS_SPEED`]; `kappa` is 0.
    pub degenerate: bool,
}

/// `|x'y'' - y'x''| / |tau'|^3`.
pub fn curvature<S: Scalar>(c: &CurveParams<S>, u: f64) -> Result<Curvature<S>, GeometryError> {
    let (d1, d2) = bezier_derivatives(c, u)?;
    let speed = norm(&d1)?;
    if speed.value() <= EPS_SPEED {
        return Ok(Curvature {
            kappa: S::constant(0.0),
            degenerate: true,
        });
    }
    let cross = d1.x.clone() * d2.y.clone() - d1.y.clone() * d2.x.clone();
    let cube = speed.clone() * speed.clone() * speed;
    let kappa = cross.abs().checked_div(&cube)?;
    Ok(Curvature {
        kappa,
        degenerate: false,
    })
}

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Arc length of the `m`-th of `n` equal parameter intervals, by 4-point
/// Gauss-Legendre quadrature of the speed.
pub fn segment_length<S: Scalar>(
    c: &CurveParams<S>,
    m: usize,
    n: usize,
) -> Result<S, GeometryError> {
    if m >= n {
        return Err(GeometryError::IntervalOutOfRange { m, n });
    }
    let a = m as f64 / n as f64;
    let b = (m + 1) as f64 / n as f64;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut total = S::constant(0.0);
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        let speed = norm(&first_derivative(c, mid + half * x))?;
        total = total + speed * (w * half);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    #[test]
    fn curve_samples_hit_endpoints() {
        use crate::scenario::Vec2;
        let ctrl = [Vec2::new(0.0, 0.0), Vec2::new(0.5, 1.0), Vec2::new(1.0, 0.0)];
        let pts = sample_curve(&ctrl, 5).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0], ctrl[0]);
        assert_eq!(pts[4], ctrl[2]);
        // quadratic midpoint: (p0 + 2 p1 + p2) / 4
        assert!((pts[2].y - 0.5).abs() < 1e-15);
    }

    use super::*;

    fn curve(pts: &[(f64, f64)]) -> CurveParams<f64> {
        CurveParams::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    /// de Casteljau evaluation, independent of the Bernstein path.
    fn de_casteljau(pts: &[(f64, f64)], u: f64) -> (f64, f64) {
        let mut p = pts.to_vec();
        while p.len() > 1 {
            p = p
                .windows(2)
                .map(|w| (w[0].0 * (1.0 - u) + w[1].0 * u, w[0].1 * (1.0 - u) + w[1].1 * u))
                .collect();
        }
        p[0]
    }

    const CUBIC: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)];
    const QUAD: [(f64, f64); 3] = [(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)];

    #[test]
    fn cubic_midpoint() {
        let oracle = de_casteljau(&CUBIC, 0.5);
        assert_eq!(oracle, (0.5, 0.75));
        let p = bezier_point(&curve(&CUBIC), 0.5).unwrap();
        assert!((p.x - 0.5).abs() < 1e-15 && (p.y - 0.75).abs() < 1e-15);
        for u in [0.1, 0.33, 0.8] {
            let o = de_casteljau(&CUBIC, u);
            let p = bezier_point(&curve(&CUBIC), u).unwrap();
            assert!((p.x - o.0).abs() < 1e-14 && (p.y - o.1).abs() < 1e-14);
        }
    }

    #[test]
    fn endpoints_interpolate() {
        let c = curve(&CUBIC);
        assert_eq!(bezier_point(&c, 0.0).unwrap(), Point::new(0.0, 0.0));
        assert_eq!(bezier_point(&c, 1.0).unwrap(), Point::new(1.0, 0.0));
        assert!(bezier_point(&c, 1.1).is_err());
        assert!(bezier_point(&c, -0.1).is_err());
    }

    #[test]
    fn first_derivative_at_start() {
        let (d1, _) = bezier_derivatives(&curve(&CUBIC), 0.0).unwrap();
        assert_eq!(d1, Point::new(0.0, 3.0));
    }

    #[test]
    fn linear_curve_has_no_second_derivative() {
        let c = curve(&[(0.0, 0.0), (0.25, 0.5), (0.5, 1.0), (0.75, 1.5)]);
        for u in [0.0, 0.2, 0.7, 1.0] {
            let (_, d2) = bezier_derivatives(&c, u).unwrap();
            assert!(d2.x.abs() < 1e-12 && d2.y.abs() < 1e-12);
            assert_eq!(curvature(&c, u).unwrap().kappa, 0.0);
        }
        let two = curve(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(bezier_derivatives(&two, 0.3).unwrap().1, Point::new(0.0, 0.0));
    }

    #[test]
    fn quadratic_second_derivative_by_finite_differences() {
        let h = 1e-6;
        let c = curve(&QUAD);
        for u in [0.2, 0.5, 0.8] {
            let p = |u| bezier_point(&c, u).unwrap();
            let fd_y = (p(u + h).y - 2.0 * p(u).y + p(u - h).y) / (h * h);
            let fd_x = (p(u + h).x - 2.0 * p(u).x + p(u - h).x) / (h * h);
            // frozen: FD oracle gives (0, 2) within FD noise
            assert!(fd_x.abs() < 1e-2 && (fd_y - 2.0).abs() < 1e-2);
            let (_, d2) = bezier_derivatives(&c, u).unwrap();
            assert!((d2.x - 0.0).abs() < 1e-12 && (d2.y - 2.0).abs() < 1e-12);
        }
    }

    /// Curvature of the circle through three points (circumradius oracle).
    fn circle_curvature(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
        let ab = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let bc = ((b.0 - c.0).powi(2) + (b.1 - c.1).powi(2)).sqrt();
        let ca = ((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2)).sqrt();
        let area2 = ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs();
        2.0 * area2 / (ab * bc * ca)
    }

    #[test]
    fn quadratic_curvature_at_start() {
        let c = curve(&QUAD);
        let k = curvature(&c, 0.0).unwrap();
        assert!(!k.degenerate);
        assert!((k.kappa - 2.0).abs() < 1e-12);
        let h = 1e-4;
        let pts: Vec<(f64, f64)> = [0.0, h, 2.0 * h]
            .iter()
            .map(|&u| de_casteljau(&QUAD, u))
            .collect();
        let circle = circle_curvature(pts[0], pts[1], pts[2]);
        assert!((circle - 2.0).abs() < 1e-2, "circle fit {circle}");
    }

    #[test]
    fn scaling_halves_curvature() {
        let c1 = curve(&CUBIC);
        let scaled: Vec<(f64, f64)> = CUBIC.iter().map(|&(x, y)| (2.0 * x, 2.0 * y)).collect();
        let c2 = curve(&scaled);
        for u in [0.1, 0.4, 0.9] {
            let k1 = curvature(&c1, u).unwrap().kappa;
            let k2 = curvature(&c2, u).unwrap().kappa;
            assert!((k2 - 0.5 * k1).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_tangent_is_flagged() {
        let c = curve(&[(0.3, 0.3), (0.3, 0.3), (0.3, 0.3)]);
        let k = curvature(&c, 0.5).unwrap();
        assert!(k.degenerate);
        assert_eq!(k.kappa, 0.0);
    }

    #[test]
    fn straight_segments() {
        let c = curve(&[(0.0, 0.0), (1.0, 0.0)]);
        for m in 0..100 {
            assert!((segment_length(&c, m, 100).unwrap() - 0.01).abs() < 1e-9);
        }
        let z = curve(&[(0.2, 0.2), (0.2, 0.2), (0.2, 0.2), (0.2, 0.2)]);
        assert!(segment_length(&z, 3, 10).unwrap().abs() < 1e-15);
        assert!(segment_length(&c, 100, 100).is_err());
    }

    #[test]
    fn total_length_matches_dense_trapezoid() {
        let pts = [(0.05, 0.1), (0.7, -0.2), (0.1, 0.9), (0.95, 0.8)];
        let c = curve(&pts);
        let gl: f64 = (0..100).map(|m| segment_length(&c, m, 100).unwrap()).sum();
        // Oracle: trapezoid over the speed from exact de Casteljau hodograph
        // differences, 10^4 panels.
        let n = 10_000;
        let speed = |u: f64| {
            let h = 1e-7;
            let a = de_casteljau(&pts, (u - h).max(0.0));
            let b = de_casteljau(&pts, (u + h).min(1.0));
            let w = (u + h).min(1.0) - (u - h).max(0.0);
            ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt() / w
        };
        let mut trap = 0.0;
        for i in 0..n {
            let u0 = i as f64 / n as f64;
            let u1 = (i + 1) as f64 / n as f64;
            trap += 0.5 * (speed(u0) + speed(u1)) * (u1 - u0);
        }
        assert!((gl - trap).abs() < 1e-5, "gl {gl} trap {trap}");
    }

    #[test]
    fn order_limits() {
        let pts: Vec<Point<f64>> = (0..34).map(|i| Point::new(i as f64, 0.0)).collect();
        assert!(matches!(CurveParams::new(pts), Err(GeometryError::OrderTooHigh(33))));
        assert!(matches!(
            CurveParams::new(vec![Point::new(0.0, 0.0)]),
            Err(GeometryError::TooFewPoints(1))
        ));
        assert_eq!(binomial(32, 16), 601_080_390.0);
    }
}
