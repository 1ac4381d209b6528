//! The N-step train simulation along a Bezier track and the discretized
//! time-plus-cost objective.
//!
//! Each step `m` evaluates the track at `u = m/N`, combines driving,
//! friction, drag and obstacle accelerations, integrates the traversal time
//! of the interval's arc length, and carries the clamped speed forward.
//! Everything is generic over [`Scalar`] so the same code produces plain
//! values and forward-mode gradients.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Scalar};
use crate::geometry::{self, CurveParams, GeometryError, Point};
use crate::noise::Perlin;
use crate::scenario::{CostField, Obstacle, PhysicsParams, Scenario, Vec2};

/// Below this net acceleration the interval time is `s / v`.
pub const EPS_ACCEL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("train stalls in interval {step}")]
    Stalled { step: usize },
    #[error("speed {v} outside [{v_min}, {v_max}] at step {step}")]
    SpeedOutOfRange {
        step: usize,
        v: f64,
        v_min: f64,
        v_max: f64,
    },
    #[error("expected {expected} control points, got {got}")]
    ControlPointCount { expected: usize, got: usize },
    #[error("geometry error at step {step}: {source}")]
    Geometry { step: usize, source: GeometryError },
    #[error(transparent)]
    Numeric(#[from] AdError),
}

impl SimError {
    /// Step index where the simulation failed, if known.
    pub fn step(&self) -> Option<usize> {
        match self {
            SimError::Stalled { step }
            | SimError::SpeedOutOfRange { step, .. }
            | SimError::Geometry { step, .. } => Some(*step),
            SimError::Numeric(e) => e.step,
            SimError::ControlPointCount { .. } => None,
        }
    }
}

/// One simulated interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub m: usize,
    pub x: Vec2,
    pub v_in: f64,
    pub kappa: f64,
    pub a_drive: f64,
    pub a_fric: f64,
    pub a_air: f64,
    pub a_obs: f64,
    pub a_net: f64,
    pub s: f64,
    pub t: f64,
    /// Cost density at `x`.
    pub c: f64,
    pub v_out: f64,
    /// Obstacles whose influence region contains `x`, in scenario order.
    pub influences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub steps: Vec<StepRecord>,
    pub total_time: f64,
    /// `Σ c_m s_m`.
    pub total_cost: f64,
    pub total_length: f64,
}

/// Differentiable totals of a simulation.
#[derive(Debug, Clone)]
pub struct SimTotals<S> {
    pub time: S,
    pub cost: S,
    pub length: S,
}

/// Per-scenario precomputation shared by all steps.
#[derive(Debug, Clone)]
pub struct CostModel<'a> {
    field: &'a CostField,
    perlin: Perlin,
    obstacles: &'a [Obstacle],
}

impl<'a> CostModel<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self {
            field: &scenario.cost_field,
            perlin: Perlin::new(scenario.cost_field.seed),
            obstacles: &scenario.obstacles,
        }
    }

    /// Global terrain cost in `[offset - amplitude, offset + amplitude]`.
    pub fn global_cost<S: Scalar>(&self, x: &Point<S>) -> S {
        let f = self.field.frequency;
        let n = self
            .perlin
            .fbm(&(x.x.clone() * f), &(x.y.clone() * f), self.field.octaves);
        n * self.field.amplitude + self.field.offset
    }

    /// `σ_g + σ_o`.
    pub fn position_cost<S: Scalar>(&self, x: &Point<S>) -> S {
        self.global_cost(x) + local_cost(x, self.obstacles)
    }
}

fn offset_sq<S: Scalar>(x: &Point<S>, center: Vec2) -> S {
    (x.x.clone() - center.x).square() + (x.y.clone() - center.y).square()
}

/// Local obstacle cost: `Σ cost_i exp(-d_i^2 / (2 r_i^2))`.
pub fn local_cost<S: Scalar>(x: &Point<S>, obstacles: &[Obstacle]) -> S {
    let mut total = S::constant(0.0);
    for o in obstacles {
        let d2 = offset_sq(x, o.center);
        total = total + (d2 * (-1.0 / (2.0 * o.radius * o.radius))).exp() * o.cost;
    }
    total
}

/// Obstacle deceleration `-Σ penalty_i max(0, 1 - d_i / (2 r_i))`.
pub fn obstacle_accel<S: Scalar>(x: &Point<S>, obstacles: &[Obstacle]) -> Result<S, AdError> {
    let mut total = S::constant(0.0);
    for o in obstacles {
        let reach = 2.0 * o.radius;
        let d2 = offset_sq(x, o.center);
        if d2.value() >= reach * reach {
            continue;
        }
        let d = if d2.value() == 0.0 {
            S::constant(0.0)
        } else {
            d2.checked_sqrt()?
        };
        total = total - (d * (-1.0 / reach) + 1.0) * o.penalty;
    }
    Ok(total)
}

/// Plain-value convenience wrapper around [`CostModel::position_cost`].
pub fn position_cost(x: Vec2, scenario: &Scenario) -> f64 {
    CostModel::new(scenario).position_cost(&Point::new(x.x, x.y))
}

/// Global plus local cost sampled at cell centers of a `res`×`res` grid,
/// row-major with rows ascending in y.
pub fn cost_raster(scenario: &Scenario, res: usize) -> Vec<f64> {
    let model = CostModel::new(scenario);
    let mut out = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            let x = (i as f64 + 0.5) / res as f64;
            let y = (j as f64 + 0.5) / res as f64;
            out.push(model.position_cost(&Point::new(x, y)));
        }
    }
    out
}

/// Nicknames of obstacles whose influence region (`d < 2r`) contains `x`.
pub fn influences_at(x: Vec2, obstacles: &[Obstacle]) -> Vec<String> {
    obstacles
        .iter()
        .filter(|o| x.distance(o.center) < 2.0 * o.radius)
        .map(|o| o.nickname.clone())
        .collect()
}

/// Kinematic interval quantities, isolated from the curve for testing.
#[derive(Debug, Clone)]
pub struct Kinematics<S> {
    pub a_drive: S,
    pub a_fric: S,
    pub a_air: S,
    pub a_net: S,
    pub t: S,
    pub v_out: S,
}

/// Accelerations, traversal time and the next clamped speed for one
/// interval.
pub fn kinematics<S: Scalar>(
    step: usize,
    v: &S,
    kappa: &S,
    a_obs: &S,
    s: &S,
    physics: &PhysicsParams,
) -> Result<Kinematics<S>, SimError> {
    let a_drive = (kappa.clone() * -physics.kappa_gain).exp() * physics.a_base;
    let a_fric = v.sign() * -physics.mu_fric;
    let a_air = v.clone() * v.abs() * -physics.mu_air;
    let a_net = a_drive.clone() + a_fric.clone() + a_air.clone() + a_obs.clone();
    let t = traversal_time(step, v, &a_net, s)?;
    let v_out = (v.clone() + a_net.clone() * t.clone()).clamp(physics.v_min, physics.v_max);
    Ok(Kinematics {
        a_drive,
        a_fric,
        a_air,
        a_net,
        t,
        v_out,
    })
}

/// Time to cover `s` from speed `v` under constant acceleration `a`.
///
/// Uses `2s / (v + sqrt(v² + 2as))`, the cancellation-free form of
/// `(-v + sqrt(v² + 2as)) / a`.
pub fn traversal_time<S: Scalar>(step: usize, v: &S, a: &S, s: &S) -> Result<S, SimError> {
    if a.value().abs() < EPS_ACCEL {
        return Ok(s.checked_div(v).map_err(|e| e.at_step(step))?);
    }
    let disc = v.square() + a.clone() * s.clone() * 2.0;
    if disc.value() < 0.0 {
        return Err(SimError::Stalled { step });
    }
    if s.value() == 0.0 {
        return Ok(S::constant(0.0));
    }
    let root = disc.checked_sqrt().map_err(|e| e.at_step(step))?;
    let t = (s.clone() * 2.0)
        .checked_div(&(v.clone() + root))
        .map_err(|e| e.at_step(step))?;
    Ok(t)
}

fn geometry_err(step: usize) -> impl Fn(GeometryError) -> SimError {
    move |source| SimError::Geometry { step, source }
}

/// A single simulation step; returns the record and the differentiable
/// `(t, c·s, s, v_out)`.
pub fn sim_step<S: Scalar>(
    m: usize,
    v: &S,
    curve: &CurveParams<S>,
    scenario: &Scenario,
    model: &CostModel<'_>,
) -> Result<(StepRecord, [S; 4]), SimError> {
    let physics = &scenario.physics;
    let n = physics.n_steps;
    if !(physics.v_min..=physics.v_max).contains(&v.value()) {
        return Err(SimError::SpeedOutOfRange {
            step: m,
            v: v.value(),
            v_min: physics.v_min,
            v_max: physics.v_max,
        });
    }
    let u = m as f64 / n as f64;
    let x = geometry::bezier_point(curve, u).map_err(geometry_err(m))?;
    let kappa = geometry::curvature(curve, u).map_err(geometry_err(m))?.kappa;
    let a_obs = obstacle_accel(&x, &scenario.obstacles).map_err(|e| e.at_step(m))?;
    let s = geometry::segment_length(curve, m, n).map_err(geometry_err(m))?;
    let k = kinematics(m, v, &kappa, &a_obs, &s, physics)?;
    let c = model.position_cost(&x);
    let xv = x.value();
    let record = StepRecord {
        m,
        x: xv,
        v_in: v.value(),
        kappa: kappa.value(),
        a_drive: k.a_drive.value(),
        a_fric: k.a_fric.value(),
        a_air: k.a_air.value(),
        a_obs: a_obs.value(),
        a_net: k.a_net.value(),
        s: s.value(),
        t: k.t.value(),
        c: c.value(),
        v_out: k.v_out.value(),
        influences: influences_at(xv, &scenario.obstacles),
    };
    let cs = c * s.clone();
    Ok((record, [k.t, cs, s, k.v_out]))
}

/// Runs all `N` steps over `ctrl` (the full control polygon, endpoints
/// included).
pub fn simulate_generic<S: Scalar>(
    ctrl: Vec<Point<S>>,
    scenario: &Scenario,
    model: &CostModel<'_>,
) -> Result<(SimTotals<S>, Vec<StepRecord>), SimError> {
    if ctrl.len() != scenario.ctrl_points.len() {
        return Err(SimError::ControlPointCount {
            expected: scenario.ctrl_points.len(),
            got: ctrl.len(),
        });
    }
    let curve = CurveParams::new(ctrl).map_err(geometry_err(0))?;
    let n = scenario.physics.n_steps;
    let mut v = S::constant(scenario.physics.v0);
    let mut time = S::constant(0.0);
    let mut cost = S::constant(0.0);
    let mut length = S::constant(0.0);
    let mut records = Vec::with_capacity(n);
    for m in 0..n {
        let (rec, [t, cs, s, v_next]) = sim_step(m, &v, &curve, scenario, model)?;
        time = time + t;
        cost = cost + cs;
        length = length + s;
        v = v_next;
        records.push(rec);
    }
    Ok((SimTotals { time, cost, length }, records))
}

/// Plain-value simulation of the track through `theta`.
pub fn simulate(theta: &[Vec2], scenario: &Scenario) -> Result<SimResult, SimError> {
    let model = CostModel::new(scenario);
    let ctrl = theta.iter().map(|p| Point::new(p.x, p.y)).collect();
    let (totals, steps) = simulate_generic::<f64>(ctrl, scenario, &model)?;
    Ok(SimResult {
        steps,
        total_time: totals.time,
        total_cost: totals.cost,
        total_length: totals.length,
    })
}

/// Relative weights of the time and cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub time: f64,
    pub cost: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            time: 1.0,
            cost: 1.0,
        }
    }
}

impl LossWeights {
    pub const BALANCED: LossWeights = LossWeights {
        time: 1.0,
        cost: 1.0,
    };
    pub const SPEED: LossWeights = LossWeights {
        time: 4.0,
        cost: 1.0,
    };
    pub const COST: LossWeights = LossWeights {
        time: 1.0,
        cost: 4.0,
    };
}

fn powi<S: Scalar>(x: &S, p: u32) -> S {
    let mut out = x.clone();
    for _ in 1..p {
        out = out * x.clone();
    }
    out
}

/// `w_t T^p + w_c C^p`.
pub fn weighted_loss<S: Scalar>(time: &S, cost: &S, p: u32, w: LossWeights) -> S {
    assert!((1..=3).contains(&p), "objective exponent must be 1, 2 or 3");
    powi(time, p) * w.time + powi(cost, p) * w.cost
}

/// `T^p + C^p` for a finished simulation.
pub fn loss(result: &SimResult, p: u32) -> f64 {
    weighted_loss(&result.total_time, &result.total_cost, p, LossWeights::default())
}

pub mod fixture {
    //! The published 25-step variable table, used as a numeric fixture for
    //! the acceleration, drag and velocity laws.

    use serde::{Deserialize, Serialize};

    use crate::scenario::PhysicsParams;

    /// Shipped copy of the fixture CSV.
    pub const STEP_TABLE_CSV: &str = include_str!("../fixtures/step_table.csv");

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct StepTableRow {
        pub step: usize,
        pub time: f64,
        pub acceleration: f64,
        pub air_resistance: f64,
        pub cost: f64,
        pub curvature: f64,
        pub velocity: f64,
    }

    pub fn parse(text: &str) -> Result<Vec<StepTableRow>, csv::Error> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect()
    }

    pub fn load_default() -> Vec<StepTableRow> {
        parse(STEP_TABLE_CSV).expect("bundled fixture parses")
    }

    pub const ACCEL_TOL: f64 = 2e-3;
    pub const DRAG_TOL: f64 = 1e-3;
    pub const VELOCITY_TOL: f64 = 5e-3;
    /// Rows up to this step carry no obstacle deceleration.
    pub const OBSTACLE_FREE_ROWS: usize = 7;

    #[derive(Debug, Clone, PartialEq, Serialize)]
    pub struct RowCheck {
        pub step: usize,
        pub accel_computed: f64,
        pub accel_table: f64,
        pub accel_ok: bool,
        pub drag_computed: f64,
        pub drag_table: f64,
        pub drag_ok: bool,
        pub velocity_computed: f64,
        pub velocity_table: f64,
        pub velocity_ok: bool,
    }

    impl RowCheck {
        pub fn passed(&self) -> bool {
            self.accel_ok && self.drag_ok && self.velocity_ok
        }
    }

    /// Recomputes each row from the previous row's speed and the row's
    /// curvature with the given physics constants.
    pub fn check(rows: &[StepTableRow], physics: &PhysicsParams) -> Vec<RowCheck> {
        let mut v_prev = physics.v0;
        let mut t_prev = 0.0;
        rows.iter()
            .map(|r| {
                let drag = physics.mu_air * v_prev * v_prev;
                let accel = physics.a_base * (-physics.kappa_gain * r.curvature).exp()
                    - physics.mu_fric
                    - drag;
                let accel_ok = if r.step <= OBSTACLE_FREE_ROWS {
                    (accel - r.acceleration).abs() <= ACCEL_TOL
                } else {
                    accel >= r.acceleration - ACCEL_TOL
                };
                let velocity = v_prev + r.acceleration * (r.time - t_prev);
                let check = RowCheck {
                    step: r.step,
                    accel_computed: accel,
                    accel_table: r.acceleration,
                    accel_ok,
                    drag_computed: drag,
                    drag_table: r.air_resistance,
                    drag_ok: (drag - r.air_resistance).abs() <= DRAG_TOL,
                    velocity_computed: velocity,
                    velocity_table: r.velocity,
                    velocity_ok: (velocity - r.velocity).abs() <= VELOCITY_TOL,
                };
                v_prev = r.velocity;
                t_prev = r.time;
                check
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn raster_is_row_major_cell_centers() {
        let s = crate::scenario::generate_scenario(4, 5, 4).unwrap();
        let r = cost_raster(&s, 8);
        assert_eq!(r.len(), 64);
        let (i, j) = (3, 6);
        let x = Vec2::new((i as f64 + 0.5) / 8.0, (j as f64 + 0.5) / 8.0);
        assert_eq!(r[j * 8 + i], position_cost(x, &s));
    }

    use super::*;
    use crate::scenario::generate_scenario;

    fn obstacle(x: f64, y: f64, r: f64, penalty: f64, cost: f64) -> Obstacle {
        Obstacle {
            nickname: format!("o{x}{y}"),
            center: Vec2::new(x, y),
            radius: r,
            penalty,
            cost,
        }
    }

    fn flat(scenario: &mut Scenario) {
        scenario.cost_field.amplitude = 0.0;
    }

    #[test]
    fn obstacle_accel_hat() {
        let obs = [obstacle(0.5, 0.5, 0.1, 3.0, 1.0)];
        let at = |x: f64, y: f64| obstacle_accel(&Point::new(x, y), &obs).unwrap();
        assert_eq!(at(0.9, 0.9), 0.0);
        assert_eq!(at(0.5, 0.5), -3.0);
        assert!(at(0.7, 0.5).abs() < 1e-12);
        assert!((at(0.6, 0.5) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn position_cost_examples() {
        let mut s = generate_scenario(1, 0, 2).unwrap();
        flat(&mut s);
        assert_eq!(position_cost(Vec2::new(0.3, 0.8), &s), s.cost_field.offset);
        s.obstacles.push(obstacle(0.4, 0.4, 0.05, 1.0, 0.7));
        let at_center = position_cost(Vec2::new(0.4, 0.4), &s);
        assert!((at_center - (s.cost_field.offset + 0.7)).abs() < 1e-12);

        let a = obstacle(0.3, 0.3, 0.05, 1.0, 0.7);
        let b = obstacle(0.35, 0.32, 0.08, 1.0, 0.4);
        let x = Point::new(0.33, 0.31);
        let both = local_cost(&x, &[a.clone(), b.clone()]);
        let sum = local_cost(&x, &[a]) + local_cost(&x, &[b]);
        assert!((both - sum).abs() < 1e-15);
    }

    #[test]
    fn global_cost_stays_in_band() {
        let s = generate_scenario(11, 0, 2).unwrap();
        let model = CostModel::new(&s);
        for i in 0..50 {
            for j in 0..50 {
                let c = model.global_cost(&Point::new(i as f64 / 49.0, j as f64 / 49.0));
                assert!(c >= s.cost_field.offset - s.cost_field.amplitude - 1e-12);
                assert!(c <= s.cost_field.offset + s.cost_field.amplitude + 1e-12);
            }
        }
    }

    #[test]
    fn first_table_row_acceleration() {
        let p = PhysicsParams::default();
        let k = kinematics(0, &1.0, &0.0689, &0.0, &0.0175, &p).unwrap();
        assert!((k.a_net - 4.2486).abs() < 2e-3, "{}", k.a_net);
        assert!((k.a_air + 0.5).abs() < 1e-12);
    }

    #[test]
    fn traversal_time_cases() {
        assert!((traversal_time(0, &0.0, &2.0, &1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((traversal_time(0, &2.0, &1e-12, &1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((traversal_time(0, &2.0, &1e-6, &1.0).unwrap() - 0.5).abs() < 1e-6);
        // (-v + sqrt(v^2 + 2as)) / a with a < 0
        let t = traversal_time(0, &2.0, &-1.0, &1.0).unwrap();
        assert!((t - (-2.0 + 2.0f64.sqrt()) / -1.0).abs() < 1e-12);
        assert_eq!(
            traversal_time(4, &0.1, &-10.0, &1.0).unwrap_err(),
            SimError::Stalled { step: 4 }
        );
    }

    #[test]
    fn straight_track_length() {
        let s = generate_scenario(7, 0, 2).unwrap();
        let r = simulate(&s.ctrl_points, &s).unwrap();
        assert!((r.total_length - 0.9 * 2.0f64.sqrt()).abs() < 1e-6);
        assert_eq!(r.steps.len(), 100);
    }

    #[test]
    fn totals_equal_sums_and_times_positive() {
        let s = generate_scenario(3, 20, 16).unwrap();
        let r = simulate(&s.ctrl_points, &s).unwrap();
        let t: f64 = r.steps.iter().map(|x| x.t).sum();
        let c: f64 = r.steps.iter().map(|x| x.c * x.s).sum();
        let l: f64 = r.steps.iter().map(|x| x.s).sum();
        assert!((t - r.total_time).abs() < 1e-12);
        assert!((c - r.total_cost).abs() < 1e-12);
        assert!((l - r.total_length).abs() < 1e-12);
        for st in &r.steps {
            assert!(st.t > 0.0);
            assert!(st.s >= 0.0);
            assert!((s.physics.v_min..=s.physics.v_max).contains(&st.v_out));
            let sum = st.a_drive + st.a_fric + st.a_air + st.a_obs;
            assert!((sum - st.a_net).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_track_time_matches_dense_integration() {
        let mut s = generate_scenario(7, 0, 2).unwrap();
        flat(&mut s);
        let r = simulate(&s.ctrl_points, &s).unwrap();
        // Oracle: explicit micro-stepping of dv/dt = a(v) along the line.
        let p = &s.physics;
        let total = 0.9 * 2.0f64.sqrt();
        let micro = 10_000;
        let ds = total / micro as f64;
        let mut v: f64 = p.v0;
        let mut time = 0.0;
        for _ in 0..micro {
            let a = p.a_base - p.mu_fric - p.mu_air * v * v;
            let dt = ds / v;
            time += dt;
            v = (v + a * dt).clamp(p.v_min, p.v_max);
        }
        assert!(((r.total_time - time) / time).abs() < 0.01, "{} vs {}", r.total_time, time);
    }

    #[test]
    fn loss_exponents() {
        let l = |p| weighted_loss(&2.0, &3.0, p, LossWeights::default());
        assert_eq!(l(1), 5.0);
        assert_eq!(l(2), 13.0);
        assert_eq!(l(3), 35.0);
    }

    #[test]
    fn fixture_parses_and_laws_hold() {
        let rows = fixture::load_default();
        assert_eq!(rows.len(), 25);
        let checks = fixture::check(&rows, &PhysicsParams::default());
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
    }
}
