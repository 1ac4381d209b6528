//! Gradient-based track optimization with signal emission.
//!
//! Each iteration simulates the current control points, records the event
//! and reward signals, differentiates the weighted loss with respect to
//! the free control-point coordinates, and takes one optimizer step.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{grad, Objective, Scalar};
use crate::geometry::Point;
use crate::scenario::{Scenario, ScenarioError, Vec2};
use crate::simulator::{simulate_generic, weighted_loss, CostModel, LossWeights, SimError, SimResult};
use crate::trace::{self, EventSample, Reward, TraceDocument, TraceError};

/// Base of the loss assigned to an infeasible simulation.
pub const PENALTY_BASE: f64 = 1e3;
/// Consecutive non-finite evaluations tolerated before aborting.
pub const MAX_NON_FINITE: usize = 10;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{optimizer} produced a non-finite state at step {step}")]
    NonFiniteState { optimizer: &'static str, step: usize },
    #[error("loss was non-finite for {count} consecutive iterations (last at iteration {iteration}): {last_error}")]
    NonFiniteLoss {
        count: usize,
        iteration: usize,
        last_error: String,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("run directory I/O")]
    Io(#[from] io::Error),
    #[error("run directory decode ({file}): {source}")]
    Decode {
        file: &'static str,
        source: serde_json::Error,
    },
    #[error("cancelled at iteration {0}")]
    Cancelled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    Rmsprop,
    SignSgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Adam,
        OptimizerKind::Sgd,
        OptimizerKind::Rmsprop,
        OptimizerKind::SignSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::SignSgd => "sign_sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    pub steps: usize,
    pub schedule: Schedule,
    pub exponent: u32,
    pub weights: LossWeights,
    pub event_rate: usize,
    pub update_rate: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr0: 5e-3,
            steps: 250,
            schedule: Schedule::Cosine,
            exponent: 1,
            weights: LossWeights::default(),
            event_rate: 10,
            update_rate: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(1..=3).contains(&self.exponent) {
            return bad("exponent must be 1, 2 or 3");
        }
        if self.event_rate == 0 || self.update_rate == 0 {
            return bad("event_rate and update_rate must be at least 1");
        }
        if !(self.weights.time.is_finite() && self.weights.cost.is_finite())
            || self.weights.time < 0.0
            || self.weights.cost < 0.0
        {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

pub fn lr_at(config: &OptimizerConfig, k: usize) -> f64 {
    match config.schedule {
        Schedule::Constant => config.lr0,
        Schedule::Cosine => {
            let frac = k as f64 / config.steps as f64;
            config.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_RHO: f64 = 0.99;
pub const OPT_EPS: f64 = 1e-8;

/// Optimizer moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: usize,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

/// One update of `theta` in place.
pub fn opt_step(
    kind: OptimizerKind,
    state: &mut OptState,
    theta: &mut [f64],
    grad: &[f64],
    lr: f64,
) -> Result<(), OptimizeError> {
    assert_eq!(theta.len(), grad.len());
    state.step += 1;
    let t = state.step as i32;
    for i in 0..theta.len() {
        let g = grad[i];
        let delta = match kind {
            OptimizerKind::Sgd => g,
            OptimizerKind::SignSgd => {
                if g > 0.0 {
                    1.0
                } else if g < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            OptimizerKind::Rmsprop => {
                state.second[i] = RMSPROP_RHO * state.second[i] + (1.0 - RMSPROP_RHO) * g * g;
                g / (state.second[i].sqrt() + OPT_EPS)
            }
            OptimizerKind::Adam => {
                state.first[i] = ADAM_BETA1 * state.first[i] + (1.0 - ADAM_BETA1) * g;
                state.second[i] = ADAM_BETA2 * state.second[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = state.first[i] / (1.0 - ADAM_BETA1.powi(t));
                let v_hat = state.second[i] / (1.0 - ADAM_BETA2.powi(t));
                m_hat / (v_hat.sqrt() + OPT_EPS)
            }
        };
        if !delta.is_finite() || !state.first[i].is_finite() || !state.second[i].is_finite() {
            return Err(OptimizeError::NonFiniteState {
                optimizer: kind.name(),
                step: state.step,
            });
        }
        theta[i] -= lr * delta;
    }
    Ok(())
}

/// Flattens free control points to `[x1, y1, x2, y2, ...]`.
pub fn flatten_free(ctrl: &[Vec2]) -> Vec<f64> {
    let n = ctrl.len();
    ctrl[1..n.saturating_sub(1).max(1)]
        .iter()
        .flat_map(|p| [p.x, p.y])
        .collect()
}

/// Inverse of [`flatten_free`] with endpoints taken from `template`.
pub fn unflatten_free(template: &[Vec2], free: &[f64]) -> Vec<Vec2> {
    let mut out = template.to_vec();
    for (i, pair) in free.chunks(2).enumerate() {
        out[i + 1] = Vec2::new(pair[0], pair[1]);
    }
    out
}

/// The weighted loss as a function of the free coordinates.
pub struct TrackObjective<'a> {
    pub scenario: &'a Scenario,
    pub model: CostModel<'a>,
    pub exponent: u32,
    pub weights: LossWeights,
}

impl<'a> TrackObjective<'a> {
    pub fn new(scenario: &'a Scenario, exponent: u32, weights: LossWeights) -> Self {
        Self {
            scenario,
            model: CostModel::new(scenario),
            exponent,
            weights,
        }
    }

    fn control_points<S: Scalar>(&self, free: &[S]) -> Vec<Point<S>> {
        let ctrl = &self.scenario.ctrl_points;
        let n = ctrl.len();
        let mut out = Vec::with_capacity(n);
        out.push(Point::new(S::constant(ctrl[0].x), S::constant(ctrl[0].y)));
        for pair in free.chunks(2) {
            out.push(Point::new(pair[0].clone(), pair[1].clone()));
        }
        out.push(Point::new(
            S::constant(ctrl[n - 1].x),
            S::constant(ctrl[n - 1].y),
        ));
        out
    }
}

impl Objective for TrackObjective<'_> {
    type Error = SimError;

    fn eval<S: Scalar>(&self, free: &[S]) -> Result<S, SimError> {
        let ctrl = self.control_points(free);
        let (totals, _) = simulate_generic(ctrl, self.scenario, &self.model)?;
        Ok(weighted_loss(
            &totals.time,
            &totals.cost,
            self.exponent,
            self.weights,
        ))
    }
}

/// Loss assigned when the simulation fails at step `m` of `n`.
pub fn penalty_loss(m: usize, n: usize) -> f64 {
    PENALTY_BASE * (1.0 + m as f64 / n as f64)
}

/// The signal streams of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Signals {
    /// One per iteration `0..=K`.
    pub events: Vec<EventSample>,
    /// One per iteration `0..=K`.
    pub rewards: Vec<Reward>,
    /// Free and fixed control-point deltas `θ_k - θ_{k-1}`, for `k = 1..=K`.
    pub updates: Vec<Vec<Vec2>>,
}

/// Progress callbacks; all methods default to no-ops. Signals arrive in
/// iteration order.
pub trait SignalEmitter {
    fn on_event(&mut self, _iter: usize, _sample: &EventSample) {}
    fn on_reward(&mut self, _iter: usize, _reward: &Reward) {}
    fn on_update(&mut self, _iter: usize, _delta: &[Vec2]) {}
    /// Returning `false` cancels the run.
    fn keep_going(&mut self, _iter: usize) -> bool {
        true
    }
}

pub struct NullEmitter;
impl SignalEmitter for NullEmitter {}

/// A complete optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptRun {
    pub config: OptimizerConfig,
    pub scenario: Scenario,
    pub signals: Signals,
    /// Full control polygons for `k = 0..=K`.
    pub theta_history: Vec<Vec<Vec2>>,
    /// Simulation of the last iterate, if it was feasible.
    pub final_result: Option<SimResult>,
    /// Seconds spent in [`run_optimization`]; not persisted.
    pub wall_clock_secs: f64,
}

/// Outcome of evaluating one iterate.
struct Evaluation {
    reward: Reward,
    events: EventSample,
    result: Option<SimResult>,
}

fn evaluate(theta: &[Vec2], scenario: &Scenario, config: &OptimizerConfig) -> Result<Evaluation, OptimizeError> {
    let model = CostModel::new(scenario);
    let ctrl = theta.iter().map(|p| Point::new(p.x, p.y)).collect();
    let n = scenario.physics.n_steps;
    match simulate_generic::<f64>(ctrl, scenario, &model) {
        Ok((totals, steps)) => {
            let result = SimResult {
                steps,
                total_time: totals.time,
                total_cost: totals.cost,
                total_length: totals.length,
            };
            let total = weighted_loss(&totals.time, &totals.cost, config.exponent, config.weights);
            let events = trace::sample_events(&result, config.event_rate)?;
            Ok(Evaluation {
                reward: Reward {
                    time: totals.time,
                    cost: totals.cost,
                    total,
                    length: totals.length,
                },
                events,
                result: Some(result),
            })
        }
        Err(e) => {
            let m = e.step().unwrap_or(n);
            Ok(Evaluation {
                reward: Reward {
                    time: 0.0,
                    cost: 0.0,
                    total: penalty_loss(m, n),
                    length: 0.0,
                },
                events: trace::failed_sample(&e, n),
                result: None,
            })
        }
    }
}

/// Re-simulates `theta` and returns the reward tuple stored for it.
pub fn reward_for(theta: &[Vec2], scenario: &Scenario, config: &OptimizerConfig) -> Result<Reward, OptimizeError> {
    Ok(evaluate(theta, scenario, config)?.reward)
}

pub fn run_optimization(
    scenario: &Scenario,
    config: &OptimizerConfig,
    emitter: &mut dyn SignalEmitter,
) -> Result<OptRun, OptimizeError> {
    config.validate()?;
    scenario.validate()?;
    let started = Instant::now();
    let objective = TrackObjective::new(scenario, config.exponent, config.weights);
    let mut free = flatten_free(&scenario.ctrl_points);
    let mut state = OptState::new(free.len());
    let mut signals = Signals::default();
    let mut theta_history = vec![scenario.ctrl_points.clone()];
    let mut non_finite = 0usize;

    for k in 0..=config.steps {
        let theta = theta_history[k].clone();
        let eval = evaluate(&theta, scenario, config)?;
        emitter.on_event(k, &eval.events);
        emitter.on_reward(k, &eval.reward);
        signals.events.push(eval.events);
        signals.rewards.push(eval.reward);
        if k == config.steps {
            return Ok(OptRun {
                config: config.clone(),
                scenario: scenario.clone(),
                signals,
                theta_history,
                final_result: eval.result,
                wall_clock_secs: started.elapsed().as_secs_f64(),
            });
        }
        if !emitter.keep_going(k) {
            return Err(OptimizeError::Cancelled(k));
        }

        let gradient = match grad(&objective, &free) {
            Ok((value, g)) if value.is_finite() => {
                non_finite = 0;
                g
            }
            Ok((value, _)) => {
                non_finite += 1;
                check_non_finite(non_finite, k, format!("loss {value}"))?;
                vec![0.0; free.len()]
            }
            Err(SimError::Numeric(e)) => {
                non_finite += 1;
                check_non_finite(non_finite, k, e.to_string())?;
                vec![0.0; free.len()]
            }
            // Infeasible tracks carry a constant penalty: zero gradient.
            Err(_) => {
                non_finite = 0;
                vec![0.0; free.len()]
            }
        };
        opt_step(config.optimizer, &mut state, &mut free, &gradient, lr_at(config, k))?;
        let next = unflatten_free(&theta, &free);
        let delta: Vec<Vec2> = next.iter().zip(&theta).map(|(a, b)| *a - *b).collect();
        emitter.on_update(k + 1, &delta);
        signals.updates.push(delta);
        theta_history.push(next);
    }
    unreachable!("loop returns at k == steps")
}

fn check_non_finite(count: usize, iteration: usize, last_error: String) -> Result<(), OptimizeError> {
    if count >= MAX_NON_FINITE {
        return Err(OptimizeError::NonFiniteLoss {
            count,
            iteration,
            last_error,
        });
    }
    Ok(())
}

impl OptRun {
    pub fn initial_reward(&self) -> &Reward {
        &self.signals.rewards[0]
    }

    pub fn final_reward(&self) -> &Reward {
        self.signals.rewards.last().expect("run has rewards")
    }

    pub fn final_theta(&self) -> &[Vec2] {
        self.theta_history.last().expect("run has history")
    }

    /// Scenario with control points replaced by the final iterate.
    pub fn final_scenario(&self) -> Scenario {
        let mut s = self.scenario.clone();
        s.ctrl_points = self.final_theta().to_vec();
        s
    }

    pub fn render_trace(&self, update_rate: usize) -> Result<TraceDocument, TraceError> {
        trace::render_signals(
            &trace::SignalView {
                events: &self.signals.events,
                rewards: &self.signals.rewards,
                theta_history: &self.theta_history,
                obstacles: &self.scenario.obstacles,
            },
            update_rate,
        )
    }

    /// Writes `scenario.json`, `config.json`, `theta_history.jsonl` and
    /// `signals.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), OptimizeError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scenario.json"), self.scenario.encode())?;
        let mut config = serde_json::to_vec_pretty(&self.config).expect("config serializes");
        config.push(b'\n');
        fs::write(dir.join("config.json"), config)?;

        let mut out = io::BufWriter::new(fs::File::create(dir.join("theta_history.jsonl"))?);
        for theta in &self.theta_history {
            serde_json::to_writer(&mut out, theta).expect("theta serializes");
            out.write_all(b"\n")?;
        }
        out.flush()?;

        let mut out = io::BufWriter::new(fs::File::create(dir.join("signals.jsonl"))?);
        for k in 0..self.signals.events.len() {
            let rec = SignalRecord {
                iter: k,
                events: self.signals.events[k].clone(),
                reward: self.signals.rewards[k],
                update: k.checked_sub(1).and_then(|j| self.signals.updates.get(j).cloned()),
            };
            serde_json::to_writer(&mut out, &rec).expect("signals serialize");
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<OptRun, OptimizeError> {
        let scenario = Scenario::decode(&fs::read(dir.join("scenario.json"))?)?;
        let config: OptimizerConfig = serde_json::from_slice(&fs::read(dir.join("config.json"))?)
            .map_err(|source| OptimizeError::Decode {
                file: "config.json",
                source,
            })?;
        let theta_history = read_jsonl::<Vec<Vec2>>(&dir.join("theta_history.jsonl"), "theta_history.jsonl")?;
        let records = read_jsonl::<SignalRecord>(&dir.join("signals.jsonl"), "signals.jsonl")?;
        let mut signals = Signals::default();
        for r in records {
            signals.events.push(r.events);
            signals.rewards.push(r.reward);
            if let Some(u) = r.update {
                signals.updates.push(u);
            }
        }
        let final_result = theta_history
            .last()
            .and_then(|t| crate::simulator::simulate(t, &scenario).ok());
        Ok(OptRun {
            config,
            scenario,
            signals,
            theta_history,
            final_result,
            wall_clock_secs: 0.0,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SignalRecord {
    iter: usize,
    events: EventSample,
    reward: Reward,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    update: Option<Vec<Vec2>>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, file: &'static str) -> Result<Vec<T>, OptimizeError> {
    let reader = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| OptimizeError::Decode { file, source })?);
    }
    Ok(out)
}
