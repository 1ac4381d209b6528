//! Natural-language rendering of optimization signals.
//!
//! Three transformations turn raw signals into sentences: simulation events
//! (per-block channel changes and obstacle influence transitions), reward
//! deltas between consecutive iterations, and per-control-point parameter
//! updates with nearby-obstacle context. Magnitudes are binned relative to
//! an average absolute change so that the wording is scale-free.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{to_grid, GridPos, Obstacle, Vec2};
use crate::simulator::{SimError, SimResult, StepRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("direction of a zero vector is undefined")]
    ZeroVector,
    #[error("rate must be at least 1")]
    ZeroRate,
    #[error("parameter vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Qualitative magnitude, ordered from smallest to largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NoChange,
    VerySmall,
    Small,
    Medium,
    Large,
    VeryLarge,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::NoChange => "no change",
            Label::VerySmall => "very small",
            Label::Small => "small",
            Label::Medium => "medium",
            Label::Large => "large",
            Label::VeryLarge => "very large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bin {
    pub label: Label,
    pub sign: Sign,
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            Sign::None => f.write_str(self.label.as_str()),
            Sign::Positive => write!(f, "{} (positive)", self.label.as_str()),
            Sign::Negative => write!(f, "{} (negative)", self.label.as_str()),
        }
    }
}

/// Upper edges of the ratio `|delta| / avg` for each non-zero label.
pub const BIN_EDGES: [f64; 4] = [0.25, 0.75, 1.5, 3.0];
const AVG_FLOOR: f64 = 1e-12;

pub fn bin_magnitude(delta: f64, avg_abs: f64) -> Bin {
    if delta == 0.0 || delta.is_nan() {
        return Bin {
            label: Label::NoChange,
            sign: Sign::None,
        };
    }
    let r = delta.abs() / avg_abs.max(AVG_FLOOR);
    let label = if r < BIN_EDGES[0] {
        Label::VerySmall
    } else if r < BIN_EDGES[1] {
        Label::Small
    } else if r < BIN_EDGES[2] {
        Label::Medium
    } else if r < BIN_EDGES[3] {
        Label::Large
    } else {
        Label::VeryLarge
    };
    let sign = if delta > 0.0 {
        Sign::Positive
    } else {
        Sign::Negative
    };
    Bin { label, sign }
}

/// Sixteen-wind compass direction; `E` is centered on the positive x axis
/// and sectors advance counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compass16 {
    E,
    ENE,
    NE,
    NNE,
    N,
    NNW,
    NW,
    WNW,
    W,
    WSW,
    SW,
    SSW,
    S,
    SSE,
    SE,
    ESE,
}

impl Compass16 {
    pub const ALL: [Compass16; 16] = [
        Compass16::E,
        Compass16::ENE,
        Compass16::NE,
        Compass16::NNE,
        Compass16::N,
        Compass16::NNW,
        Compass16::NW,
        Compass16::WNW,
        Compass16::W,
        Compass16::WSW,
        Compass16::SW,
        Compass16::SSW,
        Compass16::S,
        Compass16::SSE,
        Compass16::SE,
        Compass16::ESE,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap_or(0)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Compass16::E => "E",
            Compass16::ENE => "ENE",
            Compass16::NE => "NE",
            Compass16::NNE => "NNE",
            Compass16::N => "N",
            Compass16::NNW => "NNW",
            Compass16::NW => "NW",
            Compass16::WNW => "WNW",
            Compass16::W => "W",
            Compass16::WSW => "WSW",
            Compass16::SW => "SW",
            Compass16::SSW => "SSW",
            Compass16::S => "S",
            Compass16::SSE => "SSE",
            Compass16::SE => "SE",
            Compass16::ESE => "ESE",
        }
    }
}

impl fmt::Display for Compass16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn compass16(delta: Vec2) -> Result<Compass16, TraceError> {
    if delta.x == 0.0 && delta.y == 0.0 {
        return Err(TraceError::ZeroVector);
    }
    let deg = delta.y.atan2(delta.x).to_degrees();
    let sector = (deg / 22.5).round().rem_euclid(16.0) as usize;
    Ok(Compass16::ALL[sector % 16])
}

/// Per-step quantities summarized in event blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventChannel {
    Speed,
    Acceleration,
    Cost,
    Curvature,
    AirResistance,
}

impl EventChannel {
    pub const ALL: [EventChannel; 5] = [
        EventChannel::Speed,
        EventChannel::Acceleration,
        EventChannel::Cost,
        EventChannel::Curvature,
        EventChannel::AirResistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventChannel::Speed => "speed",
            EventChannel::Acceleration => "acceleration",
            EventChannel::Cost => "cost",
            EventChannel::Curvature => "curvature",
            EventChannel::AirResistance => "air resistance",
        }
    }

    pub fn value(self, r: &StepRecord) -> f64 {
        match self {
            EventChannel::Speed => r.v_out,
            EventChannel::Acceleration => r.a_net,
            EventChannel::Cost => r.c,
            EventChannel::Curvature => r.kappa,
            EventChannel::AirResistance => r.a_air.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardChannel {
    Time,
    Cost,
    Total,
    Length,
}

impl RewardChannel {
    pub const ALL: [RewardChannel; 4] = [
        RewardChannel::Time,
        RewardChannel::Cost,
        RewardChannel::Total,
        RewardChannel::Length,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardChannel::Time => "time",
            RewardChannel::Cost => "cost",
            RewardChannel::Total => "total",
            RewardChannel::Length => "length",
        }
    }
}

/// Raw (unbinned) summary of one block of simulation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBlock {
    pub first_step: usize,
    pub last_step: usize,
    pub from: GridPos,
    pub to: GridPos,
    /// Last minus first value, in [`EventChannel::ALL`] order.
    pub deltas: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEvent {
    pub step: usize,
    pub at: GridPos,
    pub nickname: String,
    pub entered: bool,
}

/// The event signal of one simulation, sampled every `event_rate` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EventSample {
    pub blocks: Vec<EventBlock>,
    pub influences: Vec<InfluenceEvent>,
    /// Step at which the simulation failed, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<usize>,
}

fn grid(x: Vec2) -> GridPos {
    to_grid(x).unwrap_or(GridPos { gx: 0, gy: 0 })
}

/// Extracts block summaries and influence transitions from a simulation.
pub fn sample_events(result: &SimResult, event_rate: usize) -> Result<EventSample, TraceError> {
    if event_rate == 0 {
        return Err(TraceError::ZeroRate);
    }
    let steps = &result.steps;
    let blocks = steps
        .chunks(event_rate)
        .map(|chunk| {
            let first = &chunk[0];
            let last = &chunk[chunk.len() - 1];
            let mut deltas = [0.0; 5];
            for (d, ch) in deltas.iter_mut().zip(EventChannel::ALL) {
                *d = ch.value(last) - ch.value(first);
            }
            EventBlock {
                first_step: first.m,
                last_step: last.m,
                from: grid(first.x),
                to: grid(last.x),
                deltas,
            }
        })
        .collect();

    let mut influences = Vec::new();
    let mut active: Vec<String> = Vec::new();
    for r in steps {
        for name in &active {
            if !r.influences.contains(name) {
                influences.push(InfluenceEvent {
                    step: r.m,
                    at: grid(r.x),
                    nickname: name.clone(),
                    entered: false,
                });
            }
        }
        for name in &r.influences {
            if !active.contains(name) {
                influences.push(InfluenceEvent {
                    step: r.m,
                    at: grid(r.x),
                    nickname: name.clone(),
                    entered: true,
                });
            }
        }
        active = r.influences.clone();
    }
    if let Some(last) = steps.last() {
        // Close any influence still open at the end of the track.
        for name in active {
            influences.push(InfluenceEvent {
                step: last.m,
                at: grid(last.x),
                nickname: name,
                entered: false,
            });
        }
    }
    Ok(EventSample {
        blocks,
        influences,
        failed_step: None,
    })
}

/// Event sample for a simulation that did not complete.
pub fn failed_sample(err: &SimError, n_steps: usize) -> EventSample {
    EventSample {
        failed_step: Some(err.step().unwrap_or(n_steps)),
        ..EventSample::default()
    }
}

/// How event changes are located in text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStyle {
    /// `(5,5) → (10,10) Change in speed: ...`
    #[default]
    Span,
    /// `Change in speed: ..., at grid position (10, 10)`
    Point,
}

/// Proximity context of a control point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Proximity {
    Close { nicknames: Vec<String> },
    Isolated { nearest: Option<String> },
}

impl fmt::Display for Proximity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proximity::Close { nicknames } => {
                let parts: Vec<String> = nicknames
                    .iter()
                    .map(|n| format!("{n} is close by"))
                    .collect();
                f.write_str(&parts.join(", "))
            }
            Proximity::Isolated { nearest: Some(n) } => {
                write!(f, "No objects are close by, nearest is {n}")
            }
            Proximity::Isolated { nearest: None } => f.write_str("No objects are close by"),
        }
    }
}

/// Obstacles within twice their radius of `p`, or the nearest one.
pub fn proximity(p: Vec2, obstacles: &[Obstacle]) -> Proximity {
    let close: Vec<String> = obstacles
        .iter()
        .filter(|o| p.distance(o.center) <= 2.0 * o.radius)
        .map(|o| o.nickname.clone())
        .collect();
    if !close.is_empty() {
        return Proximity::Close { nicknames: close };
    }
    let nearest = obstacles
        .iter()
        .map(|o| (p.distance(o.center) - o.radius, &o.nickname))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, n)| n.clone());
    Proximity::Isolated { nearest }
}

/// Machine-readable content of a trace line; the text is a pure function
/// of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    EventSpan {
        channel: EventChannel,
        bin: Bin,
        delta: f64,
        from: GridPos,
        to: GridPos,
        steps: [usize; 2],
    },
    EventPoint {
        channel: EventChannel,
        bin: Bin,
        delta: f64,
        at: GridPos,
        step: usize,
    },
    Influence {
        entered: bool,
        nickname: String,
        at: GridPos,
        step: usize,
    },
    SimulationFailed {
        step: usize,
    },
    Reward {
        channel: RewardChannel,
        bin: Bin,
        delta: f64,
    },
    Update {
        index: usize,
        bin: Bin,
        magnitude: f64,
        direction: Option<Compass16>,
        previous: Proximity,
        new: Proximity,
    },
}

impl Payload {
    pub fn render(&self) -> String {
        match self {
            Payload::EventSpan {
                channel,
                bin,
                from,
                to,
                ..
            } => format!(
                "({},{}) → ({},{}) Change in {}: {}",
                from.gx,
                from.gy,
                to.gx,
                to.gy,
                channel.name(),
                bin
            ),
            Payload::EventPoint {
                channel, bin, at, ..
            } => format!("Change in {}: {}, at grid position {}", channel.name(), bin, at),
            Payload::Influence {
                entered,
                nickname,
                at,
                ..
            } => format!(
                "{} {} influence at grid position {}",
                if *entered { "Entered" } else { "Exited" },
                nickname,
                at
            ),
            Payload::SimulationFailed { step } => {
                format!("Simulation failed: train stalls in interval {step}")
            }
            Payload::Reward { channel, bin, .. } => {
                format!("Change in {}: {}", channel.name(), bin)
            }
            Payload::Update {
                index,
                bin,
                direction,
                previous,
                new,
                ..
            } => {
                let magnitude = match direction {
                    Some(d) => format!("{} ({})", bin.label.as_str(), d),
                    None => bin.label.as_str().to_string(),
                };
                format!(
                    "Control point {index}: Magnitude: {magnitude}. Previous position: {previous}. New position: {new}."
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub text: String,
    pub payload: Payload,
}

impl From<Payload> for TraceLine {
    fn from(payload: Payload) -> Self {
        TraceLine {
            text: payload.render(),
            payload,
        }
    }
}

/// Mean absolute delta per event channel over the blocks of a sample.
pub fn event_averages(sample: &EventSample) -> [f64; 5] {
    let mut avg = [0.0; 5];
    if sample.blocks.is_empty() {
        return avg;
    }
    for b in &sample.blocks {
        for (a, d) in avg.iter_mut().zip(b.deltas) {
            *a += d.abs();
        }
    }
    avg.map(|a| a / sample.blocks.len() as f64)
}

/// Event lines: five channel lines per block, then influence transitions,
/// interleaved in step order.
pub fn phi_e_sample(sample: &EventSample, style: EventStyle) -> Vec<TraceLine> {
    if let Some(step) = sample.failed_step {
        return vec![Payload::SimulationFailed { step }.into()];
    }
    let avg = event_averages(sample);
    let mut out = Vec::new();
    let mut influences = sample.influences.iter().peekable();
    for block in &sample.blocks {
        while let Some(ev) = influences.next_if(|e| e.step < block.first_step) {
            out.push(influence_line(ev));
        }
        for (i, ch) in EventChannel::ALL.iter().enumerate() {
            let delta = block.deltas[i];
            let bin = bin_magnitude(delta, avg[i]);
            let payload = match style {
                EventStyle::Span => Payload::EventSpan {
                    channel: *ch,
                    bin,
                    delta,
                    from: block.from,
                    to: block.to,
                    steps: [block.first_step, block.last_step],
                },
                EventStyle::Point => Payload::EventPoint {
                    channel: *ch,
                    bin,
                    delta,
                    at: block.to,
                    step: block.last_step,
                },
            };
            out.push(payload.into());
        }
        while let Some(ev) = influences.next_if(|e| e.step <= block.last_step) {
            out.push(influence_line(ev));
        }
    }
    out.extend(influences.map(influence_line));
    out
}

fn influence_line(ev: &InfluenceEvent) -> TraceLine {
    Payload::Influence {
        entered: ev.entered,
        nickname: ev.nickname.clone(),
        at: ev.at,
        step: ev.step,
    }
    .into()
}

/// Event lines of a finished simulation.
pub fn phi_e(result: &SimResult, event_rate: usize) -> Result<Vec<TraceLine>, TraceError> {
    Ok(phi_e_sample(&sample_events(result, event_rate)?, EventStyle::Span))
}

/// Reward tuple of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub time: f64,
    pub cost: f64,
    /// The loss value.
    pub total: f64,
    pub length: f64,
}

impl Reward {
    pub fn get(&self, ch: RewardChannel) -> f64 {
        match ch {
            RewardChannel::Time => self.time,
            RewardChannel::Cost => self.cost,
            RewardChannel::Total => self.total,
            RewardChannel::Length => self.length,
        }
    }
}

/// Mean absolute consecutive delta per reward channel.
pub fn reward_averages(rewards: &[Reward]) -> Reward {
    let n = rewards.len().saturating_sub(1).max(1) as f64;
    let mut sums = [0.0; 4];
    for w in rewards.windows(2) {
        for (s, ch) in sums.iter_mut().zip(RewardChannel::ALL) {
            *s += (w[1].get(ch) - w[0].get(ch)).abs();
        }
    }
    Reward {
        time: sums[0] / n,
        cost: sums[1] / n,
        total: sums[2] / n,
        length: sums[3] / n,
    }
}

pub fn phi_r(current: &Reward, previous: &Reward, averages: &Reward) -> Vec<TraceLine> {
    RewardChannel::ALL
        .iter()
        .map(|&ch| {
            let delta = current.get(ch) - previous.get(ch);
            Payload::Reward {
                channel: ch,
                bin: bin_magnitude(delta, averages.get(ch)),
                delta,
            }
            .into()
        })
        .collect()
}

/// Mean movement norm of free control points over consecutive iterates.
pub fn update_average(history: &[Vec<Vec2>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in history.windows(2) {
        let n = w[0].len();
        for (a, b) in w[0].iter().zip(&w[1]).take(n.saturating_sub(1)).skip(1) {
            sum += (*b - *a).norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One line per free control point, numbered by control-point index.
pub fn phi_u(
    current: &[Vec2],
    previous: &[Vec2],
    obstacles: &[Obstacle],
    run_avg: f64,
) -> Result<Vec<TraceLine>, TraceError> {
    if current.len() != previous.len() {
        return Err(TraceError::LengthMismatch(current.len(), previous.len()));
    }
    let n = current.len();
    Ok((1..n.saturating_sub(1))
        .map(|i| {
            let delta = current[i] - previous[i];
            let magnitude = delta.norm();
            Payload::Update {
                index: i,
                bin: bin_magnitude(magnitude, run_avg),
                magnitude,
                direction: compass16(delta).ok(),
                previous: proximity(previous[i], obstacles),
                new: proximity(current[i], obstacles),
            }
            .into()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Event,
    Reward,
    Update,
}

/// One JSONL record of a rendered trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub kind: RecordKind,
    pub text: String,
    pub payload: Payload,
}

/// Iteration-ordered lines of a whole optimization run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceDocument {
    pub records: Vec<TraceRecord>,
}

impl TraceDocument {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    /// Text fields joined in order, one per line.
    pub fn to_plain_text(&self) -> String {
        plain_text(self.records.iter().map(|r| r.text.as_str()))
    }

    pub fn lines(&self, iter: usize, kind: RecordKind) -> Vec<&TraceRecord> {
        self.records
            .iter()
            .filter(|r| r.iter == iter && r.kind == kind)
            .collect()
    }

    pub fn iterations_with(&self, kind: RecordKind) -> Vec<usize> {
        let mut its: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.iter)
            .collect();
        its.dedup();
        its
    }
}

pub fn plain_text<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out
}

/// Raw signals of an optimization run, as consumed by [`render_signals`].
pub struct SignalView<'a> {
    pub events: &'a [EventSample],
    pub rewards: &'a [Reward],
    pub theta_history: &'a [Vec<Vec2>],
    pub obstacles: &'a [Obstacle],
}

/// Renders events for every iteration, rewards from iteration 1, and
/// parameter updates at every `update_rate`-th iteration.
pub fn render_signals(view: &SignalView<'_>, update_rate: usize) -> Result<TraceDocument, TraceError> {
    if update_rate == 0 {
        return Err(TraceError::ZeroRate);
    }
    let reward_avg = reward_averages(view.rewards);
    let update_avg = update_average(view.theta_history);
    let mut records = Vec::new();
    let mut push = |iter: usize, kind: RecordKind, lines: Vec<TraceLine>| {
        for l in lines {
            records.push(TraceRecord {
                iter,
                kind,
                text: l.text,
                payload: l.payload,
            });
        }
    };
    for (k, sample) in view.events.iter().enumerate() {
        push(k, RecordKind::Event, phi_e_sample(sample, EventStyle::Span));
        if k >= 1 {
            if let (Some(cur), Some(prev)) = (view.rewards.get(k), view.rewards.get(k - 1)) {
                push(k, RecordKind::Reward, phi_r(cur, prev, &reward_avg));
            }
            if k % update_rate == 0 {
                if let (Some(cur), Some(prev)) =
                    (view.theta_history.get(k), view.theta_history.get(k - 1))
                {
                    push(
                        k,
                        RecordKind::Update,
                        phi_u(cur, prev, view.obstacles, update_avg)?,
                    );
                }
            }
        }
    }
    Ok(TraceDocument { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_scenario;
    use crate::simulator::simulate;

    fn obstacle(name: &str, x: f64, y: f64, r: f64) -> Obstacle {
        Obstacle {
            nickname: name.into(),
            center: Vec2::new(x, y),
            radius: r,
            penalty: 1.0,
            cost: 0.5,
        }
    }

    #[test]
    fn bins() {
        assert_eq!(bin_magnitude(0.0, 1.0).to_string(), "no change");
        assert_eq!(bin_magnitude(2.0, 1.0).to_string(), "large (positive)");
        assert_eq!(bin_magnitude(-0.1, 1.0).to_string(), "very small (negative)");
        assert_eq!(bin_magnitude(0.75, 1.0).label, Label::Medium);
        assert_eq!(bin_magnitude(3.0, 1.0).label, Label::VeryLarge);
        assert_eq!(bin_magnitude(1e-3, 0.0).label, Label::VeryLarge);
    }

    #[test]
    fn compass() {
        assert_eq!(compass16(Vec2::new(1.0, 0.0)).unwrap(), Compass16::E);
        assert_eq!(compass16(Vec2::new(0.0, 1.0)).unwrap(), Compass16::N);
        assert_eq!(compass16(Vec2::new(0.9, -0.35)).unwrap(), Compass16::ESE);
        assert_eq!(compass16(Vec2::new(-1.0, -1.0)).unwrap(), Compass16::SW);
        assert_eq!(compass16(Vec2::new(0.0, 0.0)), Err(TraceError::ZeroVector));
    }

    #[test]
    fn golden_lines() {
        let point: TraceLine = Payload::EventPoint {
            channel: EventChannel::Acceleration,
            bin: bin_magnitude(0.5, 1.0),
            delta: 0.5,
            at: GridPos { gx: 10, gy: 20 },
            step: 3,
        }
        .into();
        assert_eq!(
            point.text,
            "Change in acceleration: small (positive), at grid position (10, 20)"
        );
        let span: TraceLine = Payload::EventSpan {
            channel: EventChannel::Speed,
            bin: bin_magnitude(5.0, 1.0),
            delta: 5.0,
            from: GridPos { gx: 5, gy: 5 },
            to: GridPos { gx: 10, gy: 10 },
            steps: [0, 4],
        }
        .into();
        assert_eq!(span.text, "(5,5) → (10,10) Change in speed: very large (positive)");
        let prev = Reward {
            time: 2.0,
            cost: 1.0,
            total: 3.0,
            length: 1.3,
        };
        let cur = Reward {
            time: 1.0,
            ..prev
        };
        let avg = Reward {
            time: 0.1,
            cost: 0.1,
            total: 0.1,
            length: 0.1,
        };
        let lines = phi_r(&cur, &prev, &avg);
        assert_eq!(lines[0].text, "Change in time: very large (negative)");
        assert_eq!(lines[1].text, "Change in cost: no change");
    }

    #[test]
    fn update_lines() {
        let obs = vec![
            obstacle("small sandbox", 0.5, 0.5, 0.05),
            obstacle("big pond", 0.9, 0.1, 0.05),
        ];
        let prev = vec![Vec2::new(0.0, 0.0), Vec2::new(0.52, 0.5), Vec2::new(0.2, 0.8), Vec2::new(1.0, 1.0)];
        let cur = vec![Vec2::new(0.0, 0.0), Vec2::new(0.53, 0.496), Vec2::new(0.2, 0.8), Vec2::new(1.0, 1.0)];
        let lines = phi_u(&cur, &prev, &obs, 0.1).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0].text,
            "Control point 1: Magnitude: very small (ESE). Previous position: small sandbox is close by. New position: small sandbox is close by."
        );
        assert_eq!(
            lines[1].text,
            "Control point 2: Magnitude: no change. Previous position: No objects are close by, nearest is small sandbox. New position: No objects are close by, nearest is small sandbox."
        );
        assert_eq!(
            proximity(Vec2::new(0.95, 0.3), &obs).to_string(),
            "No objects are close by, nearest is big pond"
        );
    }

    #[test]
    fn event_blocks_shape() {
        let s = generate_scenario(5, 20, 16).unwrap();
        let r = simulate(&s.ctrl_points, &s).unwrap();
        let sample = sample_events(&r, 10).unwrap();
        assert_eq!(sample.blocks.len(), 10);
        let lines = phi_e(&r, 10).unwrap();
        let spans = lines
            .iter()
            .filter(|l| matches!(l.payload, Payload::EventSpan { .. }))
            .count();
        assert_eq!(spans, 50);
        for l in &lines {
            assert_eq!(l.text, l.payload.render());
        }
        assert_eq!(sample_events(&r, 7).unwrap().blocks.len(), 15);
    }

    #[test]
    fn constant_speed_line_has_no_change() {
        let mut s = generate_scenario(2, 0, 2).unwrap();
        s.cost_field.amplitude = 0.0;
        s.physics.v0 = s.physics.v_max;
        s.physics.a_base = 0.0;
        s.physics.mu_fric = 0.0;
        s.physics.mu_air = 0.0;
        let r = simulate(&s.ctrl_points, &s).unwrap();
        for l in phi_e(&r, 10).unwrap() {
            match l.payload {
                Payload::EventSpan { bin, .. } => assert_eq!(bin.label, Label::NoChange),
                _ => panic!("unexpected line {}", l.text),
            }
        }
    }

    #[test]
    fn influence_lines_balance() {
        let mut s = generate_scenario(2, 0, 2).unwrap();
        s.obstacles.push(obstacle("small car", 0.5, 0.5, 0.05));
        let r = simulate(&s.ctrl_points, &s).unwrap();
        let sample = sample_events(&r, 10).unwrap();
        assert_eq!(sample.influences.len(), 2);
        assert!(sample.influences[0].entered);
        assert!(!sample.influences[1].entered);
        let lines = phi_e_sample(&sample, EventStyle::Span);
        let entry = lines.iter().find(|l| l.text.starts_with("Entered")).unwrap();
        assert!(entry.text.starts_with("Entered small car influence at grid position ("));
    }
}
