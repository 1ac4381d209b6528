//! World state: obstacles, control points, cost field and physics constants,
//! plus seeded generation, the JSON file format and state-change commands.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

/// Side length of the integer grid used in all LM-facing text.
pub const GRID_SIZE: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("coordinate is not finite: ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("grid position ({0}, {1}) outside 0..{GRID_SIZE}")]
    OffGrid(f64, f64),
    #[error("need at least 2 control points, got {0}")]
    TooFewControlPoints(usize),
    #[error("requested {requested} obstacles but only {available} nicknames exist")]
    VocabularyExhausted { requested: usize, available: usize },
    #[error("duplicate obstacle nickname `{0}`")]
    DuplicateNickname(String),
    #[error("unknown obstacle `{0}`")]
    UnknownNickname(String),
    #[error("control point index {index} out of range (have {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("control point {0} is a fixed endpoint")]
    FixedEndpoint(usize),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("malformed scenario: {0}")]
    Decode(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidField {
        field: field.into(),
        reason: reason.into(),
    }
}

/// A point in world space (nominally the unit square).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Vec2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Serialize for Vec2 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec2 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Vec2 { x, y })
    }
}

/// Integer cell on the 100x100 grid; `(0, 0)` is bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPos {
    pub gx: u32,
    pub gy: u32,
}

impl GridPos {
    pub fn new(gx: u32, gy: u32) -> Result<Self, ScenarioError> {
        if gx >= GRID_SIZE || gy >= GRID_SIZE {
            return Err(ScenarioError::OffGrid(gx as f64, gy as f64));
        }
        Ok(Self { gx, gy })
    }

    /// Center of the cell in world coordinates.
    pub fn to_world(self) -> Vec2 {
        let n = GRID_SIZE as f64;
        Vec2::new(
            round_sig9((self.gx as f64 + 0.5) / n),
            round_sig9((self.gy as f64 + 0.5) / n),
        )
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.gx, self.gy)
    }
}

impl Serialize for GridPos {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.gx, self.gy].serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridPos {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        // LMs sometimes emit `50.0`; accept integral floats.
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        let ok = |v: f64| v.is_finite() && v.fract() == 0.0 && (0.0..GRID_SIZE as f64).contains(&v);
        if !ok(x) || !ok(y) {
            return Err(de::Error::custom(ScenarioError::OffGrid(x, y)));
        }
        Ok(GridPos {
            gx: x as u32,
            gy: y as u32,
        })
    }
}

/// World to grid: `floor(coord * 100)` clamped to `0..=99`.
pub fn to_grid(p: Vec2) -> Result<GridPos, ScenarioError> {
    if p.x.is_nan() || p.y.is_nan() {
        return Err(ScenarioError::NonFinite(p.x, p.y));
    }
    let cell = |v: f64| (v * GRID_SIZE as f64).floor().clamp(0.0, (GRID_SIZE - 1) as f64) as u32;
    Ok(GridPos {
        gx: cell(p.x),
        gy: cell(p.y),
    })
}

/// Rounds to 9 significant digits, the precision of the file format.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub nickname: String,
    pub center: Vec2,
    pub radius: f64,
    /// Deceleration magnitude at the center.
    pub penalty: f64,
    /// Peak local construction cost.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsParams {
    pub a_base: f64,
    pub kappa_gain: f64,
    pub mu_fric: f64,
    pub mu_air: f64,
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub n_steps: usize,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            a_base: 5.0,
            kappa_gain: 0.15,
            mu_fric: 0.2,
            mu_air: 0.5,
            v0: 1.0,
            v_min: 0.05,
            v_max: 5.0,
            n_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostField {
    pub seed: u64,
    pub frequency: f64,
    pub octaves: u32,
    pub amplitude: f64,
    pub offset: f64,
}

impl CostField {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            frequency: 3.0,
            octaves: 3,
            amplitude: 0.3,
            offset: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub physics: PhysicsParams,
    pub cost_field: CostField,
    /// Bezier control points; the first and last are fixed.
    pub ctrl_points: Vec<Vec2>,
    pub obstacles: Vec<Obstacle>,
}

const SIZES: [&str; 2] = ["small", "big"];
const NOUNS: [&str; 30] = [
    "bench", "building", "pond", "shed", "statue", "lamp", "sandbox", "valley", "tower",
    "fountain", "barrel", "bush", "gate", "wall", "flowerbed", "car", "rock", "tree", "crate",
    "river", "house", "fence", "well", "hut", "garden", "bridge", "kiosk", "silo", "barn",
    "hedge",
];

/// Every nickname the generator can draw, in vocabulary order.
pub fn nickname_vocabulary() -> Vec<String> {
    SIZES
        .iter()
        .flat_map(|s| NOUNS.iter().map(move |n| format!("{s} {n}")))
        .collect()
}

pub const TRACK_START: Vec2 = Vec2::new(0.05, 0.05);
pub const TRACK_END: Vec2 = Vec2::new(0.95, 0.95);
const CTRL_JITTER: f64 = 0.04;

// Independent RNG streams per concern.
const STREAM_OBSTACLES: u64 = 1;
const STREAM_NICKNAMES: u64 = 2;
const STREAM_CTRL: u64 = 3;

/// Random world with default physics and a cost field seeded from `seed`.
pub fn generate_scenario(
    seed: u64,
    n_obstacles: usize,
    n_ctrl: usize,
) -> Result<Scenario, ScenarioError> {
    if n_ctrl < 2 {
        return Err(ScenarioError::TooFewControlPoints(n_ctrl));
    }
    let mut vocab = nickname_vocabulary();
    if n_obstacles > vocab.len() {
        return Err(ScenarioError::VocabularyExhausted {
            requested: n_obstacles,
            available: vocab.len(),
        });
    }
    SeededRng::new(seed, STREAM_NICKNAMES).shuffle(&mut vocab);

    let mut rng = SeededRng::new(seed, STREAM_OBSTACLES);
    let obstacles = vocab
        .into_iter()
        .take(n_obstacles)
        .map(|nickname| Obstacle {
            nickname,
            center: Vec2::new(rng.uniform_range(0.1, 0.9), rng.uniform_range(0.1, 0.9)),
            radius: rng.uniform_range(0.02, 0.06),
            penalty: rng.uniform_range(0.5, 3.0),
            cost: rng.uniform_range(0.1, 1.0),
        })
        .collect();

    let mut rng = SeededRng::new(seed, STREAM_CTRL);
    let n = (n_ctrl - 1) as f64;
    let ctrl_points = (0..n_ctrl)
        .map(|i| {
            let t = i as f64 / n;
            let base = Vec2::new(
                TRACK_START.x + (TRACK_END.x - TRACK_START.x) * t,
                TRACK_START.y + (TRACK_END.y - TRACK_START.y) * t,
            );
            if i == 0 || i == n_ctrl - 1 {
                base
            } else {
                Vec2::new(
                    base.x + rng.uniform_range(-CTRL_JITTER, CTRL_JITTER),
                    base.y + rng.uniform_range(-CTRL_JITTER, CTRL_JITTER),
                )
            }
        })
        .collect();

    let mut scenario = Scenario {
        seed,
        physics: PhysicsParams::default(),
        cost_field: CostField::with_seed(seed),
        ctrl_points,
        obstacles,
    };
    scenario.canonicalize();
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Rounds every float to file precision so encode/decode is exact.
    pub fn canonicalize(&mut self) {
        let p = &mut self.physics;
        for v in [
            &mut p.a_base,
            &mut p.kappa_gain,
            &mut p.mu_fric,
            &mut p.mu_air,
            &mut p.v0,
            &mut p.v_min,
            &mut p.v_max,
        ] {
            *v = round_sig9(*v);
        }
        let c = &mut self.cost_field;
        c.frequency = round_sig9(c.frequency);
        c.amplitude = round_sig9(c.amplitude);
        c.offset = round_sig9(c.offset);
        for pt in &mut self.ctrl_points {
            pt.x = round_sig9(pt.x);
            pt.y = round_sig9(pt.y);
        }
        for o in &mut self.obstacles {
            o.center.x = round_sig9(o.center.x);
            o.center.y = round_sig9(o.center.y);
            o.radius = round_sig9(o.radius);
            o.penalty = round_sig9(o.penalty);
            o.cost = round_sig9(o.cost);
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.ctrl_points.len() < 2 {
            return Err(ScenarioError::TooFewControlPoints(self.ctrl_points.len()));
        }
        for (i, p) in self.ctrl_points.iter().enumerate() {
            if !p.is_finite() {
                return Err(invalid(format!("ctrl_points[{i}]"), "not finite"));
            }
        }
        let p = &self.physics;
        for (name, v) in [
            ("physics.a_base", p.a_base),
            ("physics.kappa_gain", p.kappa_gain),
            ("physics.mu_fric", p.mu_fric),
            ("physics.mu_air", p.mu_air),
            ("physics.v0", p.v0),
            ("physics.v_min", p.v_min),
            ("physics.v_max", p.v_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if p.v_min >= p.v_max {
            return Err(invalid("physics.v_min", "must be below v_max"));
        }
        if p.n_steps < 2 {
            return Err(invalid("physics.n_steps", "must be at least 2"));
        }
        let c = &self.cost_field;
        if c.octaves < 1 {
            return Err(invalid("cost_field.octaves", "must be at least 1"));
        }
        if !(c.frequency.is_finite() && c.frequency > 0.0) {
            return Err(invalid("cost_field.frequency", "must be positive"));
        }
        if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
            return Err(invalid("cost_field.amplitude", "must be non-negative"));
        }
        if !(c.offset.is_finite() && c.offset >= c.amplitude) {
            return Err(invalid("cost_field.offset", "must be at least amplitude"));
        }
        let mut seen = BTreeSet::new();
        for (i, o) in self.obstacles.iter().enumerate() {
            if !seen.insert(o.nickname.as_str()) {
                return Err(ScenarioError::DuplicateNickname(o.nickname.clone()));
            }
            if !o.center.is_finite() {
                return Err(invalid(format!("obstacles[{i}].center"), "not finite"));
            }
            if !(o.radius.is_finite() && o.radius > 0.0) {
                return Err(invalid(format!("obstacles[{i}].radius"), "must be positive"));
            }
            if !(o.penalty.is_finite() && o.penalty >= 0.0) {
                return Err(invalid(format!("obstacles[{i}].penalty"), "must be non-negative"));
            }
            if !(o.cost.is_finite() && o.cost >= 0.0) {
                return Err(invalid(format!("obstacles[{i}].cost"), "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn obstacle(&self, nickname: &str) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.nickname == nickname)
    }

    fn obstacle_index(&self, nickname: &str) -> Result<usize, ScenarioError> {
        self.obstacles
            .iter()
            .position(|o| o.nickname == nickname)
            .ok_or_else(|| ScenarioError::UnknownNickname(nickname.to_string()))
    }

    /// Same world with one obstacle removed.
    pub fn without_obstacle(&self, nickname: &str) -> Result<Scenario, ScenarioError> {
        apply_command(
            self,
            &StateCommand::RemoveObstacle {
                nickname: nickname.to_string(),
            },
        )
    }

    /// Indices of control points that the optimizer may move.
    pub fn free_indices(&self) -> std::ops::Range<usize> {
        1..self.ctrl_points.len().saturating_sub(1)
    }

    /// Canonical JSON bytes (sorted keys, 9 significant digits).
    pub fn encode(&self) -> Vec<u8> {
        let mut canon = self.clone();
        canon.canonicalize();
        let mut value = serde_json::to_value(&canon).expect("scenario serializes");
        value.sort_all_objects();
        let mut out = serde_json::to_vec_pretty(&value).expect("json value serializes");
        out.push(b'\n');
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
        let s: Scenario =
            serde_json::from_slice(bytes).map_err(|e| ScenarioError::Decode(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

fn default_radius() -> f64 {
    0.05
}
fn default_penalty() -> f64 {
    2.0
}
fn default_cost() -> f64 {
    0.5
}

/// A state change, in the JSON shape LMs are asked to produce. Positions
/// are grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StateCommand {
    AddObstacle {
        center: GridPos,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_penalty")]
        penalty: f64,
        #[serde(default = "default_cost")]
        cost: f64,
        nickname: String,
    },
    RemoveObstacle {
        nickname: String,
    },
    MoveObstacle {
        nickname: String,
        center: GridPos,
    },
    ModifyObstacle {
        nickname: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        penalty: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cost: Option<f64>,
    },
    ModifyCtrlPoint {
        index: usize,
        position: GridPos,
    },
}

impl StateCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            StateCommand::AddObstacle { .. } => "add_obstacle",
            StateCommand::RemoveObstacle { .. } => "remove_obstacle",
            StateCommand::MoveObstacle { .. } => "move_obstacle",
            StateCommand::ModifyObstacle { .. } => "modify_obstacle",
            StateCommand::ModifyCtrlPoint { .. } => "modify_ctrl_point",
        }
    }
}

/// Applies one command, returning a new validated scenario.
pub fn apply_command(s: &Scenario, c: &StateCommand) -> Result<Scenario, ScenarioError> {
    let mut next = s.clone();
    match c {
        StateCommand::AddObstacle {
            center,
            radius,
            penalty,
            cost,
            nickname,
        } => {
            if next.obstacle(nickname).is_some() {
                return Err(ScenarioError::DuplicateNickname(nickname.clone()));
            }
            next.obstacles.push(Obstacle {
                nickname: nickname.clone(),
                center: center.to_world(),
                radius: *radius,
                penalty: *penalty,
                cost: *cost,
            });
        }
        StateCommand::RemoveObstacle { nickname } => {
            let i = next.obstacle_index(nickname)?;
            next.obstacles.remove(i);
        }
        StateCommand::MoveObstacle { nickname, center } => {
            let i = next.obstacle_index(nickname)?;
            next.obstacles[i].center = center.to_world();
        }
        StateCommand::ModifyObstacle {
            nickname,
            radius,
            penalty,
            cost,
        } => {
            let i = next.obstacle_index(nickname)?;
            let o = &mut next.obstacles[i];
            if let Some(r) = radius {
                o.radius = *r;
            }
            if let Some(p) = penalty {
                o.penalty = *p;
            }
            if let Some(c) = cost {
                o.cost = *c;
            }
        }
        StateCommand::ModifyCtrlPoint { index, position } => {
            let count = next.ctrl_points.len();
            if *index >= count {
                return Err(ScenarioError::IndexOutOfRange {
                    index: *index,
                    count,
                });
            }
            if *index == 0 || *index == count - 1 {
                return Err(ScenarioError::FixedEndpoint(*index));
            }
            next.ctrl_points[*index] = position.to_world();
        }
    }
    next.canonicalize();
    next.validate()?;
    Ok(next)
}

/// Applies commands in order; stops at the first failure.
pub fn apply_commands(s: &Scenario, cmds: &[StateCommand]) -> Result<Scenario, ScenarioError> {
    cmds.iter().try_fold(s.clone(), |acc, c| apply_command(&acc, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn to_grid_examples() {
        assert_eq!(to_grid(Vec2::new(0.1708, 0.1688)).unwrap(), GridPos { gx: 17, gy: 16 });
        assert_eq!(to_grid(Vec2::new(0.0, 0.0)).unwrap(), GridPos { gx: 0, gy: 0 });
        assert_eq!(to_grid(Vec2::new(1.0, 1.0)).unwrap(), GridPos { gx: 99, gy: 99 });
        assert!(to_grid(Vec2::new(f64::NAN, 0.2)).is_err());
    }

    #[test]
    fn generation_shapes() {
        let s = generate_scenario(7, 20, 16).unwrap();
        assert_eq!(s.obstacles.len(), 20);
        assert_eq!(s.ctrl_points.len(), 16);
        assert_eq!(s.ctrl_points[0], TRACK_START);
        assert_eq!(s.ctrl_points[15], TRACK_END);
        for o in &s.obstacles {
            assert!((0.1..=0.9).contains(&o.center.x) && (0.1..=0.9).contains(&o.center.y));
        }
        let minimal = generate_scenario(7, 0, 2).unwrap();
        assert!(minimal.obstacles.is_empty());
        assert_eq!(minimal.ctrl_points, vec![TRACK_START, TRACK_END]);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_scenario(7, 20, 16).unwrap().encode(),
            generate_scenario(7, 20, 16).unwrap().encode()
        );
        assert_ne!(
            generate_scenario(7, 20, 16).unwrap().encode(),
            generate_scenario(8, 20, 16).unwrap().encode()
        );
    }

    #[test]
    fn generation_errors() {
        assert!(matches!(
            generate_scenario(1, 61, 4),
            Err(ScenarioError::VocabularyExhausted { .. })
        ));
        assert!(matches!(
            generate_scenario(1, 3, 1),
            Err(ScenarioError::TooFewControlPoints(1))
        ));
    }

    fn with_named(names: &[&str]) -> Scenario {
        let mut s = generate_scenario(3, names.len(), 5).unwrap();
        for (o, n) in s.obstacles.iter_mut().zip(names) {
            o.nickname = n.to_string();
        }
        s
    }

    #[test]
    fn remove_obstacle_command() {
        let s = with_named(&["small pond", "big rock"]);
        let cmd: StateCommand =
            serde_json::from_str(r#"{"type": "remove_obstacle", "nickname": "small pond"}"#)
                .unwrap();
        let t = apply_command(&s, &cmd).unwrap();
        assert!(t.obstacle("small pond").is_none());
        assert!(t.obstacle("big rock").is_some());
        // input untouched
        assert!(s.obstacle("small pond").is_some());
    }

    #[test]
    fn move_and_modify_ctrl_point_use_cell_centers() {
        let s = with_named(&["small pond", "big rock"]);
        let cmd: StateCommand = serde_json::from_str(
            r#"{"type": "move_obstacle", "nickname": "big rock", "center": [30, 70]}"#,
        )
        .unwrap();
        let t = apply_command(&s, &cmd).unwrap();
        assert_eq!(t.obstacle("big rock").unwrap().center, Vec2::new(0.305, 0.705));

        let cmd: StateCommand = serde_json::from_str(
            r#"{"type": "modify_ctrl_point", "index": 2, "position": [40, 60]}"#,
        )
        .unwrap();
        let t = apply_command(&s, &cmd).unwrap();
        assert_eq!(t.ctrl_points[2], Vec2::new(0.405, 0.605));
        assert_eq!(t.obstacles, s.obstacles);
    }

    #[test]
    fn command_errors() {
        let s = with_named(&["small pond"]);
        let unknown = StateCommand::RemoveObstacle {
            nickname: "big moon".into(),
        };
        assert!(matches!(apply_command(&s, &unknown), Err(ScenarioError::UnknownNickname(_))));
        let oob = StateCommand::ModifyCtrlPoint {
            index: 9,
            position: GridPos::new(1, 1).unwrap(),
        };
        assert!(matches!(apply_command(&s, &oob), Err(ScenarioError::IndexOutOfRange { .. })));
        let fixed = StateCommand::ModifyCtrlPoint {
            index: 0,
            position: GridPos::new(1, 1).unwrap(),
        };
        assert!(matches!(apply_command(&s, &fixed), Err(ScenarioError::FixedEndpoint(0))));
        let bad_radius = StateCommand::ModifyObstacle {
            nickname: "small pond".into(),
            radius: Some(-1.0),
            penalty: None,
            cost: None,
        };
        assert!(apply_command(&s, &bad_radius).is_err());
    }

    #[test]
    fn add_obstacle_defaults_and_grid_parsing() {
        let cmds: Vec<StateCommand> = serde_json::from_str(
            r#"[{"type": "add_obstacle", "center": [20, 30], "nickname": "tree"},
                {"type": "add_obstacle", "center": [50.0, 50], "radius": 0.08, "penalty": 8.0, "cost": 5.0, "nickname": "large tree"}]"#,
        )
        .unwrap();
        let s = apply_commands(&with_named(&[]), &cmds).unwrap();
        assert_eq!(s.obstacles.len(), 2);
        assert_eq!(s.obstacle("large tree").unwrap().radius, 0.08);
        assert!(serde_json::from_str::<StateCommand>(
            r#"{"type": "move_obstacle", "nickname": "x", "center": [100, 3]}"#
        )
        .is_err());
        assert!(serde_json::from_str::<StateCommand>(r#"{"type": "teleport"}"#).is_err());
    }

    #[test]
    fn codec_errors() {
        let s = generate_scenario(5, 3, 4).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&s.encode()).unwrap();
        v.as_object_mut().unwrap().remove("obstacles");
        let err = Scenario::decode(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("obstacles"), "{err}");

        let mut v: serde_json::Value = serde_json::from_slice(&s.encode()).unwrap();
        let first = v["obstacles"][0]["nickname"].clone();
        v["obstacles"][1]["nickname"] = first;
        assert!(matches!(
            Scenario::decode(v.to_string().as_bytes()),
            Err(ScenarioError::DuplicateNickname(_))
        ));
    }

    #[test]
    fn encoding_has_sorted_keys() {
        let s = generate_scenario(5, 1, 3).unwrap();
        let text = String::from_utf8(s.encode()).unwrap();
        let c = text.find("\"cost_field\"").unwrap();
        let o = text.find("\"obstacles\"").unwrap();
        let p = text.find("\"physics\"").unwrap();
        assert!(c < o && o < p);
    }
}
