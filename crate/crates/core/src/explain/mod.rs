//! LM-backed explanations of optimization runs and the conversational
//! agent.

pub mod agent;
pub mod lm;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;

use crate::optimize::OptRun;
use crate::scenario::{to_grid, Obstacle, StateCommand, Vec2};
use crate::trace::{RecordKind, TraceDocument, TraceError};

pub use lm::{ChatTransport, LmClient, LmEndpoint, LmError};
pub use prompt::{parse_fields, render_prompt, Field, FieldMap, PromptTemplate};

pub const FULL_DESCRIPTION_TASK: &str = include_str!("tasks/full_description.txt");
pub const STEP_DESCRIPTION_TASK: &str = include_str!("tasks/step_description.txt");
pub const STATE_MODIFIER_TASK: &str = include_str!("tasks/state_modifier.txt");
pub const REACT_TASK: &str = include_str!("tasks/react.txt");
pub const QA_TASK: &str = include_str!("tasks/qa_with_description.txt");
pub const DISCRIMINATION_TASK: &str = include_str!("tasks/discrimination.txt");

pub fn full_description_template() -> PromptTemplate {
    PromptTemplate::new(
        FULL_DESCRIPTION_TASK,
        vec![Field::new("description", "A description of the simulation setup or context.")],
        vec![Field::new("summary", "A detailed summary of the optimisation process.")],
    )
}

pub fn step_description_template() -> PromptTemplate {
    PromptTemplate::new(
        STEP_DESCRIPTION_TASK,
        vec![
            Field::new("events_before", "List of events before the update."),
            Field::new("update", "Update description."),
            Field::new("events_after", "List of events after the update."),
        ],
        vec![Field::new(
            "explanation",
            "Explanation of how the update relates to the event changes.",
        )],
    )
}

pub fn state_modifier_template() -> PromptTemplate {
    PromptTemplate::new(
        STATE_MODIFIER_TASK,
        vec![Field::new(
            "description",
            "A natural language string describing the desired changes to the simulation state.",
        )],
        vec![Field::new(
            "commands",
            "A list of dictionaries, where each dictionary represents a formal command with a 'type' field and other command-specific parameters.",
        )],
    )
}

pub fn qa_template() -> PromptTemplate {
    PromptTemplate::new(
        QA_TASK,
        vec![
            Field::new("object_positions", "String detailing grid positions and radii of simulation objects."),
            Field::new("control_points", "String detailing grid positions of control points."),
            Field::new("initial_events", "String detailing events from the initial trajectory."),
            Field::new(
                "optimisation_description",
                "A textual description of the control point optimization process.",
            ),
            Field::new("question", "The specific question about the optimization or its effects."),
        ],
        vec![Field::new(
            "answer",
            "A string, typically the name of an object, answering the question.",
        )],
    )
}

pub const DISCRIMINATION_ANSWER: &str = "The ID number of the set of grid positions of the optimised control points, among the 2 proposed candidates. Either 1 or 2. DO NOT INCLUDE ANY OTHER TEXT.";

/// Discrimination prompt. `numerical` swaps the optimization description
/// for the optimized control points' grid positions.
pub fn discrimination_template(numerical: bool) -> PromptTemplate {
    let evidence = if numerical {
        Field::new(
            "optimized_control_points",
            "The grid positions of the optimized control points.",
        )
    } else {
        Field::new(
            "optimization_description",
            "A description of the optimization process of control points.",
        )
    };
    PromptTemplate::new(
        DISCRIMINATION_TASK,
        vec![
            Field::new("seed", "Random seed parameter."),
            evidence,
            Field::new(
                "object_positions",
                "A list with name and associated grid positions of the objects in the simulation.",
            ),
            Field::new(
                "initial_control_points",
                "The grid positions of the initial control points.",
            ),
            Field::new(
                "candidate_control_points_1",
                "The grid positions of the first candidate set of control points.",
            ),
            Field::new(
                "candidate_control_points_2",
                "The grid positions of the second candidate set of control points.",
            ),
        ],
        vec![Field::new("answer", DISCRIMINATION_ANSWER)],
    )
}

pub fn values<const N: usize>(pairs: [(&str, String); N]) -> FieldMap {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Obstacles as `name: grid position (x, y), radius r` lines.
pub fn format_objects(obstacles: &[Obstacle]) -> String {
    obstacles
        .iter()
        .map(|o| {
            let g = to_grid(o.center).map(|g| g.to_string()).unwrap_or_default();
            format!(
                "{}: grid position {}, radius {:.1}",
                o.nickname,
                g,
                o.radius * crate::scenario::GRID_SIZE as f64
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Control points as `Control point i: (x, y)` lines.
pub fn format_control_points(points: &[Vec2]) -> String {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = to_grid(*p).map(|g| g.to_string()).unwrap_or_default();
            format!("Control point {i}: {g}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("at least one step description is required")]
    NoSteps,
    #[error("invalid commands JSON: {0}")]
    InvalidJson(String),
    #[error("unknown command kind `{0}`")]
    UnknownCommand(String),
    #[error("invalid `{kind}` command: {reason}")]
    InvalidCommand { kind: String, reason: String },
    #[error("description task failed: {0}")]
    Join(String),
}

fn join_lines(lines: &[String]) -> String {
    if lines.is_empty() {
        "No events.".to_string()
    } else {
        lines.join("\n")
    }
}

/// Explanation of one update from the events around it.
pub async fn describe_step(
    events_before: &[String],
    update_lines: &[String],
    events_after: &[String],
    lm: &LmClient,
) -> Result<String, ExplainError> {
    let v = values([
        ("events_before", join_lines(events_before)),
        ("update", join_lines(update_lines)),
        ("events_after", join_lines(events_after)),
    ]);
    let mut out = lm.predict(&step_description_template(), &v).await?;
    Ok(out.remove("explanation").unwrap_or_default())
}

/// Input text for the global summary: step descriptions interleaved with
/// that iteration's reward lines, iteration ascending.
pub fn full_description_input(steps: &[(usize, String)], rewards: &[(usize, Vec<String>)]) -> String {
    let mut steps: Vec<&(usize, String)> = steps.iter().collect();
    steps.sort_by_key(|s| s.0);
    let mut out = String::new();
    for (k, desc) in steps {
        out.push_str(&format!("Step {k}:\n{desc}\n"));
        if let Some((_, lines)) = rewards.iter().find(|(i, _)| i == k) {
            out.push_str("Reward changes:\n");
            for l in lines {
                out.push_str(l);
                out.push('\n');
            }
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

pub async fn describe_full(
    steps: &[(usize, String)],
    rewards: &[(usize, Vec<String>)],
    lm: &LmClient,
) -> Result<String, ExplainError> {
    if steps.is_empty() {
        return Err(ExplainError::NoSteps);
    }
    let v = values([("description", full_description_input(steps, rewards))]);
    let mut out = lm.predict(&full_description_template(), &v).await?;
    Ok(out.remove("summary").unwrap_or_default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionType {
    /// One LM summary of the whole run.
    Full,
    /// One LM explanation per sampled update.
    Steps,
    /// The rendered update lines, without an LM.
    Updates,
}

impl DescriptionType {
    pub const ALL: [DescriptionType; 3] = [
        DescriptionType::Full,
        DescriptionType::Steps,
        DescriptionType::Updates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DescriptionType::Full => "full",
            DescriptionType::Steps => "steps",
            DescriptionType::Updates => "updates",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "steps" | "step_level" => Some(Self::Steps),
            "updates" | "update" => Some(Self::Updates),
            _ => None,
        }
    }

    pub fn needs_lm(self) -> bool {
        self != DescriptionType::Updates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescription {
    pub kind: DescriptionType,
    /// Per-iteration texts (LM explanations or update lines).
    pub steps: Vec<(usize, String)>,
    pub summary: Option<String>,
}

impl RunDescription {
    /// The text handed to downstream prompts.
    pub fn text(&self) -> String {
        if let Some(s) = &self.summary {
            return s.clone();
        }
        self.steps
            .iter()
            .map(|(k, t)| format!("Step {k}:\n{t}"))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn texts(doc: &TraceDocument, iter: usize, kind: RecordKind) -> Vec<String> {
    doc.lines(iter, kind).into_iter().map(|r| r.text.clone()).collect()
}

/// Update lines per sampled iteration; needs no LM.
pub fn update_description(doc: &TraceDocument) -> RunDescription {
    let steps = doc
        .iterations_with(RecordKind::Update)
        .into_iter()
        .map(|k| (k, texts(doc, k, RecordKind::Update).join("\n")))
        .collect();
    RunDescription {
        kind: DescriptionType::Updates,
        steps,
        summary: None,
    }
}

/// Step explanations for every sampled update, queried concurrently.
pub async fn step_descriptions(doc: &TraceDocument, lm: &LmClient) -> Result<Vec<(usize, String)>, ExplainError> {
    let mut set = JoinSet::new();
    for k in doc.iterations_with(RecordKind::Update) {
        let before = texts(doc, k - 1, RecordKind::Event);
        let update = texts(doc, k, RecordKind::Update);
        let after = texts(doc, k, RecordKind::Event);
        let lm = lm.clone();
        set.spawn(async move { (k, describe_step(&before, &update, &after, &lm).await) });
    }
    let mut out = Vec::new();
    while let Some(joined) = set.join_next().await {
        let (k, r) = joined.map_err(|e| ExplainError::Join(e.to_string()))?;
        out.push((k, r?));
    }
    out.sort_by_key(|s| s.0);
    Ok(out)
}

/// Describes a run at the requested granularity.
pub async fn describe_run(run: &OptRun, kind: DescriptionType, lm: Option<&LmClient>) -> Result<RunDescription, ExplainError> {
    let doc = run.render_trace(run.config.update_rate)?;
    describe_trace(&doc, kind, lm).await
}

pub async fn describe_trace(
    doc: &TraceDocument,
    kind: DescriptionType,
    lm: Option<&LmClient>,
) -> Result<RunDescription, ExplainError> {
    if kind == DescriptionType::Updates {
        return Ok(update_description(doc));
    }
    let lm = lm.ok_or_else(|| {
        ExplainError::Lm(LmError::Transport {
            attempts: 0,
            source: lm::TransportError::NotConfigured("no LM client".into()),
        })
    })?;
    let steps = step_descriptions(doc, lm).await?;
    if kind == DescriptionType::Steps {
        return Ok(RunDescription {
            kind,
            steps,
            summary: None,
        });
    }
    let rewards: Vec<(usize, Vec<String>)> = steps
        .iter()
        .map(|(k, _)| (*k, texts(doc, *k, RecordKind::Reward)))
        .collect();
    let summary = describe_full(&steps, &rewards, lm).await?;
    Ok(RunDescription {
        kind,
        steps,
        summary: Some(summary),
    })
}

const COMMAND_KINDS: [&str; 5] = [
    "add_obstacle",
    "remove_obstacle",
    "move_obstacle",
    "modify_obstacle",
    "modify_ctrl_point",
];

/// Strips a surrounding Markdown code fence, if any.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses and validates a JSON array of commands.
pub fn commands_from_json(text: &str) -> Result<Vec<StateCommand>, ExplainError> {
    let value: serde_json::Value =
        serde_json::from_str(strip_fence(text)).map_err(|e| ExplainError::InvalidJson(e.to_string()))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        obj @ serde_json::Value::Object(_) => vec![obj],
        other => return Err(ExplainError::InvalidJson(format!("expected an array, got {other}"))),
    };
    items
        .into_iter()
        .map(|item| {
            let kind = item
                .get("type")
                .and_then(|t| t.as_str())
                .ok_or_else(|| ExplainError::InvalidJson("command without a string `type`".into()))?
                .to_string();
            if !COMMAND_KINDS.contains(&kind.as_str()) {
                return Err(ExplainError::UnknownCommand(kind));
            }
            serde_json::from_value(item).map_err(|e| ExplainError::InvalidCommand {
                kind,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Converts a natural-language request into validated commands.
pub async fn parse_commands(request: &str, lm: &LmClient) -> Result<Vec<StateCommand>, ExplainError> {
    let mut out = lm
        .predict(&state_modifier_template(), &values([("description", request.to_string())]))
        .await?;
    commands_from_json(&out.remove("commands").unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::lm::stub::FnTransport;
    use super::*;
    use crate::scenario::GridPos;

    #[test]
    fn task_texts_are_complete() {
        assert!(STATE_MODIFIER_TASK.contains("Command: [{\"type\": \"modify_ctrl_point\", \"index\": 2, \"position\": [40, 60]}]"));
        assert!(REACT_TASK.ends_with("simply compare and contrast the descriptions you have observed of the optimisations."));
        assert!(QA_TASK.ends_with("Answer the question with with the name of an object."));
        for t in [
            full_description_template(),
            step_description_template(),
            state_modifier_template(),
            qa_template(),
            discrimination_template(false),
            discrimination_template(true),
        ] {
            t.validate().unwrap();
        }
    }

    #[test]
    fn documented_command_examples() {
        let c = commands_from_json(r#"[{"type": "remove_obstacle", "nickname": "small pond"}]"#).unwrap();
        assert_eq!(
            c,
            vec![StateCommand::RemoveObstacle {
                nickname: "small pond".into()
            }]
        );
        let c = commands_from_json(r#"[{"type": "move_obstacle", "nickname": "big rock", "center": [30, 70]}]"#).unwrap();
        assert_eq!(
            c,
            vec![StateCommand::MoveObstacle {
                nickname: "big rock".into(),
                center: GridPos { gx: 30, gy: 70 }
            }]
        );
        let c = commands_from_json("```json\n[{\"type\": \"modify_ctrl_point\", \"index\": 2, \"position\": [40, 60]}]\n```").unwrap();
        assert_eq!(
            c,
            vec![StateCommand::ModifyCtrlPoint {
                index: 2,
                position: GridPos { gx: 40, gy: 60 }
            }]
        );
    }

    #[test]
    fn command_errors() {
        assert!(matches!(commands_from_json("not json"), Err(ExplainError::InvalidJson(_))));
        assert!(matches!(
            commands_from_json(r#"[{"type": "teleport"}]"#),
            Err(ExplainError::UnknownCommand(k)) if k == "teleport"
        ));
        assert!(matches!(
            commands_from_json(r#"[{"type": "move_obstacle", "nickname": "x", "center": [130, 70]}]"#),
            Err(ExplainError::InvalidCommand { .. })
        ));
    }

    #[tokio::test]
    async fn step_passthrough_and_empty_events() {
        let lm = LmClient::stub(FnTransport::canned(vec![
            ("reasoning".into(), "r".into()),
            ("explanation".into(), "The update moved point 3 north.".into()),
        ]));
        let out = describe_step(&[], &["Control point 1: Magnitude: no change.".into()], &[], &lm)
            .await
            .unwrap();
        assert_eq!(out, "The update moved point 3 north.");
    }

    #[test]
    fn full_input_orders_steps() {
        let steps = vec![(10, "b".to_string()), (5, "a".to_string())];
        let rewards = vec![(10, vec!["Change in time: small (negative)".into()]), (5, vec![])];
        let text = full_description_input(&steps, &rewards);
        assert!(text.find("Step 5:").unwrap() < text.find("Step 10:").unwrap());
        assert!(text.contains("Step 10:\nb\nReward changes:\nChange in time: small (negative)"));
    }
}
