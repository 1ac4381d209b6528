//! Conversational agent: a think/act/observe loop over a tool registry.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::lm::{LmClient, LmError};
use super::prompt::{Field, PromptTemplate};
use super::{commands_from_json, format_control_points, format_objects, values, REACT_TASK};
use crate::optimize::{run_optimization, NullEmitter, OptRun, OptimizerConfig, OptimizerKind};
use crate::scenario::{apply_commands, Scenario};
use crate::simulator::LossWeights;
use crate::trace::{phi_e_sample, update_average, phi_u, EventStyle};

pub const MAX_TOOL_CALLS: usize = 12;
pub const FINISH: &str = "finish";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    User { text: String },
    Thought { text: String },
    ToolCall { tool: String, args: Value },
    Observation { tool: String, text: String, is_error: bool },
    Assistant { text: String },
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("malformed arguments: {0}")]
    BadArgs(String),
    #[error("{0}")]
    Failed(String),
}

/// An optimization run started by the agent.
#[derive(Debug, Clone)]
pub struct AgentRun {
    pub id: String,
    pub label: String,
    pub run: OptRun,
}

/// Mutable world the tools act on.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub scenario: Scenario,
    pub runs: Vec<AgentRun>,
    pub base_config: OptimizerConfig,
    /// Number given to the next run id.
    pub next_run: usize,
}

impl AgentState {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            runs: Vec::new(),
            base_config: OptimizerConfig::default(),
            next_run: 1,
        }
    }

    fn find_run(&self, args: &Value) -> Result<&AgentRun, ToolError> {
        match args.get("run_id").and_then(Value::as_str) {
            Some(id) => self
                .runs
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| ToolError::Failed(format!("no run with id `{id}`"))),
            None => self
                .runs
                .last()
                .ok_or_else(|| ToolError::Failed("no optimization has been run yet".into())),
        }
    }
}

pub trait AgentTool: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// JSON shape of the arguments, shown to the LM.
    fn args_schema(&self) -> &'static str;
    fn modifies_state(&self) -> bool {
        false
    }
    fn call(&self, state: &mut AgentState, args: &Value) -> Result<String, ToolError>;
}

fn opt_str<'a>(args: &'a Value, key: &str) -> Result<Option<&'a str>, ToolError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(ToolError::BadArgs(format!("`{key}` must be a string, got {other}"))),
    }
}

fn opt_usize(args: &Value, key: &str) -> Result<Option<usize>, ToolError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| ToolError::BadArgs(format!("`{key}` must be a non-negative integer"))),
    }
}

pub struct RunOptimizationTool;

impl AgentTool for RunOptimizationTool {
    fn name(&self) -> &'static str {
        "run_optimization"
    }
    fn description(&self) -> &'static str {
        "Optimise the track of the current state and report time and cost before and after."
    }
    fn args_schema(&self) -> &'static str {
        r#"{"priority": "balanced" | "speed" | "cost", "steps": integer (optional), "optimizer": "adam" | "sgd" | "rmsprop" | "sign_sgd" (optional), "label": string (optional)}"#
    }
    fn call(&self, state: &mut AgentState, args: &Value) -> Result<String, ToolError> {
        let priority = opt_str(args, "priority")?.unwrap_or("balanced");
        let weights = match priority {
            "balanced" => LossWeights::BALANCED,
            "speed" | "time" => LossWeights::SPEED,
            "cost" => LossWeights::COST,
            other => return Err(ToolError::BadArgs(format!("unknown priority `{other}`"))),
        };
        let mut config = state.base_config.clone();
        config.weights = weights;
        if let Some(steps) = opt_usize(args, "steps")? {
            if !(1..=2000).contains(&steps) {
                return Err(ToolError::BadArgs("`steps` must be in 1..=2000".into()));
            }
            config.steps = steps;
        }
        if let Some(name) = opt_str(args, "optimizer")? {
            config.optimizer = OptimizerKind::parse(name)
                .ok_or_else(|| ToolError::BadArgs(format!("unknown optimizer `{name}`")))?;
        }
        let run = run_optimization(&state.scenario, &config, &mut NullEmitter)
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        let id = format!("run-{}", state.next_run);
        state.next_run += 1;
        let label = opt_str(args, "label")?.unwrap_or(priority).to_string();
        let a = run.initial_reward();
        let b = run.final_reward();
        let text = format!(
            "Run {id} ({label}; {} priority, {}, {} steps): initial time {:.3}, cost {:.3}; final time {:.3}, cost {:.3}; relative savings time {:.1}%, cost {:.1}%.",
            priority,
            config.optimizer.name(),
            config.steps,
            a.time,
            a.cost,
            b.time,
            b.cost,
            100.0 * relative(a.time, b.time),
            100.0 * relative(a.cost, b.cost),
        );
        state.runs.push(AgentRun { id, label, run });
        Ok(text)
    }
}

fn relative(initial: f64, last: f64) -> f64 {
    if initial == 0.0 {
        0.0
    } else {
        (initial - last) / initial
    }
}

pub struct ApplyCommandsTool;

impl AgentTool for ApplyCommandsTool {
    fn name(&self) -> &'static str {
        "apply_commands"
    }
    fn description(&self) -> &'static str {
        "Change the simulation state (obstacles, control points) with formal state-changing commands."
    }
    fn args_schema(&self) -> &'static str {
        r#"{"commands": [ {"type": "add_obstacle" | "remove_obstacle" | "move_obstacle" | "modify_obstacle" | "modify_ctrl_point", ...} ]}"#
    }
    fn modifies_state(&self) -> bool {
        true
    }
    fn call(&self, state: &mut AgentState, args: &Value) -> Result<String, ToolError> {
        let cmds = args
            .get("commands")
            .ok_or_else(|| ToolError::BadArgs("missing `commands`".into()))?;
        let cmds = commands_from_json(&cmds.to_string()).map_err(|e| ToolError::BadArgs(e.to_string()))?;
        let next = apply_commands(&state.scenario, &cmds).map_err(|e| ToolError::Failed(e.to_string()))?;
        state.scenario = next;
        let kinds: Vec<&str> = cmds.iter().map(|c| c.kind()).collect();
        Ok(format!("Applied {} command(s): {}.", cmds.len(), kinds.join(", ")))
    }
}

pub struct ObserveEventsTool;

impl AgentTool for ObserveEventsTool {
    fn name(&self) -> &'static str {
        "observe_events"
    }
    fn description(&self) -> &'static str {
        "Read the simulation events of a run at its initial or final (default) iteration, or at a given iteration."
    }
    fn args_schema(&self) -> &'static str {
        r#"{"run_id": string (optional, defaults to the latest run), "iteration": "initial" | "final" | integer (optional)}"#
    }
    fn call(&self, state: &mut AgentState, args: &Value) -> Result<String, ToolError> {
        let run = state.find_run(args)?;
        let last = run.run.signals.events.len() - 1;
        let k = match args.get("iteration") {
            None | Some(Value::Null) => last,
            Some(Value::String(s)) if s == "final" => last,
            Some(Value::String(s)) if s == "initial" => 0,
            Some(v) => v
                .as_u64()
                .map(|k| k as usize)
                .filter(|k| *k <= last)
                .ok_or_else(|| ToolError::BadArgs(format!("`iteration` must be \"initial\", \"final\" or 0..={last}")))?,
        };
        let lines = phi_e_sample(&run.run.signals.events[k], EventStyle::Span);
        let body: Vec<String> = lines.into_iter().map(|l| l.text).collect();
        Ok(format!("Events of {} at iteration {k}:\n{}", run.id, body.join("\n")))
    }
}

pub struct ObserveUpdatesTool;

impl AgentTool for ObserveUpdatesTool {
    fn name(&self) -> &'static str {
        "observe_updates"
    }
    fn description(&self) -> &'static str {
        "Read how the control points moved during a run, at evenly spaced sampled iterations."
    }
    fn args_schema(&self) -> &'static str {
        r#"{"run_id": string (optional, defaults to the latest run), "max_blocks": integer (optional, default 5)}"#
    }
    fn call(&self, state: &mut AgentState, args: &Value) -> Result<String, ToolError> {
        let run = state.find_run(args)?;
        let max_blocks = opt_usize(args, "max_blocks")?.unwrap_or(5).clamp(1, 50);
        let hist = &run.run.theta_history;
        let rate = run.run.config.update_rate.max(1);
        let sampled: Vec<usize> = (1..hist.len()).filter(|k| k % rate == 0).collect();
        let stride = sampled.len().div_ceil(max_blocks).max(1);
        let avg = update_average(hist);
        let mut out = vec![format!("Updates of {}:", run.id)];
        for &k in sampled.iter().step_by(stride) {
            out.push(format!("Iteration {k}:"));
            let lines = phi_u(&hist[k], &hist[k - 1], &run.run.scenario.obstacles, avg)
                .map_err(|e| ToolError::Failed(e.to_string()))?;
            out.extend(lines.into_iter().map(|l| l.text));
        }
        Ok(out.join("\n"))
    }
}

pub struct GetStateTool;

impl AgentTool for GetStateTool {
    fn name(&self) -> &'static str {
        "get_state"
    }
    fn description(&self) -> &'static str {
        "List the obstacles and control points of the current state and the runs made so far."
    }
    fn args_schema(&self) -> &'static str {
        "{}"
    }
    fn call(&self, state: &mut AgentState, _args: &Value) -> Result<String, ToolError> {
        let runs: Vec<String> = state
            .runs
            .iter()
            .map(|r| format!("{} ({})", r.id, r.label))
            .collect();
        Ok(format!(
            "Obstacles:\n{}\nControl points:\n{}\nRuns: {}",
            format_objects(&state.scenario.obstacles),
            format_control_points(&state.scenario.ctrl_points),
            if runs.is_empty() { "none".to_string() } else { runs.join(", ") }
        ))
    }
}

pub fn default_tools() -> Vec<Box<dyn AgentTool>> {
    vec![
        Box::new(RunOptimizationTool),
        Box::new(ApplyCommandsTool),
        Box::new(ObserveEventsTool),
        Box::new(ObserveUpdatesTool),
        Box::new(GetStateTool),
    ]
}

fn tool_instructions(tools: &[Box<dyn AgentTool>]) -> String {
    let mut out = String::from(
        "\n\nAt each step, give your next thought, the name of the next tool to call and its arguments as a JSON object. Available tools:\n",
    );
    for (i, t) in tools.iter().enumerate() {
        out.push_str(&format!(
            "({}) {}: {} Arguments: {}\n",
            i + 1,
            t.name(),
            t.description(),
            t.args_schema()
        ));
    }
    out.push_str(&format!(
        "({}) {FINISH}: Signal that you have what you need to reply to the user. Arguments: {{}}",
        tools.len() + 1
    ));
    out
}

fn context_fields() -> Vec<Field> {
    vec![
        Field::new("user_message", "The current message from the user."),
        Field::new("history", "A list representing the conversation history."),
        Field::new(
            "trajectory",
            "The thoughts, tool calls and observations so far in this turn.",
        ),
    ]
}

pub fn react_step_template(tools: &[Box<dyn AgentTool>]) -> PromptTemplate {
    PromptTemplate::new(
        &format!("{REACT_TASK}{}", tool_instructions(tools)),
        context_fields(),
        vec![
            Field::new("next_thought", "Reasoning about the next action."),
            Field::new("next_tool_name", "The name of the tool to call next."),
            Field::new("next_tool_args", "The arguments of the tool call, as a JSON object."),
        ],
    )
}

pub fn react_reply_template() -> PromptTemplate {
    PromptTemplate::new(
        REACT_TASK,
        context_fields(),
        vec![Field::new(
            "message_to_user",
            "The textual response to be sent back to the user.",
        )],
    )
}

pub fn render_history(history: &[TranscriptEntry]) -> String {
    let lines: Vec<String> = history
        .iter()
        .filter_map(|e| match e {
            TranscriptEntry::User { text } => Some(format!("User: {text}")),
            TranscriptEntry::Assistant { text } => Some(format!("Assistant: {text}")),
            _ => None,
        })
        .collect();
    if lines.is_empty() {
        "[]".to_string()
    } else {
        lines.join("\n")
    }
}

pub fn render_trajectory(entries: &[TranscriptEntry]) -> String {
    let mut out = Vec::new();
    let mut step = 0;
    for e in entries {
        match e {
            TranscriptEntry::Thought { text } => {
                step += 1;
                out.push(format!("Thought {step}: {text}"));
            }
            TranscriptEntry::ToolCall { tool, args } => out.push(format!("Tool {step}: {tool} {args}")),
            TranscriptEntry::Observation { text, .. } => out.push(format!("Observation {step}: {text}")),
            _ => {}
        }
    }
    if out.is_empty() {
        "No steps taken yet.".to_string()
    } else {
        out.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEvent {
    pub tool: String,
    pub args: Value,
    pub ok: bool,
    pub modifies_state: bool,
    pub observation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOutcome {
    Finished,
    CapReached,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct AgentTurn {
    pub reply: String,
    pub outcome: TurnOutcome,
    pub tool_events: Vec<ToolEvent>,
    /// Prior history plus every entry of this turn.
    pub history: Vec<TranscriptEntry>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("the agent has no tools")]
    NoTools,
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Runs CPU-bound tool work without starving a multi-threaded runtime.
fn run_blocking<R>(f: impl FnOnce() -> R) -> R {
    use tokio::runtime::{Handle, RuntimeFlavor};
    match Handle::try_current() {
        Ok(h) if h.runtime_flavor() == RuntimeFlavor::MultiThread => tokio::task::block_in_place(f),
        _ => f(),
    }
}

fn parse_args(text: &str) -> Result<Value, ToolError> {
    let t = text.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .map(|r| r.trim_end().trim_end_matches("```").trim())
        .unwrap_or(t);
    if t.is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    match serde_json::from_str::<Value>(t) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(other) => Err(ToolError::BadArgs(format!("expected a JSON object, got {other}"))),
        Err(e) => Err(ToolError::BadArgs(e.to_string())),
    }
}

/// One user turn: think, call tools, observe, and finally reply.
pub async fn agent_turn(
    history: &[TranscriptEntry],
    user_message: &str,
    tools: &[Box<dyn AgentTool>],
    state: &mut AgentState,
    lm: &LmClient,
) -> Result<AgentTurn, AgentError> {
    if tools.is_empty() {
        return Err(AgentError::NoTools);
    }
    let step_template = react_step_template(tools);
    let history_text = render_history(history);
    let mut entries: Vec<TranscriptEntry> = Vec::new();
    let mut events = Vec::new();
    let mut calls = 0usize;
    let mut malformed = 0usize;
    let mut abort_reason = None;

    let outcome = loop {
        if calls >= MAX_TOOL_CALLS {
            break TurnOutcome::CapReached;
        }
        let v = values([
            ("user_message", user_message.to_string()),
            ("history", history_text.clone()),
            ("trajectory", render_trajectory(&entries)),
        ]);
        let fields = match lm.predict(&step_template, &v).await {
            Ok(f) => f,
            Err(LmError::Parse(e)) => {
                malformed += 1;
                if malformed > 1 {
                    abort_reason = Some(e.to_string());
                    break TurnOutcome::Aborted;
                }
                entries.push(TranscriptEntry::Observation {
                    tool: String::new(),
                    text: format!("Error: {e}. Respond with every output field."),
                    is_error: true,
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        entries.push(TranscriptEntry::Thought {
            text: fields.get("next_thought").cloned().unwrap_or_default(),
        });
        let name = fields.get("next_tool_name").map(|s| s.trim().trim_matches('`').to_string()).unwrap_or_default();
        if name == FINISH {
            break TurnOutcome::Finished;
        }
        let args_text = fields.get("next_tool_args").cloned().unwrap_or_default();
        let tool = tools.iter().find(|t| t.name() == name);
        let parsed = match tool {
            None => Err(ToolError::BadArgs(format!("unknown tool `{name}`"))),
            Some(_) => parse_args(&args_text),
        };
        calls += 1;
        let args = parsed.as_ref().cloned().unwrap_or(Value::String(args_text.clone()));
        entries.push(TranscriptEntry::ToolCall {
            tool: name.clone(),
            args: args.clone(),
        });
        let result = match (tool, parsed) {
            (Some(t), Ok(a)) => run_blocking(|| t.call(state, &a)),
            (_, Err(e)) => Err(e),
            (None, Ok(_)) => unreachable!("unknown tools never parse"),
        };
        let (text, ok) = match result {
            Ok(obs) => (obs, true),
            Err(ToolError::BadArgs(msg)) => {
                malformed += 1;
                if malformed > 1 {
                    abort_reason = Some(msg);
                    break TurnOutcome::Aborted;
                }
                (format!("Error: malformed arguments: {msg}"), false)
            }
            Err(ToolError::Failed(msg)) => (format!("Error: {msg}"), false),
        };
        events.push(ToolEvent {
            tool: name.clone(),
            args,
            ok,
            modifies_state: ok && tool.map(|t| t.modifies_state()).unwrap_or(false),
            observation: text.clone(),
        });
        entries.push(TranscriptEntry::Observation {
            tool: name,
            text,
            is_error: !ok,
        });
    };

    let reply = if outcome == TurnOutcome::Aborted {
        format!(
            "I could not complete this request: a tool call had malformed arguments twice ({}).",
            abort_reason.unwrap_or_default()
        )
    } else {
        let v = values([
            ("user_message", user_message.to_string()),
            ("history", history_text),
            ("trajectory", render_trajectory(&entries)),
        ]);
        let mut out = lm.predict(&react_reply_template(), &v).await?;
        let mut reply = out.remove("message_to_user").unwrap_or_default();
        if outcome == TurnOutcome::CapReached {
            reply.push_str(&format!(
                "\n\n(Stopped after {MAX_TOOL_CALLS} tool calls; these results are partial.)"
            ));
        }
        reply
    };

    let mut full = history.to_vec();
    full.push(TranscriptEntry::User {
        text: user_message.to_string(),
    });
    full.extend(entries);
    full.push(TranscriptEntry::Assistant { text: reply.clone() });
    Ok(AgentTurn {
        reply,
        outcome,
        tool_events: events,
        history: full,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::explain::lm::stub::{FnTransport, ScriptedTransport};
    use crate::explain::prompt::format_completion;
    use crate::scenario::generate_scenario;

    fn step(thought: &str, tool: &str, args: &str) -> String {
        format_completion(&[
            ("reasoning", "..."),
            ("next_thought", thought),
            ("next_tool_name", tool),
            ("next_tool_args", args),
        ])
    }

    fn reply(text: &str) -> String {
        format_completion(&[("reasoning", "..."), ("message_to_user", text)])
    }

    fn state() -> AgentState {
        let mut s = AgentState::new(generate_scenario(3, 6, 6).unwrap());
        s.base_config.steps = 4;
        s
    }

    #[tokio::test]
    async fn direct_answer_uses_no_tools() {
        let lm = LmClient::stub(ScriptedTransport::new(vec![
            step("I can answer directly.", FINISH, "{}"),
            reply("Hello."),
        ]));
        let mut st = state();
        let turn = agent_turn(&[], "Hi", &default_tools(), &mut st, &lm).await.unwrap();
        assert_eq!(turn.reply, "Hello.");
        assert_eq!(turn.outcome, TurnOutcome::Finished);
        assert!(turn.tool_events.is_empty());
        assert_eq!(turn.history.len(), 3);
    }

    #[tokio::test]
    async fn speed_and_cost_runs() {
        let n = Arc::new(AtomicUsize::new(0));
        let counter = n.clone();
        let lm = LmClient::stub(FnTransport::new(move |req| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(match i {
                0 => step("speed first", "run_optimization", r#"{"priority": "speed"}"#),
                1 => step("now cost", "run_optimization", r#"{"priority": "cost"}"#),
                2 => step("done", FINISH, "{}"),
                _ => {
                    let text = req.full_text();
                    let obs: Vec<&str> = text.lines().filter(|l| l.starts_with("Observation")).collect();
                    reply(&obs.join("\n"))
                }
            })
        }));
        let mut st = state();
        let turn = agent_turn(
            &[],
            "Run two optimizations: one prioritizing speed and one prioritizing cost.",
            &default_tools(),
            &mut st,
            &lm,
        )
        .await
        .unwrap();
        let runs: Vec<&ToolEvent> = turn.tool_events.iter().filter(|e| e.tool == "run_optimization").collect();
        assert_eq!(runs.len(), 2);
        assert_eq!(st.runs.len(), 2);
        assert_eq!(st.runs[0].run.config.weights, LossWeights::SPEED);
        assert_eq!(st.runs[1].run.config.weights, LossWeights::COST);
        assert!(turn.reply.contains("Run run-1") && turn.reply.contains("Run run-2"));
    }

    #[tokio::test]
    async fn cap_and_malformed_args() {
        let looping = format_completion(&[
            ("next_thought", "look"),
            ("next_tool_name", "get_state"),
            ("next_tool_args", "{}"),
            ("message_to_user", "Partial."),
        ]);
        let lm = LmClient::stub(ScriptedTransport::new(vec![looping]));
        let mut st = state();
        let turn = agent_turn(&[], "loop", &default_tools(), &mut st, &lm).await.unwrap();
        assert_eq!(turn.outcome, TurnOutcome::CapReached);
        assert_eq!(turn.tool_events.len(), MAX_TOOL_CALLS);
        assert!(turn.reply.starts_with("Partial.") && turn.reply.contains("Stopped after 12"));

        let lm = LmClient::stub(ScriptedTransport::new(vec![step("oops", "apply_commands", "{not json")]));
        let before = st.scenario.clone();
        let turn = agent_turn(&[], "break", &default_tools(), &mut st, &lm).await.unwrap();
        assert_eq!(turn.outcome, TurnOutcome::Aborted);
        assert_eq!(turn.tool_events.len(), 1);
        assert_eq!(st.scenario, before);
    }

    #[tokio::test]
    async fn state_changes_only_through_apply_commands() {
        let mut st = state();
        let name = st.scenario.obstacles[0].nickname.clone();
        let args = format!(r#"{{"commands": [{{"type": "remove_obstacle", "nickname": "{name}"}}]}}"#);
        let lm = LmClient::stub(ScriptedTransport::new(vec![
            step("remove", "apply_commands", &args),
            step("done", FINISH, "{}"),
            reply("Removed."),
        ]));
        let turn = agent_turn(&[], "Remove it", &default_tools(), &mut st, &lm).await.unwrap();
        assert!(st.scenario.obstacle(&name).is_none());
        assert!(turn.tool_events[0].modifies_state);
    }
}
