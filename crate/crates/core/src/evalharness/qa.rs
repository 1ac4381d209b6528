//! Obstacle-removal question answering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;

use super::report::{EvalRecord, EvalReport, Transcript};
use super::{EvalError, EvalInstance};
use crate::explain::lm::LmClient;
use crate::explain::prompt::{parse_fields, render_prompt, RenderedPrompt};
use crate::explain::{format_control_points, format_objects, qa_template, values, DescriptionType};
use crate::optimize::{penalty_loss, run_optimization, NullEmitter, OptimizerConfig};
use crate::scenario::{Scenario, Vec2};
use crate::simulator::simulate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Initial,
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Time,
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionKind {
    pub baseline: Baseline,
    pub metric: Metric,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 4] = [
        QuestionKind::new(Baseline::Initial, Metric::Time),
        QuestionKind::new(Baseline::Initial, Metric::Cost),
        QuestionKind::new(Baseline::Optimized, Metric::Time),
        QuestionKind::new(Baseline::Optimized, Metric::Cost),
    ];

    pub const fn new(baseline: Baseline, metric: Metric) -> Self {
        Self { baseline, metric }
    }

    pub fn name(self) -> &'static str {
        match (self.baseline, self.metric) {
            (Baseline::Initial, Metric::Time) => "initial_time",
            (Baseline::Initial, Metric::Cost) => "initial_cost",
            (Baseline::Optimized, Metric::Time) => "optimized_time",
            (Baseline::Optimized, Metric::Cost) => "optimized_cost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn question(self) -> String {
        let track = match self.baseline {
            Baseline::Initial => "initial",
            Baseline::Optimized => "optimized",
        };
        let metric = match self.metric {
            Metric::Time => "time",
            Metric::Cost => "cost",
        };
        format!("Which obstacle would improve the {track} trajectory {metric} the most if removed?")
    }
}

/// `[time, cost]` of a track; an infeasible track scores the penalty on both.
fn track_metrics(theta: &[Vec2], scenario: &Scenario) -> [f64; 2] {
    match simulate(theta, scenario) {
        Ok(r) => [r.total_time, r.total_cost],
        Err(e) => {
            let n = scenario.physics.n_steps;
            let p = penalty_loss(e.step().unwrap_or(0), n);
            [p, p]
        }
    }
}

fn optimized_metrics(scenario: &Scenario, config: &OptimizerConfig) -> Result<[f64; 2], EvalError> {
    let run = run_optimization(scenario, config, &mut NullEmitter)?;
    Ok(track_metrics(run.final_theta(), scenario))
}

/// Metric decrease caused by removing one obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalImpact {
    pub nickname: String,
    /// `[time, cost]` improvement of the initial track.
    pub initial: [f64; 2],
    /// `[time, cost]` improvement after re-optimizing, when computed.
    pub optimized: Option<[f64; 2]>,
}

/// Simulates (and optionally re-optimizes) every single-obstacle removal.
pub fn removal_impacts(
    scenario: &Scenario,
    config: &OptimizerConfig,
    with_optimized: bool,
) -> Result<Vec<RemovalImpact>, EvalError> {
    if scenario.obstacles.is_empty() {
        return Err(EvalError::NoObstacles);
    }
    let mut base = scenario.clone();
    base.obstacles.sort_by(|a, b| a.nickname.cmp(&b.nickname));
    let theta = &base.ctrl_points;
    let initial_base = track_metrics(theta, &base);
    let optimized_base = if with_optimized {
        Some(optimized_metrics(&base, config)?)
    } else {
        None
    };
    base.obstacles
        .par_iter()
        .map(|o| {
            let removed = base.without_obstacle(&o.nickname)?;
            let i = track_metrics(theta, &removed);
            let optimized = match optimized_base {
                Some(b) => {
                    let m = optimized_metrics(&removed, config)?;
                    Some([b[0] - m[0], b[1] - m[1]])
                }
                None => None,
            };
            Ok(RemovalImpact {
                nickname: o.nickname.clone(),
                initial: [initial_base[0] - i[0], initial_base[1] - i[1]],
                optimized,
            })
        })
        .collect()
}

fn improvements_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Nickname with the largest improvement for `kind`; ties go to the
/// lexicographically first nickname.
pub fn best_removal(impacts: &[RemovalImpact], kind: QuestionKind) -> Option<String> {
    let metric = match kind.metric {
        Metric::Time => 0,
        Metric::Cost => 1,
    };
    let mut sorted: Vec<&RemovalImpact> = impacts.iter().collect();
    sorted.sort_by(|a, b| a.nickname.cmp(&b.nickname));
    let mut best: Option<(&str, f64)> = None;
    for r in sorted {
        let v = match kind.baseline {
            Baseline::Initial => r.initial[metric],
            Baseline::Optimized => r.optimized?[metric],
        };
        match best {
            Some((_, b)) if v <= b || improvements_equal(v, b) => {}
            _ => best = Some((&r.nickname, v)),
        }
    }
    best.map(|(n, _)| n.to_string())
}

pub fn qa_ground_truth(scenario: &Scenario, kind: QuestionKind, config: &OptimizerConfig) -> Result<String, EvalError> {
    let impacts = removal_impacts(scenario, config, kind.baseline == Baseline::Optimized)?;
    best_removal(&impacts, kind).ok_or(EvalError::NoObstacles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTask {
    pub id: String,
    pub scenario: Scenario,
    pub kind: QuestionKind,
    pub options: Vec<String>,
    pub ground_truth: String,
    pub description_type: DescriptionType,
    pub description: String,
    pub initial_events: String,
}

impl QaTask {
    pub fn prompt(&self) -> RenderedPrompt {
        let v = values([
            ("object_positions", format_objects(&self.scenario.obstacles)),
            ("control_points", format_control_points(&self.scenario.ctrl_points)),
            ("initial_events", self.initial_events.clone()),
            ("optimisation_description", self.description.clone()),
            ("question", self.kind.question()),
        ]);
        render_prompt(&qa_template(), &v).expect("qa template inputs are complete")
    }

    pub fn chance(&self) -> f64 {
        1.0 / self.options.len() as f64
    }
}

/// One task per question kind and description type for an instance.
pub fn build_qa_tasks(
    instance: &EvalInstance,
    config: &OptimizerConfig,
    kinds: &[DescriptionType],
) -> Result<Vec<QaTask>, EvalError> {
    let impacts = removal_impacts(&instance.scenario, config, true)?;
    let options: Vec<String> = instance.scenario.obstacles.iter().map(|o| o.nickname.clone()).collect();
    let events = instance.initial_events();
    let mut tasks = Vec::new();
    for q in QuestionKind::ALL {
        let truth = best_removal(&impacts, q).ok_or(EvalError::NoObstacles)?;
        for &d in kinds {
            tasks.push(QaTask {
                id: format!("qa-{}-{}-{}", instance.scenario.seed, q.name(), d.name()),
                scenario: instance.scenario.clone(),
                kind: q,
                options: options.clone(),
                ground_truth: truth.clone(),
                description_type: d,
                description: instance.description(d)?.to_string(),
                initial_events: events.clone(),
            });
        }
    }
    Ok(tasks)
}

/// Lowercases, collapses whitespace and strips surrounding punctuation.
pub fn normalize_answer(answer: &str) -> String {
    let trimmed = answer.trim().trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn match_option(answer: &str, options: &[String]) -> Option<String> {
    let a = normalize_answer(answer);
    options.iter().find(|o| o.to_lowercase() == a).cloned()
}

/// Asks every task concurrently (bounded by the client) and grades answers.
pub async fn run_qa(tasks: &[QaTask], lm: &LmClient) -> EvalReport {
    let mut set = JoinSet::new();
    for (i, task) in tasks.iter().enumerate() {
        let prompt = task.prompt();
        let lm = lm.clone();
        set.spawn(async move {
            let out = lm.chat(&prompt).await;
            (i, prompt, out)
        });
    }
    let mut slots: Vec<Option<(RenderedPrompt, Result<String, String>)>> = vec![None; tasks.len()];
    while let Some(joined) = set.join_next().await {
        let (i, prompt, out) = joined.expect("qa task panicked");
        slots[i] = Some((prompt, out.map_err(|e| e.to_string())));
    }

    let mut report = EvalReport::default();
    for (task, slot) in tasks.iter().zip(slots) {
        let (prompt, out) = slot.expect("every task answered");
        let (answer, completion, flag) = match &out {
            Ok(text) => match parse_fields(text, &["answer"]) {
                Ok(f) => (f["answer"].clone(), text.clone(), None),
                Err(e) => (String::new(), text.clone(), Some(format!("unparsable completion: {e}"))),
            },
            Err(e) => (String::new(), String::new(), Some(format!("lm error: {e}"))),
        };
        let choice = match_option(&answer, &task.options);
        let flag = flag.or_else(|| choice.is_none().then(|| "answer matches no option".to_string()));
        let correct = choice.as_deref() == Some(task.ground_truth.as_str());
        report.push(
            EvalRecord {
                task_id: task.id.clone(),
                kind: task.kind.name().to_string(),
                sigma: None,
                desc_type: task.description_type.name().to_string(),
                answer,
                choice,
                correct,
                flag,
                skipped: false,
                chance: task.chance(),
                transcript: None,
            },
            Some(Transcript {
                task_id: task.id.clone(),
                system: prompt.system,
                user: prompt.user,
                completion,
            }),
        );
    }
    report
}
