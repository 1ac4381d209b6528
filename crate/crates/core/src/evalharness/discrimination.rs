//! The target-versus-distractor discrimination game.

use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;

use super::report::{EvalRecord, EvalReport, Transcript};
use super::{mix_seeds, EvalError, EvalInstance};
use crate::explain::lm::LmClient;
use crate::explain::prompt::{parse_fields, render_prompt, RenderedPrompt};
use crate::explain::{discrimination_template, format_control_points, format_objects, values, DescriptionType};
use crate::rng::SeededRng;
use crate::scenario::{to_grid, Scenario, Vec2};

pub const SIGMA_GRID: [f64; 5] = [0.02, 0.06, 0.1, 0.15, 0.2];

const DISTRACTOR_STREAM: u64 = 21;
const ORDER_STREAM: u64 = 22;

/// Adds seeded Gaussian noise to every free control point.
pub fn make_distractor(target: &[Vec2], sigma: f64, seed: u64) -> Vec<Vec2> {
    let mut rng = SeededRng::new(seed, DISTRACTOR_STREAM);
    let last = target.len().saturating_sub(1);
    target
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 || i == last {
                *p
            } else {
                let dx = rng.normal() * sigma;
                let dy = rng.normal() * sigma;
                Vec2::new(p.x + dx, p.y + dy)
            }
        })
        .collect()
}

/// What the answerer sees besides the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Control: the optimized control points' grid positions.
    Numerical,
    Explanation(DescriptionType),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Numerical => "numerical",
            Method::Explanation(d) => d.name(),
        }
    }

    pub fn all() -> Vec<Method> {
        let mut v = vec![Method::Numerical];
        v.extend(DescriptionType::ALL.into_iter().map(Method::Explanation));
        v
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::all().into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationProtocol {
    pub sigmas: Vec<f64>,
    pub distractor_seeds: Vec<u64>,
    pub condition_seeds: Vec<u64>,
}

impl Default for DiscriminationProtocol {
    fn default() -> Self {
        Self {
            sigmas: SIGMA_GRID.to_vec(),
            distractor_seeds: vec![0, 1],
            condition_seeds: vec![0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationTask {
    pub id: String,
    pub scenario: Scenario,
    pub target_theta: Vec<Vec2>,
    pub distractor_theta: Vec<Vec2>,
    pub sigma: f64,
    /// Passed to the answerer as its seed input.
    pub condition_seed: u64,
    pub candidate_order_seed: u64,
    pub method: Method,
    pub description: Option<String>,
}

impl DiscriminationTask {
    /// True when the target is shown as candidate 1.
    pub fn target_first(&self) -> bool {
        SeededRng::new(self.candidate_order_seed, ORDER_STREAM).coin()
    }

    /// The correct answer, `1` or `2`.
    pub fn target_id(&self) -> u8 {
        if self.target_first() {
            1
        } else {
            2
        }
    }

    /// Candidates are indistinguishable once quantized to the grid.
    pub fn is_degenerate(&self) -> bool {
        let grid = |t: &[Vec2]| t.iter().map(|p| to_grid(*p).ok()).collect::<Vec<_>>();
        grid(&self.target_theta) == grid(&self.distractor_theta)
    }

    pub fn prompt(&self) -> RenderedPrompt {
        let (c1, c2) = if self.target_first() {
            (&self.target_theta, &self.distractor_theta)
        } else {
            (&self.distractor_theta, &self.target_theta)
        };
        let numerical = self.method == Method::Numerical;
        let evidence = if numerical {
            ("optimized_control_points", format_control_points(&self.target_theta))
        } else {
            ("optimization_description", self.description.clone().unwrap_or_default())
        };
        let v = values([
            ("seed", self.condition_seed.to_string()),
            evidence,
            ("object_positions", format_objects(&self.scenario.obstacles)),
            ("initial_control_points", format_control_points(&self.scenario.ctrl_points)),
            ("candidate_control_points_1", format_control_points(c1)),
            ("candidate_control_points_2", format_control_points(c2)),
        ]);
        render_prompt(&discrimination_template(numerical), &v).expect("discrimination inputs are complete")
    }
}

/// Every (instance, sigma, distractor seed, condition seed, method) task.
pub fn build_discrimination_tasks(
    instances: &[EvalInstance],
    protocol: &DiscriminationProtocol,
    methods: &[Method],
) -> Result<Vec<DiscriminationTask>, EvalError> {
    let mut tasks = Vec::new();
    for inst in instances {
        let target = inst.run.final_theta().to_vec();
        for &sigma in &protocol.sigmas {
            for &d in &protocol.distractor_seeds {
                let distractor = make_distractor(&target, sigma, mix_seeds(&[inst.scenario.seed, sigma.to_bits(), d]));
                for &c in &protocol.condition_seeds {
                    let order = mix_seeds(&[inst.scenario.seed, sigma.to_bits(), d, c]);
                    for &m in methods {
                        let description = match m {
                            Method::Numerical => None,
                            Method::Explanation(k) => Some(inst.description(k)?.to_string()),
                        };
                        tasks.push(DiscriminationTask {
                            id: format!("disc-{}-s{sigma}-d{d}-c{c}-{}", inst.scenario.seed, m.name()),
                            scenario: inst.scenario.clone(),
                            target_theta: target.clone(),
                            distractor_theta: distractor.clone(),
                            sigma,
                            condition_seed: c,
                            candidate_order_seed: order,
                            method: m,
                            description,
                        });
                    }
                }
            }
        }
    }
    Ok(tasks)
}

/// Strict: only a bare `1` or `2` counts.
pub fn parse_choice(answer: &str) -> Option<u8> {
    match answer.trim() {
        "1" => Some(1),
        "2" => Some(2),
        _ => None,
    }
}

pub async fn run_discrimination(tasks: &[DiscriminationTask], lm: &LmClient) -> EvalReport {
    let mut set = JoinSet::new();
    for (i, task) in tasks.iter().enumerate() {
        if task.is_degenerate() {
            continue;
        }
        let prompt = task.prompt();
        let lm = lm.clone();
        set.spawn(async move {
            let out = lm.chat(&prompt).await;
            (i, prompt, out)
        });
    }
    let mut slots: Vec<Option<(RenderedPrompt, Result<String, String>)>> = vec![None; tasks.len()];
    while let Some(joined) = set.join_next().await {
        let (i, prompt, out) = joined.expect("discrimination task panicked");
        slots[i] = Some((prompt, out.map_err(|e| e.to_string())));
    }

    let mut report = EvalReport::default();
    for (task, slot) in tasks.iter().zip(slots) {
        let mut record = EvalRecord {
            task_id: task.id.clone(),
            kind: "discrimination".into(),
            sigma: Some(task.sigma),
            desc_type: task.method.name().to_string(),
            answer: String::new(),
            choice: None,
            correct: false,
            flag: None,
            skipped: false,
            chance: 0.5,
            transcript: None,
        };
        let Some((prompt, out)) = slot else {
            record.skipped = true;
            record.flag = Some("degenerate: candidates identical on the grid".into());
            report.push(record, None);
            continue;
        };
        let mut completion = String::new();
        match out {
            Ok(text) => {
                match parse_fields(&text, &["answer"]) {
                    Ok(f) => record.answer = f["answer"].clone(),
                    Err(e) => record.flag = Some(format!("unparsable completion: {e}")),
                }
                completion = text;
            }
            Err(e) => record.flag = Some(format!("lm error: {e}")),
        }
        let choice = parse_choice(&record.answer);
        if record.flag.is_none() && choice.is_none() {
            record.flag = Some("answer is not 1 or 2".into());
        }
        record.correct = choice == Some(task.target_id());
        record.choice = choice.map(|c| c.to_string());
        report.push(
            record,
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
