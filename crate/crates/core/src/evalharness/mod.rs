//! Quantitative evaluations: obstacle-removal QA and the distractor
//! discrimination game, with report writers and non-LM reference answerers.

pub mod discrimination;
pub mod qa;
pub mod report;
pub mod stubs;

use rayon::prelude::*;
use thiserror::Error;

use crate::explain::lm::LmClient;
use crate::explain::prompt::{parse_fields, FieldMap, COMPLETED};
use crate::explain::{describe_run, DescriptionType, ExplainError};
use crate::optimize::{run_optimization, NullEmitter, OptRun, OptimizeError, OptimizerConfig};
use crate::scenario::{Scenario, ScenarioError};
use crate::trace::{phi_e_sample, EventStyle, TraceError};

pub use discrimination::{
    build_discrimination_tasks, make_distractor, run_discrimination, DiscriminationProtocol, DiscriminationTask,
    Method, SIGMA_GRID,
};
pub use qa::{build_qa_tasks, qa_ground_truth, removal_impacts, run_qa, Baseline, Metric, QaTask, QuestionKind};
pub use report::{EvalRecord, EvalReport, GroupSummary, Transcript};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scenario has no obstacles")]
    NoObstacles,
    #[error("instance lacks a `{0}` description")]
    MissingDescription(&'static str),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// An optimized scenario plus the descriptions generated for it.
#[derive(Debug, Clone)]
pub struct EvalInstance {
    pub scenario: Scenario,
    pub run: OptRun,
    pub descriptions: Vec<(DescriptionType, String)>,
}

impl EvalInstance {
    pub fn description(&self, kind: DescriptionType) -> Result<&str, EvalError> {
        self.descriptions
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, t)| t.as_str())
            .ok_or(EvalError::MissingDescription(kind.name()))
    }

    /// Event lines of the initial track.
    pub fn initial_events(&self) -> String {
        phi_e_sample(&self.run.signals.events[0], EventStyle::Span)
            .into_iter()
            .map(|l| l.text)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Optimizes every scenario in parallel.
pub fn optimize_instances(scenarios: Vec<Scenario>, config: &OptimizerConfig) -> Result<Vec<EvalInstance>, EvalError> {
    scenarios
        .into_par_iter()
        .map(|scenario| {
            let run = run_optimization(&scenario, config, &mut NullEmitter)?;
            Ok(EvalInstance {
                scenario,
                run,
                descriptions: Vec::new(),
            })
        })
        .collect()
}

/// Generates the requested descriptions for each instance.
pub async fn add_descriptions(
    instances: &mut [EvalInstance],
    kinds: &[DescriptionType],
    lm: Option<&LmClient>,
) -> Result<(), EvalError> {
    for inst in instances.iter_mut() {
        for &kind in kinds {
            if inst.descriptions.iter().any(|(k, _)| *k == kind) {
                continue;
            }
            let d = describe_run(&inst.run, kind, lm).await?;
            inst.descriptions.push((kind, d.text()));
        }
    }
    Ok(())
}

const RESPOND_PREFIX: &str = "Respond with the corresponding output fields";

/// Recovers the input field values from a rendered user message.
pub fn prompt_inputs(user: &str) -> FieldMap {
    let body = user.split(RESPOND_PREFIX).next().unwrap_or(user);
    parse_fields(&format!("{body}[[ ## {COMPLETED} ## ]]"), &[]).unwrap_or_default()
}

/// Grid points from `... (x, y)` lines.
pub fn parse_grid_points(text: &str) -> Vec<(f64, f64)> {
    text.lines()
        .filter_map(|line| {
            let open = line.rfind('(')?;
            let close = line[open..].find(')')? + open;
            let (x, y) = line[open + 1..close].split_once(',')?;
            Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
        })
        .collect()
}

/// Order-sensitive 64-bit mix of several seeds.
pub(crate) fn mix_seeds(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_point_lines() {
        let pts = parse_grid_points("Control point 0: (5, 5)\nControl point 1: (10, 97)\nnoise");
        assert_eq!(pts, vec![(5.0, 5.0), (10.0, 97.0)]);
    }

    #[test]
    fn inputs_recovered_from_user_message() {
        let user = "[[ ## a ## ]]\none\n\n[[ ## b ## ]]\ntwo lines\nhere\n\nRespond with the corresponding output fields, starting with ...";
        let f = prompt_inputs(user);
        assert_eq!(f["a"], "one");
        assert_eq!(f["b"], "two lines\nhere");
    }

    #[test]
    fn seed_mix_is_order_sensitive() {
        assert_ne!(mix_seeds(&[1, 2]), mix_seeds(&[2, 1]));
        assert_eq!(mix_seeds(&[1, 2]), mix_seeds(&[1, 2]));
    }
}
