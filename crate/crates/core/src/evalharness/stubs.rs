//! Reference answerers that stand in for an LM.
//!
//! Each is an [`LmClient`] over an in-process transport, so the harness runs
//! the same prompt/parse path it would with a real model.

use std::collections::HashMap;

use super::qa::QaTask;
use super::{mix_seeds, parse_grid_points, prompt_inputs};
use crate::explain::lm::stub::FnTransport;
use crate::explain::lm::{ChatRequest, LmClient};
use crate::explain::prompt::format_completion;
use crate::rng::SeededRng;

fn answer(text: &str) -> String {
    format_completion(&[("reasoning", "reference answerer"), ("answer", text)])
}

fn user_text(req: &ChatRequest) -> &str {
    req.messages.last().map(|m| m.content.as_str()).unwrap_or("")
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Answers every known QA prompt with its ground truth.
pub fn qa_echo(tasks: &[QaTask]) -> LmClient {
    let truths: HashMap<String, String> = tasks
        .iter()
        .map(|t| (t.prompt().user, t.ground_truth.clone()))
        .collect();
    LmClient::stub(FnTransport::new(move |req| {
        Ok(answer(truths.get(user_text(req)).map(String::as_str).unwrap_or("")))
    }))
}

/// Picks uniformly among the options: obstacle names for QA prompts, `1`/`2`
/// for discrimination prompts. The draw depends only on `seed` and the prompt.
pub fn random_chooser(seed: u64) -> LmClient {
    LmClient::stub(FnTransport::new(move |req| {
        let user = user_text(req);
        let mut rng = SeededRng::new(mix_seeds(&[seed, fnv1a(user)]), 0);
        let inputs = prompt_inputs(user);
        if inputs.contains_key("candidate_control_points_1") {
            return Ok(answer(if rng.coin() { "1" } else { "2" }));
        }
        let options: Vec<&str> = inputs
            .get("object_positions")
            .map(|s| s.lines().filter_map(|l| l.split_once(':').map(|(n, _)| n)).collect())
            .unwrap_or_default();
        if options.is_empty() {
            return Ok(answer(""));
        }
        Ok(answer(options[rng.below(options.len() as u64) as usize]))
    }))
}

fn squared_grid_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2))
        .sum()
}

/// Numerical-mode oracle: the candidate closest (total squared grid
/// distance) to the optimized control points. Ties answer `1`.
pub fn nearest_candidate() -> LmClient {
    LmClient::stub(FnTransport::new(|req| {
        let inputs = prompt_inputs(user_text(req));
        let (Some(target), Some(c1), Some(c2)) = (
            inputs.get("optimized_control_points"),
            inputs.get("candidate_control_points_1"),
            inputs.get("candidate_control_points_2"),
        ) else {
            return Ok(answer("unavailable"));
        };
        let t = parse_grid_points(target);
        let d1 = squared_grid_distance(&t, &parse_grid_points(c1));
        let d2 = squared_grid_distance(&t, &parse_grid_points(c2));
        Ok(answer(if d1 <= d2 { "1" } else { "2" }))
    }))
}
