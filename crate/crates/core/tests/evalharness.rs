use railtrace_core::evalharness::{
    add_descriptions, build_discrimination_tasks, build_qa_tasks, optimize_instances, run_discrimination, run_qa,
    stubs, DiscriminationProtocol, EvalInstance, Method,
};
use railtrace_core::explain::lm::stub::FnTransport;
use railtrace_core::explain::lm::LmClient;
use railtrace_core::explain::prompt::format_completion;
use railtrace_core::explain::DescriptionType;
use railtrace_core::optimize::OptimizerConfig;
use railtrace_core::scenario::generate_scenario;

fn config() -> OptimizerConfig {
    OptimizerConfig {
        steps: 10,
        ..OptimizerConfig::default()
    }
}

async fn instances(n: u64) -> Vec<EvalInstance> {
    let scenarios = (0..n).map(|s| generate_scenario(s, 12, 12).unwrap()).collect();
    let mut inst = optimize_instances(scenarios, &config()).unwrap();
    add_descriptions(&mut inst, &[DescriptionType::Updates], None).await.unwrap();
    inst
}

fn answering(text: &'static str) -> LmClient {
    LmClient::stub(FnTransport::new(move |_| {
        Ok(format_completion(&[("reasoning", "r"), ("answer", text)]))
    }))
}

#[tokio::test(flavor = "multi_thread")]
async fn zero_sigma_tasks_are_skipped() {
    let inst = instances(2).await;
    let protocol = DiscriminationProtocol {
        sigmas: vec![0.0, 0.2],
        ..DiscriminationProtocol::default()
    };
    let tasks = build_discrimination_tasks(&inst, &protocol, &[Method::Numerical]).unwrap();
    let report = run_discrimination(&tasks, &stubs::nearest_candidate()).await;
    let skipped: Vec<_> = report.records.iter().filter(|r| r.skipped).collect();
    assert_eq!(skipped.len(), 8);
    assert!(skipped.iter().all(|r| r.sigma == Some(0.0) && r.flag.is_some() && r.transcript.is_none()));
    assert_eq!(report.total(), 8);
    assert_eq!(report.accuracy(), Some(1.0));
}

#[tokio::test(flavor = "multi_thread")]
async fn explanation_prompts_carry_the_description_only() {
    let inst = instances(1).await;
    let tasks = build_discrimination_tasks(
        &inst,
        &DiscriminationProtocol::default(),
        &[Method::Numerical, Method::Explanation(DescriptionType::Updates)],
    )
    .unwrap();
    for t in &tasks {
        let p = t.prompt();
        let numerical = t.method == Method::Numerical;
        assert_eq!(p.user.contains("[[ ## optimized_control_points ## ]]"), numerical);
        assert_eq!(p.user.contains("[[ ## optimization_description ## ]]"), !numerical);
        assert!(p.user.contains(&format!("[[ ## seed ## ]]\n{}\n", t.condition_seed)));
    }
    // The oracle cannot answer without the optimized positions.
    let explained: Vec<_> = tasks.iter().filter(|t| t.method != Method::Numerical).cloned().collect();
    let report = run_discrimination(&explained, &stubs::nearest_candidate()).await;
    assert_eq!(report.accuracy(), Some(0.0));
    assert!(report.records.iter().all(|r| r.flag.as_deref() == Some("answer is not 1 or 2")));
}

#[tokio::test(flavor = "multi_thread")]
async fn unmatched_qa_answers_are_flagged() {
    let inst = instances(1).await;
    let tasks = build_qa_tasks(&inst[0], &config(), &[DescriptionType::Updates]).unwrap();
    assert_eq!(tasks.len(), 4);
    for t in &tasks {
        assert!(t.options.contains(&t.ground_truth));
        assert_eq!(t.options.len(), 12);
    }
    let report = run_qa(&tasks, &answering("the big one")).await;
    assert_eq!(report.accuracy(), Some(0.0));
    assert!(report.records.iter().all(|r| r.flag.is_some() && r.choice.is_none()));
    let echo = run_qa(&tasks, &stubs::qa_echo(&tasks)).await;
    assert_eq!(echo.accuracy(), Some(1.0));
    assert_eq!(echo.transcripts.len(), 4);
}
