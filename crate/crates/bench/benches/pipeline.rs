use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use railtrace_core::autodiff::grad;
use railtrace_core::optimize::{
    flatten_free, opt_step, run_optimization, NullEmitter, OptState, OptimizerConfig, OptimizerKind, TrackObjective,
};
use railtrace_core::scenario::generate_scenario;
use railtrace_core::simulator::{simulate, LossWeights};

fn simulation(c: &mut Criterion) {
    let s = generate_scenario(7, 20, 16).unwrap();
    c.bench_function("simulate", |b| b.iter(|| simulate(black_box(&s.ctrl_points), &s).unwrap()));

    let objective = TrackObjective::new(&s, 1, LossWeights::default());
    let free = flatten_free(&s.ctrl_points);
    c.bench_function("gradient", |b| b.iter(|| grad(&objective, black_box(&free)).unwrap()));

    let (_, g) = grad(&objective, &free).unwrap();
    for kind in OptimizerKind::ALL {
        c.bench_function(&format!("step/{}", kind.name()), |b| {
            b.iter_batched(
                || (OptState::new(free.len()), free.clone()),
                |(mut state, mut theta)| opt_step(kind, &mut state, &mut theta, &g, 5e-3).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn tracing(c: &mut Criterion) {
    let s = generate_scenario(3, 20, 16).unwrap();
    let cfg = OptimizerConfig {
        steps: 50,
        ..OptimizerConfig::default()
    };
    let run = run_optimization(&s, &cfg, &mut NullEmitter).unwrap();
    c.bench_function("render_trace", |b| b.iter(|| run.render_trace(black_box(5)).unwrap().to_jsonl()));

    let mut group = c.benchmark_group("optimization");
    group.sample_size(10);
    let short = OptimizerConfig {
        steps: 10,
        ..OptimizerConfig::default()
    };
    group.bench_function("ten_iterations", |b| b.iter(|| run_optimization(&s, &short, &mut NullEmitter).unwrap()));
    group.finish();
}

criterion_group!(benches, simulation, tracing);
criterion_main!(benches);
