use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use railtrace_core::evalharness::{
    add_descriptions, build_discrimination_tasks, build_qa_tasks, optimize_instances, run_discrimination, run_qa,
    stubs, DiscriminationProtocol, EvalInstance, Method,
};
use railtrace_core::explain::lm::{LmClient, LmEndpoint};
use railtrace_core::explain::{describe_run, DescriptionType};
use railtrace_core::optimize::{run_optimization, NullEmitter, OptRun, OptimizerConfig, OptimizerKind, Schedule};
use railtrace_core::scenario::{generate_scenario, Scenario};
use railtrace_core::simulator::{fixture, simulate, LossWeights, SimResult};

mod batch;

#[derive(Parser)]
#[command(name = "railtrace", version, about = "Track optimization runs, traces and evaluations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario.
    Gen(GenArgs),
    /// Simulate the initial track of a scenario.
    Simulate(SimulateArgs),
    /// Optimize a track and save the run with its trace.
    Optimize(OptimizeArgs),
    /// Describe a saved run.
    Describe(DescribeArgs),
    /// Obstacle-removal question answering.
    EvalQa(EvalQaArgs),
    /// Target versus distractor discrimination.
    EvalDiscrim(EvalDiscrimArgs),
    /// Optimizer and objective sweep over seeds.
    Batch(batch::BatchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct WorldArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    obstacles: usize,
    #[arg(long = "ctrl-points", default_value_t = 16)]
    ctrl_points: usize,
}

impl WorldArgs {
    fn generate(&self) -> Result<Scenario> {
        generate_scenario(self.seed, self.obstacles, self.ctrl_points).context("generating scenario")
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Scenario JSON; replaces the generated world.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// SimResult JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step table in the fixture's column layout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Check a fixture table against the scenario's physics instead of simulating.
    #[arg(long = "fixture-check")]
    fixture_check: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Optimizer config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Loss exponent: 1, 2 or 3.
    #[arg(long)]
    exponent: Option<u32>,
    /// Time and cost weights as `time,cost`.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<LossWeights>,
    #[arg(long = "update-rate")]
    update_rate: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Args)]
struct DescribeArgs {
    /// Directory written by `optimize`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long = "type", default_value = "updates", value_parser = parse_description)]
    kind: DescriptionType,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum QaStub {
    /// Answers with the ground truth.
    Echo,
    /// Picks an obstacle uniformly.
    Uniform,
}

#[derive(Args)]
struct EvalQaArgs {
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    #[arg(long = "first-seed", default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 12)]
    obstacles: usize,
    #[arg(long = "ctrl-points", default_value_t = 12)]
    ctrl_points: usize,
    #[arg(long, default_value_t = 250)]
    steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "updates", value_parser = parse_description)]
    types: Vec<DescriptionType>,
    /// Offline answerer instead of the configured LM.
    #[arg(long, value_enum)]
    stub: Option<QaStub>,
    #[arg(long, default_value_t = 0)]
    stub_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiscrimStub {
    /// Picks the candidate nearest the optimized points.
    Oracle,
    /// Picks uniformly between the two candidates.
    Random,
}

#[derive(Args)]
struct EvalDiscrimArgs {
    #[arg(long, default_value_t = 10)]
    instances: u64,
    #[arg(long = "first-seed", default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 20)]
    obstacles: usize,
    #[arg(long = "ctrl-points", default_value_t = 16)]
    ctrl_points: usize,
    #[arg(long, default_value_t = 250)]
    steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "numerical,full,steps,updates", value_parser = parse_method)]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    stub: Option<DiscrimStub>,
    #[arg(long, default_value_t = 0)]
    stub_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Concurrent optimization runs; defaults to the core count.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "data-dir")]
    data_dir: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    OptimizerKind::parse(s).ok_or_else(|| format!("unknown optimizer `{s}` (adam, sgd, rmsprop, sign_sgd)"))
}

fn parse_description(s: &str) -> Result<DescriptionType, String> {
    DescriptionType::parse(s).ok_or_else(|| format!("unknown description type `{s}` (full, steps, updates)"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (numerical, full, steps, updates)"))
}

fn parse_weights(s: &str) -> Result<LossWeights, String> {
    let (t, c) = s.split_once(',').ok_or("expected `time,cost`")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(LossWeights {
        time: num(t)?,
        cost: num(c)?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen(a) => {
            let s = a.world.generate()?;
            emit(a.out.as_deref(), &s.encode())?;
        }
        Command::Simulate(a) => return simulate_cmd(a),
        Command::Optimize(a) => optimize_cmd(a)?,
        Command::Describe(a) => describe_cmd(a)?,
        Command::EvalQa(a) => eval_qa_cmd(a)?,
        Command::EvalDiscrim(a) => eval_discrim_cmd(a)?,
        Command::Batch(a) => batch::run(a)?,
        Command::Serve(a) => serve_cmd(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn load_scenario(path: Option<&Path>, world: &WorldArgs) -> Result<Scenario> {
    match path {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Scenario::decode(&bytes).with_context(|| format!("decoding {}", p.display()))
        }
        None => world.generate(),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn lm_from_env() -> Result<Option<LmClient>> {
    LmEndpoint::from_env()
        .map(|e| LmClient::from_endpoint(e).context("configuring LM client"))
        .transpose()
}

fn require_lm(lm: Option<LmClient>, what: &str) -> Result<LmClient> {
    lm.with_context(|| format!("{what} needs a language model; set LM_API_BASE (and LM_API_KEY, LM_MODEL)"))
}

fn simulate_cmd(a: SimulateArgs) -> Result<ExitCode> {
    let scenario = load_scenario(a.scenario.as_deref(), &a.world)?;
    if let Some(path) = &a.fixture_check {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rows = fixture::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let checks = fixture::check(&rows, &scenario.physics);
        let mut failed = 0;
        for c in &checks {
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            println!(
                "{verdict} step {:>2}: accel {:.4} vs {:.4}, drag {:.4} vs {:.4}, velocity {:.4} vs {:.4}",
                c.step,
                c.accel_computed,
                c.accel_table,
                c.drag_computed,
                c.drag_table,
                c.velocity_computed,
                c.velocity_table
            );
            failed += usize::from(!c.passed());
        }
        println!("{} of {} rows passed", checks.len() - failed, checks.len());
        return Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }

    let result = simulate(&scenario.ctrl_points, &scenario).context("simulating")?;
    if let Some(path) = &a.csv {
        emit(Some(path), step_table(&result)?.as_bytes())?;
    }
    let mut json = serde_json::to_vec_pretty(&result)?;
    json.push(b'\n');
    emit(a.out.as_deref(), &json)?;
    Ok(ExitCode::SUCCESS)
}

/// Steps in the fixture column layout: cumulative time, drag as a magnitude.
fn step_table(result: &SimResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut elapsed = 0.0;
    for r in &result.steps {
        elapsed += r.t;
        w.serialize(fixture::StepTableRow {
            step: r.m + 1,
            time: elapsed,
            acceleration: r.a_net,
            air_resistance: -r.a_air,
            cost: r.c,
            curvature: r.kappa,
            velocity: r.v_out,
        })?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn optimizer_config(a: &OptimizeArgs) -> Result<OptimizerConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => OptimizerConfig {
            seed: a.world.seed,
            ..OptimizerConfig::default()
        },
    };
    if let Some(o) = a.optimizer {
        cfg.optimizer = o;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.lr0 = lr;
    }
    if let Some(s) = a.schedule {
        cfg.schedule = match s {
            ScheduleArg::Constant => Schedule::Constant,
            ScheduleArg::Cosine => Schedule::Cosine,
        };
    }
    if let Some(e) = a.exponent {
        cfg.exponent = e;
    }
    if let Some(w) = a.weights {
        cfg.weights = w;
    }
    if let Some(u) = a.update_rate {
        cfg.update_rate = u;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn optimize_cmd(a: OptimizeArgs) -> Result<()> {
    let scenario = load_scenario(a.scenario.as_deref(), &a.world)?;
    let cfg = optimizer_config(&a)?;
    let run = run_optimization(&scenario, &cfg, &mut NullEmitter).context("optimizing")?;
    run.save(&a.out).with_context(|| format!("saving run to {}", a.out.display()))?;
    let doc = run.render_trace(cfg.update_rate)?;
    fs::write(a.out.join("trace.jsonl"), doc.to_jsonl())?;
    fs::write(a.out.join("trace.txt"), doc.to_plain_text())?;

    let (i, f) = (run.initial_reward(), run.final_reward());
    println!(
        "time {:.6} -> {:.6}, cost {:.6} -> {:.6}, loss {:.6} -> {:.6}",
        i.time, f.time, i.cost, f.cost, i.total, f.total
    );
    println!("saved {}", a.out.display());
    eprintln!("{} steps in {:.2}s", cfg.steps, run.wall_clock_secs);
    Ok(())
}

fn describe_cmd(a: DescribeArgs) -> Result<()> {
    let run = OptRun::load(&a.run).with_context(|| format!("loading run from {}", a.run.display()))?;
    let lm = if a.kind.needs_lm() {
        Some(require_lm(lm_from_env()?, "this description type")?)
    } else {
        None
    };
    let desc = runtime()?.block_on(describe_run(&run, a.kind, lm.as_ref()))?;
    let mut text = desc.text();
    text.push('\n');
    emit(a.out.as_deref(), text.as_bytes())
}

fn instances(
    seeds: std::ops::Range<u64>,
    obstacles: usize,
    ctrl_points: usize,
    cfg: &OptimizerConfig,
) -> Result<Vec<EvalInstance>> {
    let scenarios = seeds
        .map(|s| generate_scenario(s, obstacles, ctrl_points))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(optimize_instances(scenarios, cfg)?)
}

fn description_lm(kinds: &[DescriptionType], env: &Option<LmClient>) -> Result<Option<LmClient>> {
    if kinds.iter().any(|k| k.needs_lm()) {
        return Ok(Some(require_lm(env.clone(), "LM-written descriptions")?));
    }
    Ok(None)
}

fn finish_report(report: &railtrace_core::evalharness::EvalReport, out: &Path) -> Result<()> {
    report.write(out).with_context(|| format!("writing report to {}", out.display()))?;
    for g in report.groups() {
        let sigma = g.sigma.map(|s| format!(" sigma={s}")).unwrap_or_default();
        println!(
            "{} {}{sigma}: {}/{} correct ({:.3}, chance {:.3}), {} flagged, {} skipped",
            g.kind, g.desc_type, g.correct, g.total, g.accuracy, g.chance, g.flagged, g.skipped
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_qa_cmd(a: EvalQaArgs) -> Result<()> {
    let cfg = OptimizerConfig {
        steps: a.steps,
        ..OptimizerConfig::default()
    };
    cfg.validate()?;
    let env = lm_from_env()?;
    if a.stub.is_none() {
        require_lm(env.clone(), "eval-qa without --stub")?;
    }
    let rt = runtime()?;
    let mut insts = instances(a.first_seed..a.first_seed + a.seeds, a.obstacles, a.ctrl_points, &cfg)?;
    rt.block_on(add_descriptions(&mut insts, &a.types, description_lm(&a.types, &env)?.as_ref()))?;

    let mut tasks = Vec::new();
    for inst in &insts {
        tasks.extend(build_qa_tasks(inst, &cfg, &a.types)?);
    }
    let lm = match a.stub {
        Some(QaStub::Echo) => stubs::qa_echo(&tasks),
        Some(QaStub::Uniform) => stubs::random_chooser(a.stub_seed),
        None => require_lm(env, "eval-qa without --stub")?,
    };
    let report = rt.block_on(run_qa(&tasks, &lm));
    finish_report(&report, &a.out)
}

fn eval_discrim_cmd(a: EvalDiscrimArgs) -> Result<()> {
    let cfg = OptimizerConfig {
        steps: a.steps,
        ..OptimizerConfig::default()
    };
    cfg.validate()?;
    let mut protocol = DiscriminationProtocol::default();
    if let Some(s) = a.sigmas {
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            bail!("sigmas must be finite and non-negative");
        }
        protocol.sigmas = s;
    }
    let kinds: Vec<DescriptionType> = a
        .methods
        .iter()
        .filter_map(|m| match m {
            Method::Explanation(k) => Some(*k),
            Method::Numerical => None,
        })
        .collect();

    let env = lm_from_env()?;
    if a.stub.is_none() {
        require_lm(env.clone(), "eval-discrim without --stub")?;
    }
    let rt = runtime()?;
    let mut insts = instances(a.first_seed..a.first_seed + a.instances, a.obstacles, a.ctrl_points, &cfg)?;
    rt.block_on(add_descriptions(&mut insts, &kinds, description_lm(&kinds, &env)?.as_ref()))?;
    let tasks = build_discrimination_tasks(&insts, &protocol, &a.methods)?;
    let lm = match a.stub {
        Some(DiscrimStub::Oracle) => stubs::nearest_candidate(),
        Some(DiscrimStub::Random) => stubs::random_chooser(a.stub_seed),
        None => require_lm(env, "eval-discrim without --stub")?,
    };
    let report = rt.block_on(run_discrimination(&tasks, &lm));
    finish_report(&report, &a.out)
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let config = railtrace_service::ServiceConfig {
        bind: a.bind,
        lm: lm_from_env()?,
        workers,
        data_dir: a.data_dir,
    };
    eprintln!("listening on http://{}", a.bind);
    runtime()?.block_on(railtrace_service::serve(config)).context("serving")
}
