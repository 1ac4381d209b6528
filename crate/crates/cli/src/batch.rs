use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use railtrace_core::optimize::{run_optimization, NullEmitter, OptimizerConfig, OptimizerKind};
use railtrace_core::scenario::generate_scenario;
use serde::Serialize;

use crate::parse_optimizer;

#[derive(Args)]
pub struct BatchArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long = "first-seed", default_value_t = 0)]
    first_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "adam,sgd,rmsprop,sign_sgd", value_parser = parse_optimizer)]
    optimizers: Vec<OptimizerKind>,
    /// Loss exponents.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    objectives: Vec<u32>,
    #[arg(long, default_value_t = 250)]
    steps: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    obstacles: usize,
    #[arg(long = "ctrl-points", default_value_t = 16)]
    ctrl_points: usize,
    /// Worker threads; defaults to the core count.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct RunRow {
    optimizer: &'static str,
    objective: u32,
    seed: u64,
    initial_time: f64,
    final_time: f64,
    initial_cost: f64,
    final_cost: f64,
    time_savings: f64,
    cost_savings: f64,
}

#[derive(Debug, Serialize)]
struct CellRow {
    optimizer: &'static str,
    objective: u32,
    runs: usize,
    mean_time_savings: f64,
    mean_cost_savings: f64,
}

/// `(initial - final) / initial`; zero when the initial value is zero.
pub fn relative_savings(initial: f64, last: f64) -> f64 {
    if initial == 0.0 {
        0.0
    } else {
        (initial - last) / initial
    }
}

fn one_run(a: &BatchArgs, optimizer: OptimizerKind, objective: u32, seed: u64) -> Result<RunRow> {
    let scenario = generate_scenario(seed, a.obstacles, a.ctrl_points)?;
    let cfg = OptimizerConfig {
        optimizer,
        exponent: objective,
        steps: a.steps,
        lr0: a.lr,
        seed,
        ..OptimizerConfig::default()
    };
    let run = run_optimization(&scenario, &cfg, &mut NullEmitter)
        .with_context(|| format!("{} objective {objective} seed {seed}", optimizer.name()))?;
    let (i, f) = (run.initial_reward(), run.final_reward());
    Ok(RunRow {
        optimizer: optimizer.name(),
        objective,
        seed,
        initial_time: i.time,
        final_time: f.time,
        initial_cost: i.cost,
        final_cost: f.cost,
        time_savings: relative_savings(i.time, f.time),
        cost_savings: relative_savings(i.cost, f.cost),
    })
}

fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(a: BatchArgs) -> Result<()> {
    if let Some(bad) = a.objectives.iter().find(|o| !(1..=3).contains(*o)) {
        bail!("objective {bad} is not one of 1, 2, 3");
    }
    let mut jobs = Vec::new();
    for &opt in &a.optimizers {
        for &obj in &a.objectives {
            for seed in a.first_seed..a.first_seed + a.seeds {
                jobs.push((opt, obj, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .context("building thread pool")?;
    let rows: Vec<RunRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(opt, obj, seed)| one_run(&a, opt, obj, seed))
            .collect::<Result<_>>()
    })?;

    let mut cells: BTreeMap<(usize, u32), Vec<&RunRow>> = BTreeMap::new();
    for r in &rows {
        let rank = a.optimizers.iter().position(|o| o.name() == r.optimizer).unwrap_or(0);
        cells.entry((rank, r.objective)).or_default().push(r);
    }
    let summary: Vec<CellRow> = cells
        .into_values()
        .map(|rs| {
            let n = rs.len() as f64;
            CellRow {
                optimizer: rs[0].optimizer,
                objective: rs[0].objective,
                runs: rs.len(),
                mean_time_savings: rs.iter().map(|r| r.time_savings).sum::<f64>() / n,
                mean_cost_savings: rs.iter().map(|r| r.cost_savings).sum::<f64>() / n,
            }
        })
        .collect();

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_csv(&a.out.join("runs.csv"), &rows)?;
    write_csv(&a.out.join("savings.csv"), &summary)?;
    for c in &summary {
        println!(
            "{:<9} objective {}: time {:+.4}, cost {:+.4} over {} seeds",
            c.optimizer, c.objective, c.mean_time_savings, c.mean_cost_savings, c.runs
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::relative_savings;

    #[test]
    fn savings_sign_and_zero_guard() {
        assert_eq!(relative_savings(2.0, 1.5), 0.25);
        assert_eq!(relative_savings(2.0, 3.0), -0.5);
        assert_eq!(relative_savings(0.0, 1.0), 0.0);
    }
}
