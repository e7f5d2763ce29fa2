use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use otlab_core::benchmarks::export_benchmark;
use otlab_core::metrics::{stability_bound_check, StabilityBound};
use otlab_core::models::io::SavedModel;
use otlab_core::oracle::{run_suite, SuiteConfig};
use otlab_core::solver::{kappa, run_training_with, RunOptions, TrainHistory};
use otlab_core::sweep::{read_aggregate, run_sweep, SweepResult};
use otlab_core::OtError;
use serde_json::json;

use crate::config::RunConfig;
use crate::plots;

/// Training stopped on the divergence guard or a non-finite value.
#[derive(Debug)]
pub struct DivergenceAbort(pub String);

impl fmt::Display for DivergenceAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted: {}", self.0)
    }
}

impl std::error::Error for DivergenceAbort {}

#[derive(Debug)]
pub struct OracleFailure(pub Vec<String>);

impl fmt::Display for OracleFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "oracle checks failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for OracleFailure {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    OtError::Config(msg.into()).into()
}

/// Resolves the output directory and makes sure it can be written.
fn prepare_out(cli: Option<&Path>, cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let dir = cli
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| config_error("no output directory: pass --out or set output.dir"))?;
    if dir.exists() {
        let occupied = fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(config_error(format!(
                "{} is not empty; use --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn generate(cfg: &RunConfig, out: Option<&Path>, force: bool) -> Result<PathBuf> {
    let dir = prepare_out(out, cfg, force)?;
    let problem = cfg.problem.benchmark.build()?;
    export_benchmark(&cfg.problem.benchmark, &problem, &dir, cfg.problem.split_size, cfg.problem.seed)?;
    let meta_path = dir.join("meta.json");
    let mut meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    meta["config"] = serde_json::to_value(cfg)?;
    write_json(&meta_path, &meta)?;
    Ok(dir)
}

fn bound(history: &TrainHistory) -> Option<StabilityBound> {
    stability_bound_check(history.metrics()).ok()
}

pub fn train(cfg: &RunConfig, out: Option<&Path>, force: bool, opts: RunOptions) -> Result<PathBuf> {
    let solver = cfg.effective_solver();
    let problem = cfg.problem.benchmark.build()?;
    let dir = prepare_out(out, cfg, force)?;
    let outcome = run_training_with(&problem, &solver, opts)?;
    let history = &outcome.history;

    history.save_csv(&dir.join("history.csv"))?;
    SavedModel::Mlp(outcome.state.map.clone()).save(&dir.join("map.model"))?;
    SavedModel::from(outcome.state.potential.clone()).save(&dir.join("potential.model"))?;

    let status = match (&history.aborted, history.diverged) {
        (None, _) => "completed",
        (Some(_), true) => "diverged",
        (Some(_), false) => "aborted",
    };
    let meta = json!({
        "format": "otlab-run",
        "version": 1,
        "command": "train",
        "config": cfg,
        "options": opts,
        "status": status,
        "aborted": history.aborted,
        "kappa": kappa(&solver),
        "optimal_cost": problem.ground_truth().map(|g| g.optimal_cost_half),
        "checkpoints": history.rows.len(),
        "final": history.last().map(|r| r.metrics),
        "perturbation": history.perturbation,
        "stability_bound": bound(history),
    });
    write_json(&dir.join("meta.json"), &meta)?;
    if !history.rows.is_empty() {
        plots::run_panels(&history.rows, history.perturbation.map(|p| p.iteration), &dir.join("run.svg"))?;
    }
    if let Some(reason) = &history.aborted {
        return Err(DivergenceAbort(reason.clone()).into());
    }
    Ok(dir)
}

fn run_file(k: usize, ratio: f64, seed: u64) -> String {
    format!("K{k}_r{ratio}_s{seed}.csv")
}

fn sweep_meta(cfg: &RunConfig, result: &SweepResult) -> serde_json::Value {
    let trend = result.kappa_trend().ok();
    let failures: Vec<_> = result
        .runs
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| json!({"K": r.k, "ratio": r.ratio, "seed": r.seed, "error": e}))
        })
        .collect();
    // Bound constant per seed over every checkpoint of that seed's runs.
    let per_seed: Vec<_> = result
        .grid
        .seeds
        .iter()
        .map(|&s| {
            let rows = result
                .runs
                .iter()
                .filter(|r| r.seed == s && r.error.is_none())
                .filter_map(|r| r.history.as_ref())
                .flat_map(|h| h.metrics());
            json!({"seed": s, "stability_bound": stability_bound_check(rows).ok()})
        })
        .collect();
    let mut config = cfg.clone();
    config.sweep = Some(result.grid.clone());
    json!({
        "format": "otlab-sweep",
        "version": 1,
        "command": "sweep",
        "config": config,
        "cells": result.cells.len(),
        "runs": result.runs.len(),
        "failures": failures,
        "trend": trend.map(|(m, p)| json!({
            "spearman_kappa_map_l2": m,
            "spearman_kappa_pot_grad_mse": p,
        })),
        "stability_bound_per_seed": per_seed,
    })
}

fn sweep_heatmaps(result_cells: &[otlab_core::sweep::CellAggregate], k: &[usize], r: &[f64], dir: &Path) -> Result<()> {
    plots::heatmap(
        result_cells,
        k,
        r,
        "Final map error (mean over seeds)",
        |c| c.map_l2_mean,
        &dir.join("heatmap_map_l2.svg"),
    )?;
    plots::heatmap(
        result_cells,
        k,
        r,
        "Final potential gradient error (mean over seeds)",
        |c| c.pot_grad_mse_mean,
        &dir.join("heatmap_pot_grad_mse.svg"),
    )
}

pub fn sweep(cfg: &RunConfig, out: Option<&Path>, force: bool, jobs: usize, seeds: Option<u64>) -> Result<PathBuf> {
    let mut grid = cfg.grid();
    if let Some(n) = seeds {
        if n == 0 {
            return Err(config_error("--seeds must be positive"));
        }
        grid.seeds = (0..n).collect();
    }
    grid.validate()?;
    let problem = cfg.problem.benchmark.build()?;
    let dir = prepare_out(out, cfg, force)?;
    let result = run_sweep(&problem, &cfg.effective_solver(), &grid, jobs)?;

    fs::write(dir.join("aggregate.csv"), result.aggregate_csv())?;
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for r in &result.runs {
        if let Some(h) = &r.history {
            h.save_csv(&runs_dir.join(run_file(r.k, r.ratio, r.seed)))?;
        }
    }
    write_json(&dir.join("meta.json"), &sweep_meta(cfg, &result))?;
    sweep_heatmaps(&result.cells, &grid.k_values, &grid.ratios, &dir)?;
    for r in result.runs.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: run K={} ratio={} seed={} failed: {}",
            r.k,
            r.ratio,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    if let Ok((m, p)) = result.kappa_trend() {
        println!("spearman(kappa, map_l2) = {m:.3}");
        println!("spearman(kappa, pot_grad_mse) = {p:.3}");
    }
    Ok(dir)
}

pub fn oracle(cfg: &SuiteConfig, out: Option<&Path>) -> Result<()> {
    if cfg.sizes.iter().any(|&n| n == 0 || n > otlab_core::assignment::MAX_ASSIGNMENT) {
        return Err(config_error(format!(
            "sizes must lie in 1..={}",
            otlab_core::assignment::MAX_ASSIGNMENT
        )));
    }
    let report = run_suite(cfg)?;
    print!("{}", report.table());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("oracle.json"), &json!({"config": cfg, "report": report}))?;
    }
    if !report.passed() {
        let failed = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        return Err(OracleFailure(failed).into());
    }
    Ok(())
}

fn read_meta(dir: &Path) -> Option<serde_json::Value> {
    let text = fs::read_to_string(dir.join("meta.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Regenerates the figures of a run or sweep directory. Returns the files written.
pub fn report(dir: &Path) -> Result<Vec<PathBuf>> {
    let meta = read_meta(dir);
    let aggregate = dir.join("aggregate.csv");
    if aggregate.exists() {
        let cells = read_aggregate(&fs::read_to_string(&aggregate)?)?;
        let grid = meta
            .as_ref()
            .and_then(|m| m.get("config"))
            .and_then(|c| c.get("sweep"))
            .ok_or_else(|| anyhow::anyhow!("{}: meta.json lacks the sweep grid", dir.display()))?;
        let grid: otlab_core::sweep::SweepGrid = serde_json::from_value(grid.clone())?;
        sweep_heatmaps(&cells, &grid.k_values, &grid.ratios, dir)?;
        return Ok(vec![dir.join("heatmap_map_l2.svg"), dir.join("heatmap_pot_grad_mse.svg")]);
    }
    let history_path = dir.join("history.csv");
    if !history_path.exists() {
        bail!("{} holds neither history.csv nor aggregate.csv", dir.display());
    }
    let history = TrainHistory::from_csv(&fs::read_to_string(&history_path)?)
        .with_context(|| format!("reading {}", history_path.display()))?;
    if history.rows.is_empty() {
        bail!("{} has no rows", history_path.display());
    }
    let marker = meta
        .as_ref()
        .and_then(|m| m.pointer("/perturbation/iteration"))
        .and_then(|v| v.as_u64())
        .map(|v| v as usize);
    let path = dir.join("run.svg");
    plots::run_panels(&history.rows, marker, &path)?;
    Ok(vec![path])
}
