//! Multi-seed grids over `K` and the learning-rate ratio `η_ψ / η_t`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::BenchmarkProblem;
use crate::error::{OtError, Result};
use crate::metrics::{spearman, MetricReport};
use crate::rng::derive_seed;
use crate::solver::{kappa, run_training, SolverConfig, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(rename = "K")]
    pub k_values: Vec<usize>,
    /// `η_ψ / η_t`.
    pub ratios: Vec<f64>,
    pub eta_t: f64,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// `K ∈ {1,5,10,15,20}`, ratios `{1, 0.1, 0.01}`, seeds `0..5`.
    pub fn desk(eta_t: f64) -> Self {
        Self {
            k_values: vec![1, 5, 10, 15, 20],
            ratios: vec![1.0, 0.1, 0.01],
            eta_t,
            seeds: (0..5).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.ratios.is_empty() || self.seeds.is_empty() {
            return Err(OtError::Config("sweep grid lists must be non-empty".into()));
        }
        if self.k_values.contains(&0) {
            return Err(OtError::Config("K values must be positive".into()));
        }
        if self.ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) || !(self.eta_t > 0.0) {
            return Err(OtError::Config("ratios and eta_t must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.k_values.len() * self.ratios.len()
    }

    /// Solver configuration of one run.
    pub fn config_for(&self, base: &SolverConfig, k: usize, ratio: f64, seed: u64) -> SolverConfig {
        SolverConfig {
            k,
            eta_t: self.eta_t,
            eta_psi: ratio * self.eta_t,
            seed: derive_seed(&[seed, k as u64, ratio.to_bits()]),
            ..base.clone()
        }
    }
}

/// One training run of the grid.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub k: usize,
    pub ratio: f64,
    pub seed: u64,
    pub history: Option<TrainHistory>,
    pub error: Option<String>,
}

impl SweepRun {
    /// Final metrics of a run that finished without aborting.
    pub fn final_metrics(&self) -> Option<&MetricReport> {
        let h = self.history.as_ref()?;
        if h.aborted.is_some() {
            return None;
        }
        h.last().map(|r| &r.metrics)
    }
}

/// Per-cell mean and standard deviation over the successful seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    #[serde(rename = "K")]
    pub k: usize,
    pub ratio: f64,
    pub kappa: f64,
    pub runs: usize,
    pub failed: usize,
    pub map_l2_mean: f64,
    pub map_l2_std: f64,
    pub pot_grad_mse_mean: f64,
    pub pot_grad_mse_std: f64,
}

pub const AGGREGATE_HEADER: &str =
    "K,ratio,kappa,runs,failed,map_l2_mean,map_l2_std,pot_grad_mse_mean,pot_grad_mse_std";

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub runs: Vec<SweepRun>,
    pub cells: Vec<CellAggregate>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs every `(K, ratio, seed)` combination, at most `jobs` at a time.
/// Failed runs are recorded and excluded from the aggregates.
pub fn run_sweep(problem: &BenchmarkProblem, base: &SolverConfig, grid: &SweepGrid, jobs: usize) -> Result<SweepResult> {
    grid.validate()?;
    grid.config_for(base, grid.k_values[0], grid.ratios[0], grid.seeds[0]).validate()?;
    let mut specs = Vec::new();
    for &k in &grid.k_values {
        for &ratio in &grid.ratios {
            for &seed in &grid.seeds {
                specs.push((k, ratio, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| OtError::Config(format!("thread pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        specs
            .par_iter()
            .map(|&(k, ratio, seed)| {
                let cfg = grid.config_for(base, k, ratio, seed);
                match run_training(problem, &cfg) {
                    Ok(h) => SweepRun {
                        k,
                        ratio,
                        seed,
                        error: h.aborted.clone(),
                        history: Some(h),
                    },
                    Err(e) => SweepRun {
                        k,
                        ratio,
                        seed,
                        history: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let mut cells = Vec::with_capacity(grid.cells());
    for &k in &grid.k_values {
        for &ratio in &grid.ratios {
            let members: Vec<&SweepRun> = runs.iter().filter(|r| r.k == k && r.ratio == ratio).collect();
            let finals: Vec<&MetricReport> = members.iter().filter_map(|r| r.final_metrics()).collect();
            let (map_l2_mean, map_l2_std) = mean_std(&finals.iter().map(|m| m.map_l2).collect::<Vec<_>>());
            let (pot_grad_mse_mean, pot_grad_mse_std) =
                mean_std(&finals.iter().map(|m| m.pot_grad_mse).collect::<Vec<_>>());
            cells.push(CellAggregate {
                k,
                ratio,
                kappa: kappa(&grid.config_for(base, k, ratio, 0)),
                runs: finals.len(),
                failed: members.len() - finals.len(),
                map_l2_mean,
                map_l2_std,
                pot_grad_mse_mean,
                pot_grad_mse_std,
            });
        }
    }
    Ok(SweepResult {
        grid: grid.clone(),
        runs,
        cells,
    })
}

impl SweepResult {
    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from(AGGREGATE_HEADER);
        s.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                c.k, c.ratio, c.kappa, c.runs, c.failed, c.map_l2_mean, c.map_l2_std, c.pot_grad_mse_mean, c.pot_grad_mse_std
            );
        }
        s
    }

    /// Spearman correlations of `κ` with the mean final map error and with the
    /// mean final potential-gradient error, over cells with at least one run.
    pub fn kappa_trend(&self) -> Result<(f64, f64)> {
        let ok: Vec<&CellAggregate> = self.cells.iter().filter(|c| c.runs > 0).collect();
        let kappas: Vec<f64> = ok.iter().map(|c| c.kappa).collect();
        let map: Vec<f64> = ok.iter().map(|c| c.map_l2_mean).collect();
        let pot: Vec<f64> = ok.iter().map(|c| c.pot_grad_mse_mean).collect();
        Ok((spearman(&kappas, &map)?, spearman(&kappas, &pot)?))
    }
}

/// Parses an aggregate CSV back into cells.
pub fn read_aggregate(text: &str) -> Result<Vec<CellAggregate>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| OtError::Parse("empty aggregate file".into()))?;
    if header.trim() != AGGREGATE_HEADER {
        return Err(OtError::Parse(format!("aggregate header must be `{AGGREGATE_HEADER}`")));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(OtError::Parse(format!("aggregate row has {} columns", f.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].trim().parse().map_err(|_| OtError::Parse(format!("bad value `{}`", f[i])))
            };
            Ok(CellAggregate {
                k: num(0)? as usize,
                ratio: num(1)?,
                kappa: num(2)?,
                runs: num(3)? as usize,
                failed: num(4)? as usize,
                map_l2_mean: num(5)?,
                map_l2_std: num(6)?,
                pot_grad_mse_mean: num(7)?,
                pot_grad_mse_std: num(8)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::BenchmarkSpec;

    fn tiny() -> SolverConfig {
        SolverConfig {
            outer: 10,
            batch: 16,
            eval_every: 5,
            eval_batch: 32,
            dkr_samples: 16,
            map_hidden: vec![4],
            potential_hidden: vec![4],
            ..SolverConfig::default()
        }
    }

    #[test]
    fn degenerate_grid_matches_single_run() {
        let p = BenchmarkSpec::gaussian_2d().build().unwrap();
        let grid = SweepGrid {
            k_values: vec![3],
            ratios: vec![0.5],
            eta_t: 1e-3,
            seeds: vec![7],
        };
        let res = run_sweep(&p, &tiny(), &grid, 1).unwrap();
        assert_eq!(res.cells.len(), 1);
        let single = run_training(&p, &grid.config_for(&tiny(), 3, 0.5, 7)).unwrap();
        assert_eq!(res.runs[0].final_metrics(), single.last().map(|r| &r.metrics));
        assert_eq!(res.cells[0].kappa, 6.0);
    }

    #[test]
    fn counts_and_order_independence() {
        let p = BenchmarkSpec::gaussian_2d().build().unwrap();
        let grid = SweepGrid {
            k_values: vec![1, 2],
            ratios: vec![1.0, 0.1, 0.01],
            eta_t: 1e-3,
            seeds: vec![0, 1],
        };
        let a = run_sweep(&p, &tiny(), &grid, 1).unwrap();
        let b = run_sweep(&p, &tiny(), &grid, 3).unwrap();
        assert_eq!(a.cells.len(), 6);
        assert_eq!(a.aggregate_csv(), b.aggregate_csv());
        assert_eq!(read_aggregate(&a.aggregate_csv()).unwrap(), a.cells);
        assert!(SweepGrid { ratios: vec![], ..grid }.validate().is_err());
    }

    #[test]
    fn failures_are_flagged_not_fatal() {
        let p = BenchmarkSpec::gaussian_2d().build().unwrap();
        let cfg = SolverConfig {
            divergence_threshold: 1e-9,
            ..tiny()
        };
        let grid = SweepGrid {
            k_values: vec![1],
            ratios: vec![1.0],
            eta_t: 1e-3,
            seeds: vec![0, 1],
        };
        let res = run_sweep(&p, &cfg, &grid, 1).unwrap();
        assert_eq!(res.cells[0].failed, 2);
        assert!(res.runs.iter().all(|r| r.error.is_some()));
    }
}
