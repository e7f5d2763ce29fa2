//! Run configuration files.

use std::path::{Path, PathBuf};

use otlab_core::benchmarks::BenchmarkSpec;
use otlab_core::solver::SolverConfig;
use otlab_core::sweep::SweepGrid;
use otlab_core::{OtError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub benchmark: BenchmarkSpec,
    /// Seed of the exported validation and test splits.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_split_size")]
    pub split_size: usize,
}

fn default_split_size() -> usize {
    2048
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Overrides `solver.eval_every` when set.
    pub eval_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

impl Default for RunConfig {
    /// 2D Gaussians, batch 256, 2000 outer iterations, five sweep seeds.
    fn default() -> Self {
        let solver = SolverConfig {
            batch: 256,
            outer: 2000,
            ..SolverConfig::default()
        };
        Self {
            problem: ProblemSection {
                benchmark: BenchmarkSpec::gaussian_2d(),
                seed: 0,
                split_size: default_split_size(),
            },
            sweep: Some(SweepGrid::desk(solver.eta_t)),
            solver,
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. A `meta.json` written by a previous run is
    /// accepted too, in which case its `config` entry is used.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let body = match value.get("config") {
            Some(inner) if value.get("format").is_some() => inner.clone(),
            _ => value,
        };
        let cfg: RunConfig = serde_json::from_value(body)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            OtError::Json(j) => OtError::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    /// Solver settings with the output cadence applied.
    pub fn effective_solver(&self) -> SolverConfig {
        let mut s = self.solver.clone();
        if let Some(e) = self.output.eval_every {
            s.eval_every = e;
        }
        s
    }

    pub fn grid(&self) -> SweepGrid {
        self.sweep.clone().unwrap_or_else(|| SweepGrid::desk(self.solver.eta_t))
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.split_size == 0 {
            return Err(OtError::Config("problem.split_size must be positive".into()));
        }
        if self.problem.benchmark.dim() == 0 {
            return Err(OtError::Config("benchmark dimension must be positive".into()));
        }
        self.effective_solver().validate()?;
        if let Some(g) = &self.sweep {
            g.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"problem": {"benchmark": {"kind": "gaussian",
            "source": {"mean": [0], "std": [1]}, "target": {"mean": [2], "std": [1.5]}}, "colour": 1}}"#;
        assert!(RunConfig::from_json(bad).is_err());
        let bad_solver = r#"{"problem": {"benchmark": {"kind": "gaussian",
            "source": {"mean": [0], "std": [1]}, "target": {"mean": [2], "std": [1.5]}}},
            "solver": {"learning_rate": 1}}"#;
        assert!(RunConfig::from_json(bad_solver).is_err());
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = r#"{"problem": {"benchmark": {"kind": "gaussian",
            "source": {"mean": [0], "std": [1]}, "target": {"mean": [2], "std": [1.5]}}}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.problem.split_size, 2048);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.grid().seeds.len(), 5);
    }

    #[test]
    fn meta_wrapper_is_unwrapped() {
        let cfg = RunConfig::default();
        let meta = serde_json::json!({"format": "otlab-run", "config": cfg});
        assert_eq!(RunConfig::from_json(&meta.to_string()).unwrap(), cfg);
    }

    #[test]
    fn output_cadence_overrides_solver() {
        let mut cfg = RunConfig::default();
        cfg.output.eval_every = Some(7);
        assert_eq!(cfg.effective_solver().eval_every, 7);
        cfg.output.eval_every = Some(0);
        assert!(cfg.validate().is_err());
    }
}
