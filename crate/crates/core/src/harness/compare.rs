//! The solver comparison matrix: {traversal, LSE} × {noise-free, noisy} on
//! one scene specification, each cell averaged over seeded trials.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{write_csv, write_json};
use super::metrics::{compute_metrics, Metrics, TrialRecord};
use super::pool::map_jobs;
use crate::ecm::CovarianceMode;
use crate::error::{Error, Result};
use crate::registration::{register, RegistrationConfig};
use crate::solvers::Solver;
use crate::synthdata::{generate_scene, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    /// Scene of every row; `noise_sigma` and `seed` are set per row and trial.
    pub scene: SceneSpec,
    /// Shared registration settings; `solver` is set per row.
    pub registration: RegistrationConfig,
    /// Noise level of the noisy rows, pixels.
    pub noise_sigma: f64,
    /// Trials per row; trial `k` uses scene seed `seed + k`.
    pub trials: usize,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            registration: RegistrationConfig { covariance_mode: CovarianceMode::Anisotropic, ..RegistrationConfig::default() },
            noise_sigma: 1.0,
            trials: 20,
            seed: 0,
        }
    }
}

impl ComparisonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        self.scene.validate()?;
        for solver in [Solver::Traversal, Solver::Lse] {
            RegistrationConfig { solver, ..self.registration.clone() }.validate()?;
        }
        Ok(())
    }

    /// Row order: traversal noisy, traversal noise-free, LSE noisy, LSE noise-free.
    pub fn rows(&self) -> [(Solver, f64); 4] {
        [
            (Solver::Traversal, self.noise_sigma),
            (Solver::Traversal, 0.0),
            (Solver::Lse, self.noise_sigma),
            (Solver::Lse, 0.0),
        ]
    }
}

/// Aggregate of one row over its successful trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub solver: Solver,
    pub noise_sigma: f64,
    pub runs: usize,
    pub failed: usize,
    pub converged: usize,
    pub correct_match_pct: f64,
    pub rotation_rel_error: f64,
    pub translation_rel_error: f64,
    pub iterations: f64,
    /// Mean wall time per run, seconds.
    pub wall_time_s: f64,
    pub convergence_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub summary: RowSummary,
    pub trials: Vec<TrialRecord>,
}

impl ComparisonRow {
    pub fn metrics(&self) -> impl Iterator<Item = &Metrics> {
        self.trials.iter().filter_map(|t| t.metrics.as_ref())
    }

    /// Summed wall time of the row's successful runs, seconds.
    pub fn total_wall_time_s(&self) -> f64 {
        self.metrics().map(|m| m.wall_time_s).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ComparisonConfig,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, solver: Solver, noisy: bool) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.summary.solver == solver && (r.summary.noise_sigma > 0.0) == noisy)
    }

    pub fn summaries(&self) -> Vec<RowSummary> {
        self.rows.iter().map(|r| r.summary).collect()
    }

    /// Writes `comparison.json` and `comparison.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        super::io::ensure_dir(dir)?;
        write_json(&dir.join("comparison.json"), self)?;
        write_csv(&dir.join("comparison.csv"), &self.summaries())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn summarise(solver: Solver, noise_sigma: f64, trials: &[TrialRecord]) -> RowSummary {
    let ok: Vec<&Metrics> = trials.iter().filter_map(|t| t.metrics.as_ref()).collect();
    RowSummary {
        solver,
        noise_sigma,
        runs: trials.len(),
        failed: trials.len() - ok.len(),
        converged: ok.iter().filter(|m| m.converged).count(),
        correct_match_pct: mean(ok.iter().map(|m| m.correct_match_pct)),
        rotation_rel_error: mean(ok.iter().map(|m| m.rotation_rel_error)),
        translation_rel_error: mean(ok.iter().map(|m| m.translation_rel_error)),
        iterations: mean(ok.iter().map(|m| m.iterations as f64)),
        wall_time_s: mean(ok.iter().map(|m| m.wall_time_s)),
        convergence_residual: mean(ok.iter().map(|m| m.convergence_residual)),
    }
}

fn run_trial(cfg: &ComparisonConfig, solver: Solver, noise_sigma: f64, seed: u64) -> Result<Metrics> {
    let spec = SceneSpec { noise_sigma, seed, ..cfg.scene.clone() };
    let scene = generate_scene(&spec)?;
    let reg = RegistrationConfig { solver, camera: spec.camera, ..cfg.registration.clone() };
    let result = register(&scene.model_points, &scene.observations, &reg)?;
    Ok(compute_metrics(&result, &scene))
}

/// Runs the four-row matrix. A failing trial is recorded with its error and
/// excluded from the row's means; it never aborts the other rows.
pub fn run_comparison(cfg: &ComparisonConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(4);
    for (solver, noise_sigma) in cfg.rows() {
        let seeds: Vec<u64> = (0..cfg.trials as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
        let trials = map_jobs(&seeds, |&seed| TrialRecord::from_outcome(seed, None, run_trial(cfg, solver, noise_sigma, seed)));
        rows.push(ComparisonRow { summary: summarise(solver, noise_sigma, &trials), trials });
    }
    Ok(ComparisonReport { config: cfg.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_is_strict_and_defaults_to_anisotropic() {
        let cfg: ComparisonConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ComparisonConfig::default());
        assert_eq!(cfg.registration.covariance_mode, CovarianceMode::Anisotropic);
        assert!(serde_json::from_str::<ComparisonConfig>(r#"{"trails": 3}"#).is_err());
        assert!(ComparisonConfig { trials: 0, ..ComparisonConfig::default() }.validate().is_err());
    }

    #[test]
    fn small_matrix_has_four_rows_and_round_trips() {
        let mut cfg = ComparisonConfig { trials: 2, ..ComparisonConfig::default() };
        cfg.registration.max_iterations = 2;
        cfg.registration.traversal.angle_coarse_step = 30f64.to_radians();
        cfg.registration.traversal.translation_coarse_step = 200.0;
        cfg.registration.traversal.refine_levels = 0;
        let report = run_comparison(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.trials.len() == 2));

        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
        let rows: Vec<RowSummary> = super::super::io::read_csv(
            &dir.path().join("comparison.csv"),
            &[
                "solver", "noise_sigma", "runs", "failed", "converged", "correct_match_pct", "rotation_rel_error",
                "translation_rel_error", "iterations", "wall_time_s", "convergence_residual",
            ],
        )
        .unwrap();
        assert_eq!(super::super::io::csv_string(&rows).unwrap(), text);
    }
}
