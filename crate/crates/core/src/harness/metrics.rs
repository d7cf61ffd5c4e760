use serde::{Deserialize, Serialize};

use crate::registration::RegistrationResult;
use crate::synthdata::Scene;

/// Accuracy and cost of one registration run against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percentage of observations assigned to their generating model point.
    pub correct_match_pct: f64,
    /// `‖R_est − R_gt‖_F / ‖R_gt‖_F`.
    pub rotation_rel_error: f64,
    /// `‖t_est − t_gt‖ / ‖t_gt‖`, or the absolute error in mm when `t_gt = 0`.
    pub translation_rel_error: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// `‖R_final − R_previous‖²_F` at termination.
    pub convergence_residual: f64,
    pub converged: bool,
}

pub fn compute_metrics(result: &RegistrationResult, scene: &Scene) -> Metrics {
    let m = scene.observations.len().max(1);
    let correct = result
        .assignments
        .iter()
        .zip(&scene.true_correspondence)
        .filter(|(z, truth)| z == truth)
        .count();
    let r_gt = scene.true_pose.rotation.matrix();
    let t_gt = scene.true_pose.translation;
    let t_err = (result.pose.translation - t_gt).norm();
    Metrics {
        correct_match_pct: 100.0 * correct as f64 / m as f64,
        rotation_rel_error: (result.pose.rotation.matrix() - r_gt).norm() / r_gt.norm(),
        translation_rel_error: if t_gt.norm() > 0.0 { t_err / t_gt.norm() } else { t_err },
        iterations: result.iterations_used,
        wall_time_s: result.timing.total,
        convergence_residual: result.convergence_residual,
        converged: result.converged,
    }
}

/// One seeded trial: its metrics, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// Rotation axis of the ground truth, for sweep trials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn from_outcome(seed: u64, axis: Option<[f64; 3]>, outcome: crate::Result<Metrics>) -> Self {
        match outcome {
            Ok(m) => Self { seed, axis, metrics: Some(m), error: None },
            Err(e) => Self { seed, axis, metrics: None, error: Some(e.to_string()) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::{register, RegistrationConfig};
    use crate::synthdata::{generate_scene, SceneSpec};

    fn solved() -> (RegistrationResult, Scene) {
        let spec = SceneSpec::default();
        let scene = generate_scene(&spec).unwrap();
        let cfg = RegistrationConfig {
            solver: crate::Solver::Lse,
            initial_pose: (&scene.true_pose).into(),
            ..RegistrationConfig::default()
        };
        (register(&scene.model_points, &scene.observations, &cfg).unwrap(), scene)
    }

    #[test]
    fn perfect_result_scores_full_marks() {
        let (mut result, scene) = solved();
        result.assignments = scene.true_correspondence.clone();
        result.pose = scene.true_pose;
        let m = compute_metrics(&result, &scene);
        assert_eq!(m.correct_match_pct, 100.0);
        assert_eq!(m.rotation_rel_error, 0.0);
        assert_eq!(m.translation_rel_error, 0.0);
    }

    #[test]
    fn disjoint_assignments_score_zero() {
        let (mut result, scene) = solved();
        let n = scene.model_points.len();
        result.assignments = scene.true_correspondence.iter().map(|i| (i + 1) % n).collect();
        assert_eq!(compute_metrics(&result, &scene).correct_match_pct, 0.0);
    }

    #[test]
    fn metrics_are_permutation_consistent() {
        let (mut result, mut scene) = solved();
        result.assignments.swap(0, 3);
        let before = compute_metrics(&result, &scene);
        // Relabel observations: reverse both the assignment list and the truth.
        result.assignments.reverse();
        scene.true_correspondence.reverse();
        scene.observations.reverse();
        assert_eq!(compute_metrics(&result, &scene), before);
    }
}
