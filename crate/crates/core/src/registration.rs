//! The ECM registration loop: project → E-step → pose CM-step → covariance
//! CM-step → convergence test, followed by MAP classification.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::ecm::{
    compute_posteriors, expected_complete_log_likelihood, pose_objective, update_covariances, virtual_observations,
    Covariance2, CovarianceMode, ObjectiveTerms, OutlierModel, PosteriorMatrix,
};
use crate::error::{Error, Result};
use crate::geometry::{
    project_all, rotation_distance_sq, CameraModel, EulerAngles, Point2, Point3, RigidTransform, RotationMatrix,
};
use crate::solvers::{argmax_row, lse_cm_step, traversal_search, Solver, TraversalConfig};

/// Rotation/translation as exchanged in JSON: 9 row-major rotation entries,
/// Euler angles in degrees (`Rz·Ry·Rx`), translation in mm. On input either
/// `rotation` or `euler_deg` may be given; `rotation` wins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_deg: Option<[f64; 3]>,
    #[serde(default)]
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for PoseRecord {
    fn from(t: &RigidTransform) -> Self {
        Self {
            rotation: Some(t.rotation_row_major()),
            euler_deg: Some(t.euler().to_degrees()),
            translation: t.translation.into(),
        }
    }
}

impl PoseRecord {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("translation must be finite".into()));
        }
        match (self.rotation, self.euler_deg) {
            (Some(r), _) => RigidTransform::from_row_major(r, self.translation),
            (None, Some(e)) => {
                if !e.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidConfig("euler_deg must be finite".into()));
                }
                Ok(RigidTransform::from_euler(EulerAngles::from_degrees(e), Vector3::from(self.translation)))
            }
            (None, None) => Ok(RigidTransform::new(Rotation3::identity(), Vector3::from(self.translation))),
        }
    }
}

fn identity_record() -> PoseRecord {
    PoseRecord::from(&RigidTransform::identity())
}

/// Registration settings; also the JSON config schema of the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub solver: Solver,
    pub covariance_mode: CovarianceMode,
    pub outlier: OutlierModel,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub traversal: TraversalConfig,
    pub camera: CameraModel,
    pub initial_pose: PoseRecord,
    pub initial_covariance_scale: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            solver: Solver::default(),
            covariance_mode: CovarianceMode::Anisotropic,
            outlier: OutlierModel::disabled(),
            max_iterations: 50,
            convergence_tol: 1e-6,
            traversal: TraversalConfig::default(),
            camera: CameraModel::default(),
            initial_pose: identity_record(),
            initial_covariance_scale: 1.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return Err(Error::InvalidConfig("convergence_tol must be > 0".into()));
        }
        if !(self.initial_covariance_scale > 0.0 && self.initial_covariance_scale.is_finite()) {
            return Err(Error::InvalidConfig("initial_covariance_scale must be > 0".into()));
        }
        self.outlier.validate()?;
        self.camera.validate()?;
        self.initial_pose.to_transform()?;
        if self.solver == Solver::Traversal {
            self.traversal.validate()?;
        }
        Ok(())
    }
}

/// State after one E-step + CM-steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(serialize_with = "ser_pose")]
    pub pose: RigidTransform,
    /// Pose objective at the incoming pose, under this iteration's posteriors and covariances.
    pub objective_before: f64,
    /// Pose objective at the new pose, same posteriors and covariances.
    pub objective: f64,
    /// Expected complete-data log-likelihood at the new pose and updated covariances.
    pub log_likelihood: f64,
    pub rotation_change_sq: f64,
    pub translation_change: f64,
    /// Components with λ_i ≥ weight epsilon.
    pub valid_components: usize,
}

fn ser_pose<S: serde::Serializer>(pose: &RigidTransform, s: S) -> std::result::Result<S::Ok, S::Error> {
    PoseRecord::from(pose).serialize(s)
}

/// Seconds spent per phase, summed over iterations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseTimes {
    pub e_step: f64,
    pub pose_step: f64,
    pub covariance_step: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: RigidTransform,
    pub covariances: Vec<Covariance2>,
    pub posteriors: PosteriorMatrix,
    /// `z_j`, 0-based model index per observation.
    pub assignments: Vec<usize>,
    /// `λ_i` from the E-step that produced `posteriors`.
    pub weights: Vec<f64>,
    /// Validity flag of each virtual observation in that E-step.
    pub valid: Vec<bool>,
    pub iterations_used: usize,
    pub converged: bool,
    /// `‖R_final − R_previous‖²_F`.
    pub convergence_residual: f64,
    pub trace: Vec<IterationRecord>,
    pub timing: PhaseTimes,
}

/// JSON form of a [`RegistrationResult`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub pose: PoseRecord,
    pub converged: bool,
    pub iterations_used: usize,
    pub convergence_residual: f64,
    /// 0-based model index per observation.
    pub assignments: Vec<usize>,
    pub weights: Vec<f64>,
    pub valid: Vec<bool>,
    /// Row-major 2×2 covariance per model point.
    pub covariances: Vec<[f64; 4]>,
    /// `α_ji`, one row per observation.
    pub posteriors: Vec<Vec<f64>>,
    pub trace: Vec<IterationRecord>,
    pub timing: PhaseTimes,
}

impl From<&RegistrationResult> for ResultRecord {
    fn from(r: &RegistrationResult) -> Self {
        Self {
            pose: PoseRecord::from(&r.pose),
            converged: r.converged,
            iterations_used: r.iterations_used,
            convergence_residual: r.convergence_residual,
            assignments: r.assignments.clone(),
            weights: r.weights.clone(),
            valid: r.valid.clone(),
            covariances: r
                .covariances
                .iter()
                .map(|c| {
                    let m = c.matrix();
                    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
                })
                .collect(),
            posteriors: r.posteriors.to_rows(),
            trace: r.trace.clone(),
            timing: r.timing,
        }
    }
}

/// MAP assignment `z_j = argmax_i α_ji`, ties to the lowest index.
pub fn map_classify(posteriors: &PosteriorMatrix) -> Vec<usize> {
    (0..posteriors.observations()).map(|j| argmax_row(posteriors, j).0).collect()
}

pub fn check_convergence(r_new: &RotationMatrix, r_old: &RotationMatrix, tol: f64) -> bool {
    rotation_distance_sq(r_new, r_old) < tol
}

#[derive(Clone)]
struct Snapshot {
    objective: f64,
    pose: RigidTransform,
    covariances: Vec<Covariance2>,
    posteriors: PosteriorMatrix,
    weights: Vec<f64>,
    valid: Vec<bool>,
    residual: f64,
}

/// Registers `model_points` to `observations`.
pub fn register(model_points: &[Point3], observations: &[Point2], cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    if model_points.len() < 3 {
        return Err(Error::InputShape(format!("need at least 3 model points, got {}", model_points.len())));
    }
    if observations.is_empty() {
        return Err(Error::InputShape("need at least 1 observation".into()));
    }
    if model_points.iter().any(|p| !p.coords.iter().all(|v| v.is_finite()))
        || observations.iter().any(|p| !p.coords.iter().all(|v| v.is_finite()))
    {
        return Err(Error::InputShape("points must have finite coordinates".into()));
    }
    cfg.validate()?;

    let total_clock = Stopwatch::start();
    let cam = cfg.camera;
    let mut pose = cfg.initial_pose.to_transform()?;
    let mut projected = project_all(model_points, &pose, &cam)?;
    let mut covs = vec![Covariance2::isotropic(cfg.initial_covariance_scale); model_points.len()];
    let mut timing = PhaseTimes::default();
    let mut trace = Vec::new();
    let mut best: Option<Snapshot> = None;
    let mut converged = false;
    let mut last: Option<Snapshot> = None;

    for iteration in 1..=cfg.max_iterations {
        let clock = Stopwatch::start();
        let posteriors = compute_posteriors(observations, &projected, &covs, &cfg.outlier)?;
        let virt = virtual_observations(&posteriors, observations)?;
        timing.e_step += clock.elapsed_s();

        let clock = Stopwatch::start();
        let terms = ObjectiveTerms {
            posteriors: &posteriors,
            observations,
            model_points,
            covariances: &covs,
            camera: &cam,
        };
        let objective_before = pose_objective(&pose, &terms)?;
        let new_pose = match cfg.solver {
            Solver::Traversal => traversal_search(&pose, &terms, &cfg.traversal)?.pose,
            Solver::Lse => lse_cm_step(&pose, &posteriors, observations, model_points, &cam)?,
        };
        let objective = pose_objective(&new_pose, &terms)?;
        timing.pose_step += clock.elapsed_s();

        let clock = Stopwatch::start();
        let new_projected = project_all(model_points, &new_pose, &cam)?;
        let new_covs = update_covariances(&posteriors, observations, &new_projected, cfg.covariance_mode, &covs)?;
        timing.covariance_step += clock.elapsed_s();

        let log_likelihood = expected_complete_log_likelihood(
            &new_pose,
            &ObjectiveTerms { covariances: &new_covs, ..terms },
        )?;
        let rotation_change_sq = rotation_distance_sq(&new_pose.rotation, &pose.rotation);
        trace.push(IterationRecord {
            iteration,
            pose: new_pose,
            objective_before,
            objective,
            log_likelihood,
            rotation_change_sq,
            translation_change: (new_pose.translation - pose.translation).norm(),
            valid_components: virt.iter().filter(|v| v.is_valid()).count(),
        });

        let snap = Snapshot {
            objective,
            pose: new_pose,
            covariances: new_covs.clone(),
            weights: virt.iter().map(|v| v.weight).collect(),
            valid: virt.valid_mask(),
            posteriors,
            residual: rotation_change_sq,
        };
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(snap.clone());
        }
        let done = check_convergence(&new_pose.rotation, &pose.rotation, cfg.convergence_tol);
        pose = new_pose;
        projected = new_projected;
        covs = new_covs;
        last = Some(snap);
        if done {
            converged = true;
            break;
        }
    }

    let iterations_used = trace.len();
    let chosen = if converged { last } else { best };
    let snap = chosen.expect("at least one iteration runs");
    timing.total = total_clock.elapsed_s();
    Ok(RegistrationResult {
        pose: snap.pose,
        assignments: map_classify(&snap.posteriors),
        covariances: snap.covariances,
        posteriors: snap.posteriors,
        weights: snap.weights,
        valid: snap.valid,
        iterations_used,
        converged,
        convergence_residual: snap.residual,
        trace,
        timing,
    })
}
