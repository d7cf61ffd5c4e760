//! Least-squares CM-step: harden the posteriors into one-to-one matches,
//! lift each matched image point onto its viewing ray at the depth of its
//! model point, and solve the weighted absolute-orientation problem in closed
//! form (SVD of the cross-covariance with a reflection guard).

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::ecm::{PosteriorMatrix, WEIGHT_EPSILON};
use crate::error::{Error, Result};
use crate::geometry::{apply_rigid, CameraModel, Point2, Point3, RigidTransform, DEPTH_EPSILON};

/// Minimum number of pairs for a pose fit.
pub const MIN_CORRESPONDENCES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub model_index: usize,
    pub observation_index: usize,
    /// `X_i`, model frame.
    pub model: Point3,
    /// Observation lifted to camera coordinates.
    pub target: Point3,
    pub weight: f64,
}

/// Weighted model/camera point pairs, at most one per model point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Unit-weight pairs, mostly for tests and tooling.
    pub fn from_points(model: &[Point3], target: &[Point3]) -> Self {
        let pairs = model
            .iter()
            .zip(target)
            .enumerate()
            .map(|(k, (x, y))| Correspondence { model_index: k, observation_index: k, model: *x, target: *y, weight: 1.0 })
            .collect();
        Self { pairs }
    }
}

/// Maximum-a-posteriori matching of observations to model points.
///
/// Each observation claims its argmax component (ties to the lowest index).
/// When several observations claim the same model point the one with the
/// highest posterior keeps it (ties to the lowest observation index) and the
/// others are dropped. Pairs are weighted by the component's total
/// responsibility `λ_i` and ordered by model index.
pub fn harden_correspondences(
    posteriors: &PosteriorMatrix,
    observations: &[Point2],
    model_points: &[Point3],
    pose: &RigidTransform,
    cam: &CameraModel,
) -> Result<CorrespondenceSet> {
    let (m, n) = (posteriors.observations(), posteriors.components());
    if m != observations.len() || n != model_points.len() {
        return Err(Error::InputShape("posterior dimensions do not match the point sets".into()));
    }
    let lambda = posteriors.column_sums();
    // claim[i] = (observation, posterior)
    let mut claim: Vec<Option<(usize, f64)>> = vec![None; n];
    for j in 0..m {
        let (i, a) = argmax_row(posteriors, j);
        match claim[i] {
            Some((_, held)) if held >= a => {}
            _ => claim[i] = Some((j, a)),
        }
    }
    let pairs: Vec<Correspondence> = claim
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|(j, _)| (i, j)))
        .filter(|&(i, _)| lambda[i] >= WEIGHT_EPSILON)
        .map(|(i, j)| {
            let depth = apply_rigid(&model_points[i], pose).z;
            Correspondence {
                model_index: i,
                observation_index: j,
                model: model_points[i],
                target: cam.back_project(&observations[j], depth),
                weight: lambda[i],
            }
        })
        .collect();
    if pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences { found: pairs.len() });
    }
    Ok(CorrespondenceSet { pairs })
}

pub(crate) fn argmax_row(posteriors: &PosteriorMatrix, j: usize) -> (usize, f64) {
    let mut best = (0, posteriors.get(j, 0));
    for i in 1..posteriors.components() {
        let a = posteriors.get(j, i);
        if a > best.1 {
            best = (i, a);
        }
    }
    best
}

/// Full output of the closed-form fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UmeyamaFit {
    pub transform: RigidTransform,
    pub singular_values: Vector3<f64>,
    /// `σ_x²`, weighted spread of the model points about their centroid.
    pub source_variance: f64,
    /// `σ_y²`, weighted spread of the targets about their centroid.
    pub target_variance: f64,
    /// Whether the reflection guard flipped the last singular direction.
    pub reflection_corrected: bool,
}

/// Weighted rigid least-squares fit `y ≈ R x + t` (unit scale).
pub fn umeyama_fit(pairs: &CorrespondenceSet) -> Result<RigidTransform> {
    umeyama_fit_detailed(pairs).map(|f| f.transform)
}

pub fn umeyama_fit_detailed(pairs: &CorrespondenceSet) -> Result<UmeyamaFit> {
    if pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences { found: pairs.len() });
    }
    if pairs.pairs.iter().any(|p| !(p.weight > 0.0 && p.weight.is_finite())) {
        return Err(Error::InputShape("correspondence weights must be positive and finite".into()));
    }
    let total: f64 = pairs.pairs.iter().map(|p| p.weight).sum();
    let mu_x = pairs.pairs.iter().fold(Vector3::zeros(), |acc, p| acc + p.weight * p.model.coords) / total;
    let mu_y = pairs.pairs.iter().fold(Vector3::zeros(), |acc, p| acc + p.weight * p.target.coords) / total;

    let mut cross = Matrix3::zeros();
    let (mut var_x, mut var_y) = (0.0, 0.0);
    for p in &pairs.pairs {
        let dx = p.model.coords - mu_x;
        let dy = p.target.coords - mu_y;
        cross += p.weight * dy * dx.transpose();
        var_x += p.weight * dx.norm_squared();
        var_y += p.weight * dy.norm_squared();
    }
    cross /= total;
    var_x /= total;
    var_y /= total;

    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::RankDeficient { rank: 0 }),
    };
    let sv = svd.singular_values;
    let tol = sv.max() * 1e-12 + f64::MIN_POSITIVE;
    let rank = sv.iter().filter(|s| **s > tol).count();
    if rank < 2 {
        return Err(Error::RankDeficient { rank });
    }
    // det(Σxy) < 0 flips the weakest direction; for rank-2 (planar) inputs
    // det(Σxy) vanishes and the orientation of U·Vᵀ decides instead.
    let det_cross = cross.determinant();
    let flip = if rank == 3 { det_cross < 0.0 } else { u.determinant() * v_t.determinant() < 0.0 };
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if flip { -1.0 } else { 1.0 }));
    let r = u * s * v_t;
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = mu_y - rotation * mu_x;
    Ok(UmeyamaFit {
        transform: RigidTransform::new(rotation, translation),
        singular_values: sv,
        source_variance: var_x,
        target_variance: var_y,
        reflection_corrected: flip,
    })
}

/// Upper bound on lift/fit rounds inside one CM-step.
const REFIT_ROUNDS: usize = 100;

/// One least-squares CM-step. The posteriors are hardened once; with those
/// matches held fixed the observations are lifted at the current depths, the
/// pose is refitted, and the two alternate until the pose stops moving, so the
/// step returns the fixed point of the lifted problem rather than a single
/// partial update.
pub fn lse_cm_step(
    pose: &RigidTransform,
    posteriors: &PosteriorMatrix,
    observations: &[Point2],
    model_points: &[Point3],
    cam: &CameraModel,
) -> Result<RigidTransform> {
    let mut pairs = harden_correspondences(posteriors, observations, model_points, pose, cam)?;
    let mut current = umeyama_fit(&pairs)?;
    for _ in 1..REFIT_ROUNDS {
        if !relift(&mut pairs, observations, &current, cam) {
            break;
        }
        let next = umeyama_fit(&pairs)?;
        let dr = (next.rotation.matrix() - current.rotation.matrix()).norm_squared();
        let dt = (next.translation - current.translation).norm();
        current = next;
        if dr < 1e-24 && dt <= 1e-12 * (1.0 + current.translation.norm()) {
            break;
        }
    }
    Ok(current)
}

/// Re-lifts every pair at its model point's depth under `pose`. Returns false
/// (leaving the pairs untouched) if any depth is not in front of the camera.
fn relift(pairs: &mut CorrespondenceSet, observations: &[Point2], pose: &RigidTransform, cam: &CameraModel) -> bool {
    let depths: Vec<f64> = pairs.pairs.iter().map(|p| apply_rigid(&p.model, pose).z).collect();
    if depths.iter().any(|&z| z <= DEPTH_EPSILON) {
        return false;
    }
    for (p, z) in pairs.pairs.iter_mut().zip(depths) {
        p.target = cam.back_project(&observations[p.observation_index], z);
    }
    true
}
