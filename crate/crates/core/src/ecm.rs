//! E-step and covariance M-step of ECM point registration.
//!
//! Each transformed model point `μ'(X_i)` is the centre of a 2D Gaussian with
//! covariance `Σ_i`; observations `Y_j` are softly assigned to components via
//! posterior responsibilities `α_ji`. Posteriors are evaluated in the log
//! domain with a per-row max shift, so squared distances of several thousand
//! pixels² over tiny covariances neither overflow nor collapse to 0/0.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_in_front, CameraModel, Point2, Point3, RigidTransform};

/// λ_i below this marks a model point with no supporting observation.
pub const WEIGHT_EPSILON: f64 = 1e-12;
/// Eigenvalue floor applied to every estimated covariance, pixels².
pub const COV_FLOOR: f64 = 1e-6;
/// Returned by [`pose_objective`] for poses that put a model point behind the camera.
pub const OBJECTIVE_INFEASIBLE: f64 = f64::INFINITY;

/// Symmetric positive definite 2×2 covariance with cached inverse and log-determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2 {
    matrix: Matrix2<f64>,
    inverse: Matrix2<f64>,
    log_det: f64,
}

impl Covariance2 {
    /// Validates symmetry and positive definiteness.
    pub fn new(matrix: Matrix2<f64>) -> Result<Self> {
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularCovariance("non-finite entry".into()));
        }
        let asym = (matrix[(0, 1)] - matrix[(1, 0)]).abs();
        if asym > 1e-12 * matrix.abs().max().max(1.0) {
            return Err(Error::SingularCovariance(format!("asymmetry {asym:.2e}")));
        }
        let sym = (matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo <= 0.0 || lo < hi * 1e-14 {
            return Err(Error::SingularCovariance(format!("eigenvalues [{lo:.3e}, {hi:.3e}]")));
        }
        Ok(Self::from_spd(sym))
    }

    fn from_spd(matrix: Matrix2<f64>) -> Self {
        let det = matrix.determinant();
        let inverse = Matrix2::new(matrix[(1, 1)], -matrix[(0, 1)], -matrix[(1, 0)], matrix[(0, 0)]) / det;
        Self { matrix, inverse, log_det: det.ln() }
    }

    pub fn identity() -> Self {
        Self::isotropic(1.0)
    }

    /// `variance·I`, clamped at [`COV_FLOOR`].
    pub fn isotropic(variance: f64) -> Self {
        let v = if variance.is_finite() { variance.max(COV_FLOOR) } else { COV_FLOOR };
        Self::from_spd(Matrix2::identity() * v)
    }

    /// Symmetrises `matrix` and clamps its eigenvalues at [`COV_FLOOR`].
    pub fn floored(matrix: Matrix2<f64>) -> Self {
        let sym = (matrix + matrix.transpose()) * 0.5;
        if !sym.iter().all(|v| v.is_finite()) {
            return Self::isotropic(COV_FLOOR);
        }
        let eig = SymmetricEigen::new(sym);
        // Reassembling Q·Λ·Qᵀ perturbs eigenvalues by a few ulps of the
        // largest one; lifting the clamp by that much keeps the result at or
        // above the floor after the round trip.
        let slack = 8.0 * f64::EPSILON * eig.eigenvalues.amax();
        let clamped = eig.eigenvalues.map(|l| l.max(COV_FLOOR + slack));
        let q = eig.eigenvectors;
        let m = q * Matrix2::from_diagonal(&clamped) * q.transpose();
        Self::from_spd((m + m.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix2<f64> {
        &self.inverse
    }

    /// `ln |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix).eigenvalues.min()
    }

    #[inline]
    pub fn quadratic_form(&self, r: &Vector2<f64>) -> f64 {
        let m = &self.inverse;
        r.x * (m[(0, 0)] * r.x + m[(0, 1)] * r.y) + r.y * (m[(1, 0)] * r.x + m[(1, 1)] * r.y)
    }
}

/// Uniform outlier component `Φ = 1.5·√(2π)·r⁻³`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierModel {
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

impl OutlierModel {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn with_radius(r: f64) -> Self {
        Self { enabled: true, r: Some(r) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled {
            match self.r {
                Some(r) if r > 0.0 && r.is_finite() => {}
                _ => {
                    return Err(Error::InvalidConfig(
                        "outlier.r must be a positive number when outlier.enabled is true".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// The outlier density term, 0 when disabled.
    pub fn phi(&self) -> f64 {
        match (self.enabled, self.r) {
            (true, Some(r)) => 1.5 * (2.0 * std::f64::consts::PI).sqrt() * r.powi(-3),
            _ => 0.0,
        }
    }
}

/// How [`update_covariances`] parameterises the mixture covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// One shared `σ²I` for every component.
    Isotropic,
    /// A full 2×2 covariance per model point.
    #[default]
    Anisotropic,
}

/// Responsibilities `α_ji`: row `j` is an observation, column `i` a model point.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix(DMatrix<f64>);

impl PosteriorMatrix {
    /// Wraps a matrix, checking entries lie in `[0, 1]`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
            return Err(Error::InputShape("posterior entries must lie in [0, 1]".into()));
        }
        Ok(Self(m))
    }

    pub fn observations(&self) -> usize {
        self.0.nrows()
    }

    pub fn components(&self) -> usize {
        self.0.ncols()
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.0[(j, i)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.0.row_iter().map(|r| neumaier_sum(r.iter().copied())).collect()
    }

    /// `λ_i = Σ_j α_ji`.
    pub fn column_sums(&self) -> Vec<f64> {
        self.0.column_iter().map(|c| neumaier_sum(c.iter().copied())).collect()
    }

    /// Row-major nested vector, for serialisation.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Compensated summation.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_shapes(observations: &[Point2], projected: &[Point2], covs: &[Covariance2]) -> Result<()> {
    if observations.is_empty() || projected.is_empty() {
        return Err(Error::InputShape("observations and model points must be non-empty".into()));
    }
    if projected.len() != covs.len() {
        return Err(Error::InputShape(format!(
            "{} projected points but {} covariances",
            projected.len(),
            covs.len()
        )));
    }
    Ok(())
}

/// Evaluates the posterior responsibilities of every observation.
pub fn compute_posteriors(
    observations: &[Point2],
    projected: &[Point2],
    covs: &[Covariance2],
    outlier: &OutlierModel,
) -> Result<PosteriorMatrix> {
    check_shapes(observations, projected, covs)?;
    outlier.validate()?;
    let (m, n) = (observations.len(), projected.len());
    let log_phi = match outlier.phi() {
        p if p > 0.0 => Some(p.ln()),
        _ => None,
    };
    let mut out = DMatrix::zeros(m, n);
    let mut log_w = vec![0.0; n];
    for (j, y) in observations.iter().enumerate() {
        for (i, (mu, cov)) in projected.iter().zip(covs).enumerate() {
            log_w[i] = -0.5 * cov.log_det() - 0.5 * cov.quadratic_form(&(y - mu));
        }
        let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let terms = log_w.iter().map(|l| (l - shift).exp());
        let mut denom = neumaier_sum(terms);
        if let Some(lp) = log_phi {
            denom += (lp - shift).exp();
        }
        for i in 0..n {
            out[(j, i)] = (log_w[i] - shift).exp() / denom;
        }
    }
    Ok(PosteriorMatrix(out))
}

/// One virtual observation `W_i` with weight `λ_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualObservation {
    pub weight: f64,
    /// `None` when `weight < WEIGHT_EPSILON`.
    pub point: Option<Point2>,
}

impl VirtualObservation {
    pub fn is_valid(&self) -> bool {
        self.point.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualObservations(pub Vec<VirtualObservation>);

impl VirtualObservations {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VirtualObservation> {
        self.0.iter()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.0.iter().map(VirtualObservation::is_valid).collect()
    }

    pub fn total_weight(&self) -> f64 {
        neumaier_sum(self.0.iter().map(|v| v.weight))
    }
}

/// Posterior-weighted mean observation per model point. Points whose total
/// responsibility falls under [`WEIGHT_EPSILON`] are flagged invalid instead
/// of dividing by (near) zero.
pub fn virtual_observations(post: &PosteriorMatrix, observations: &[Point2]) -> Result<VirtualObservations> {
    if post.observations() != observations.len() {
        return Err(Error::InputShape(format!(
            "posterior has {} rows but {} observations were given",
            post.observations(),
            observations.len()
        )));
    }
    let out = (0..post.components())
        .map(|i| {
            let weight = neumaier_sum((0..observations.len()).map(|j| post.get(j, i)));
            let point = (weight >= WEIGHT_EPSILON).then(|| {
                let u = neumaier_sum(observations.iter().enumerate().map(|(j, y)| post.get(j, i) * y.x));
                let v = neumaier_sum(observations.iter().enumerate().map(|(j, y)| post.get(j, i) * y.y));
                Point2::new(u / weight, v / weight)
            });
            VirtualObservation { weight, point }
        })
        .collect();
    Ok(VirtualObservations(out))
}

/// Re-estimates the mixture covariances from the current posteriors and the
/// projected model points of the new pose. Components with
/// `λ_i < WEIGHT_EPSILON` keep their entry from `previous`.
pub fn update_covariances(
    post: &PosteriorMatrix,
    observations: &[Point2],
    projected: &[Point2],
    mode: CovarianceMode,
    previous: &[Covariance2],
) -> Result<Vec<Covariance2>> {
    check_shapes(observations, projected, previous)?;
    if post.observations() != observations.len() || post.components() != projected.len() {
        return Err(Error::InputShape("posterior dimensions do not match the point sets".into()));
    }
    let weights = post.column_sums();
    match mode {
        CovarianceMode::Anisotropic => Ok(projected
            .iter()
            .enumerate()
            .map(|(i, mu)| {
                if weights[i] < WEIGHT_EPSILON {
                    return previous[i];
                }
                let mut s = Matrix2::zeros();
                for (j, y) in observations.iter().enumerate() {
                    let r = y - mu;
                    s += post.get(j, i) * (r * r.transpose());
                }
                Covariance2::floored(s / weights[i])
            })
            .collect()),
        CovarianceMode::Isotropic => {
            let mut num = Vec::with_capacity(observations.len() * projected.len());
            for (j, y) in observations.iter().enumerate() {
                for (i, mu) in projected.iter().enumerate() {
                    num.push(post.get(j, i) * (y - mu).norm_squared());
                }
            }
            let mass = neumaier_sum(weights.iter().copied());
            let shared = if mass > 0.0 {
                Covariance2::isotropic(neumaier_sum(num) / (2.0 * mass))
            } else {
                Covariance2::isotropic(COV_FLOOR)
            };
            Ok((0..projected.len())
                .map(|i| if weights[i] < WEIGHT_EPSILON { previous[i] } else { shared })
                .collect())
        }
    }
}

/// Everything the pose objective needs besides the pose itself.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms<'a> {
    pub posteriors: &'a PosteriorMatrix,
    pub observations: &'a [Point2],
    pub model_points: &'a [Point3],
    pub covariances: &'a [Covariance2],
    pub camera: &'a CameraModel,
}

/// Evaluates `½ Σ_j Σ_i α_ji ‖Y_j − μ'(X_i; Θ)‖²_{Σ_i}` into `scratch`-backed
/// projections; returns [`OBJECTIVE_INFEASIBLE`] when a model point falls
/// behind the camera.
pub fn pose_objective_with(terms: &ObjectiveTerms<'_>, pose: &RigidTransform, scratch: &mut Vec<Point2>) -> f64 {
    if project_in_front(terms.model_points, pose, terms.camera, scratch).is_none() {
        return OBJECTIVE_INFEASIBLE;
    }
    let mut total = 0.0;
    for (j, y) in terms.observations.iter().enumerate() {
        for (i, (mu, cov)) in scratch.iter().zip(terms.covariances).enumerate() {
            let a = terms.posteriors.get(j, i);
            if a > 0.0 {
                total += a * cov.quadratic_form(&(y - mu));
            }
        }
    }
    0.5 * total
}

pub fn pose_objective(pose: &RigidTransform, terms: &ObjectiveTerms<'_>) -> Result<f64> {
    validate_terms(terms)?;
    Ok(pose_objective_with(terms, pose, &mut Vec::with_capacity(terms.model_points.len())))
}

/// `−½ Σ_j Σ_i α_ji (‖Y_j − μ'(X_i; Θ)‖²_{Σ_i} + ln|Σ_i|)`; `−∞` for infeasible poses.
pub fn expected_complete_log_likelihood(pose: &RigidTransform, terms: &ObjectiveTerms<'_>) -> Result<f64> {
    validate_terms(terms)?;
    let mut projected = Vec::with_capacity(terms.model_points.len());
    if project_in_front(terms.model_points, pose, terms.camera, &mut projected).is_none() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut total = 0.0;
    for (j, y) in terms.observations.iter().enumerate() {
        for (i, (mu, cov)) in projected.iter().zip(terms.covariances).enumerate() {
            let a = terms.posteriors.get(j, i);
            if a > 0.0 {
                total += a * (cov.quadratic_form(&(y - mu)) + cov.log_det());
            }
        }
    }
    Ok(-0.5 * total)
}

pub(crate) fn validate_terms(terms: &ObjectiveTerms<'_>) -> Result<()> {
    let (m, n) = (terms.observations.len(), terms.model_points.len());
    if m == 0 || n == 0 {
        return Err(Error::InputShape("observations and model points must be non-empty".into()));
    }
    if terms.covariances.len() != n {
        return Err(Error::InputShape(format!("{} model points but {} covariances", n, terms.covariances.len())));
    }
    if terms.posteriors.observations() != m || terms.posteriors.components() != n {
        return Err(Error::InputShape("posterior dimensions do not match the point sets".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
        v.iter().map(|&(u, w)| Point2::new(u, w)).collect()
    }

    #[test]
    fn single_component_takes_all_mass() {
        let p = compute_posteriors(&pts(&[(40.0, -3.0)]), &pts(&[(0.0, 0.0)]), &[Covariance2::identity()], &OutlierModel::disabled())
            .unwrap();
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn equidistant_observation_splits_evenly() {
        let covs = [Covariance2::isotropic(2.0); 2];
        let p = compute_posteriors(&pts(&[(0.0, 1.0)]), &pts(&[(-1.0, 1.0), (1.0, 1.0)]), &covs, &OutlierModel::disabled())
            .unwrap();
        assert_relative_eq!(p.get(0, 0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.get(0, 1), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn outlier_term_example() {
        let p = compute_posteriors(&pts(&[(0.0, 0.0)]), &pts(&[(0.0, 0.0)]), &[Covariance2::identity()], &OutlierModel::with_radius(1.0))
            .unwrap();
        // 1.5·√(2π) = 3.759942..., so α = 1 / 4.759942...
        assert_relative_eq!(p.get(0, 0), 0.210086, epsilon = 1e-6);
        assert!(p.row_sums()[0] < 1.0);
    }

    #[test]
    fn posteriors_survive_huge_exponents() {
        let covs = [Covariance2::isotropic(COV_FLOOR); 2];
        let p = compute_posteriors(&pts(&[(500.0, 0.0)]), &pts(&[(0.0, 0.0), (10.0, 0.0)]), &covs, &OutlierModel::disabled())
            .unwrap();
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(0, 0), 0.0);
    }

    #[test]
    fn smaller_covariance_wins_at_zero_distance() {
        // With the |Σ|^{-1/2} normalisation a tighter component is more likely
        // at its own centre.
        let covs = [Covariance2::isotropic(1.0), Covariance2::isotropic(4.0)];
        let p = compute_posteriors(&pts(&[(0.0, 0.0)]), &pts(&[(0.0, 0.0), (0.0, 0.0)]), &covs, &OutlierModel::disabled())
            .unwrap();
        assert_relative_eq!(p.get(0, 0), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn outlier_config_requires_radius() {
        let bad = OutlierModel { enabled: true, r: None };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<OutlierModel>(r#"{"enabled": false, "radius": 1}"#).is_err());
    }

    #[test]
    fn virtual_observation_examples() {
        let obs = pts(&[(0.0, 0.0), (2.0, 2.0)]);
        let uniform = PosteriorMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        let v = virtual_observations(&uniform, &obs).unwrap();
        assert_eq!(v.0[0].point, Some(Point2::new(1.0, 1.0)));
        assert_eq!(v.0[0].weight, 1.0);

        let gap = PosteriorMatrix::from_matrix(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        let v = virtual_observations(&gap, &obs).unwrap();
        assert_eq!(v.valid_mask(), vec![true, false, true]);
        assert_eq!(v.0[1].weight, 0.0);
        assert_eq!(v.0[2].point, Some(obs[1]));

        let id = PosteriorMatrix::from_matrix(DMatrix::identity(2, 2)).unwrap();
        let v = virtual_observations(&id, &obs).unwrap();
        assert_eq!(v.0.iter().map(|w| w.point.unwrap()).collect::<Vec<_>>(), obs);
        assert_eq!(v.total_weight(), 2.0);
    }

    #[test]
    fn covariance_update_examples() {
        let one = PosteriorMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let prev = [Covariance2::identity()];
        let c = update_covariances(&one, &pts(&[(1.0, 2.0)]), &pts(&[(0.0, 0.0)]), CovarianceMode::Anisotropic, &prev).unwrap();
        // [[1,2],[2,4]] has eigenvalues 0 and 5; the zero one is lifted to the floor.
        assert_relative_eq!(c[0].min_eigenvalue(), COV_FLOOR, max_relative = 1e-6);
        assert_relative_eq!(c[0].matrix()[(0, 1)], 2.0 + COV_FLOOR * (-2.0 / 5.0), epsilon = 1e-9);
        assert_relative_eq!(c[0].matrix().trace(), 5.0 + COV_FLOOR, epsilon = 1e-9);

        let c = update_covariances(&one, &pts(&[(3.0, 3.0)]), &pts(&[(3.0, 3.0)]), CovarianceMode::Anisotropic, &prev).unwrap();
        assert_relative_eq!(*c[0].matrix(), Matrix2::identity() * COV_FLOOR, epsilon = 1e-18);

        let half = PosteriorMatrix::from_matrix(DMatrix::from_element(2, 1, 0.5)).unwrap();
        let c = update_covariances(&half, &pts(&[(1.0, 0.0), (-1.0, 0.0)]), &pts(&[(0.0, 0.0)]), CovarianceMode::Anisotropic, &prev)
            .unwrap();
        assert_relative_eq!(*c[0].matrix(), Matrix2::new(1.0, 0.0, 0.0, COV_FLOOR), epsilon = 1e-12);
    }

    #[test]
    fn isotropic_update_shares_one_variance() {
        let post = PosteriorMatrix::from_matrix(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        let prev = [Covariance2::isotropic(7.0); 3];
        let c = update_covariances(&post, &pts(&[(3.0, 4.0), (0.0, 1.0)]), &pts(&[(0.0, 0.0); 3]), CovarianceMode::Isotropic, &prev)
            .unwrap();
        // (25 + 1) / (2·2)
        assert_eq!(*c[0].matrix(), Matrix2::identity() * 6.5);
        assert_eq!(c[0], c[1]);
        assert_eq!(c[2], prev[2], "unsupported component keeps its covariance");
    }

    #[test]
    fn covariance_constructor_rejects_non_spd() {
        assert!(Covariance2::new(Matrix2::new(1.0, 0.0, 0.0, 0.0)).is_err());
        assert!(Covariance2::new(Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(Covariance2::new(Matrix2::new(1.0, 0.5, 0.0, 1.0)).is_err());
        let c = Covariance2::new(Matrix2::new(2.0, 0.5, 0.5, 1.0)).unwrap();
        assert_relative_eq!(c.matrix() * c.inverse(), Matrix2::identity(), epsilon = 1e-14);
        assert_relative_eq!(c.log_det(), 1.75f64.ln(), epsilon = 1e-14);
    }

    fn unit_scene() -> (Vec<Point3>, CameraModel) {
        // f·s = 1 so image coordinates are x/z, y/z.
        (vec![Point3::new(0.0, 0.0, 1.0)], CameraModel::new(1.0, 1.0).unwrap())
    }

    #[test]
    fn objective_examples() {
        let (model, cam) = unit_scene();
        let post = PosteriorMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let covs = [Covariance2::identity()];
        let obs = pts(&[(1.0, 2.0)]);
        let terms = ObjectiveTerms { posteriors: &post, observations: &obs, model_points: &model, covariances: &covs, camera: &cam };
        assert_eq!(pose_objective(&RigidTransform::identity(), &terms).unwrap(), 2.5);
        assert_eq!(expected_complete_log_likelihood(&RigidTransform::identity(), &terms).unwrap(), -2.5);

        let on_target = RigidTransform::new(nalgebra::Rotation3::identity(), Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(pose_objective(&on_target, &terms).unwrap(), 0.0);

        let behind = RigidTransform::new(nalgebra::Rotation3::identity(), Vector3::new(0.0, 0.0, -2.0));
        assert_eq!(pose_objective(&behind, &terms).unwrap(), OBJECTIVE_INFEASIBLE);
        assert_eq!(expected_complete_log_likelihood(&behind, &terms).unwrap(), f64::NEG_INFINITY);

        let e2 = std::f64::consts::E.powi(2);
        let covs = [Covariance2::isotropic(e2)];
        let obs = pts(&[(0.0, 0.0)]);
        let terms = ObjectiveTerms { covariances: &covs, observations: &obs, ..terms };
        assert_relative_eq!(expected_complete_log_likelihood(&RigidTransform::identity(), &terms).unwrap(), -2.0, epsilon = 1e-14);
    }

    #[test]
    fn objective_rejects_mismatched_shapes() {
        let (model, cam) = unit_scene();
        let post = PosteriorMatrix::from_matrix(DMatrix::from_element(2, 1, 0.5)).unwrap();
        let obs = pts(&[(0.0, 0.0)]);
        let covs = [Covariance2::identity()];
        let terms = ObjectiveTerms { posteriors: &post, observations: &obs, model_points: &model, covariances: &covs, camera: &cam };
        assert!(matches!(pose_objective(&RigidTransform::identity(), &terms), Err(Error::InputShape(_))));
    }

    fn point2() -> impl Strategy<Value = Point2> {
        (-200.0..200.0f64, -200.0..200.0f64).prop_map(|(u, v)| Point2::new(u, v))
    }

    fn spd() -> impl Strategy<Value = Covariance2> {
        (0.05..50.0f64, 0.05..50.0f64, -1.0..1.0f64).prop_map(|(a, b, rho)| {
            let off = 0.95 * rho * (a * b).sqrt();
            Covariance2::new(Matrix2::new(a, off, off, b)).unwrap()
        })
    }

    fn mixture(max_m: usize, max_n: usize) -> impl Strategy<Value = (Vec<Point2>, Vec<Point2>, Vec<Covariance2>)> {
        (1..=max_m, 1..=max_n).prop_flat_map(|(m, n)| {
            (prop::collection::vec(point2(), m), prop::collection::vec(point2(), n), prop::collection::vec(spd(), n))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn rows_and_columns_normalise((obs, proj, covs) in mixture(50, 50)) {
            let p = compute_posteriors(&obs, &proj, &covs, &OutlierModel::disabled()).unwrap();
            for s in p.row_sums() {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let v = virtual_observations(&p, &obs).unwrap();
            prop_assert!((v.total_weight() - obs.len() as f64).abs() < 1e-9);
            for w in v.iter().filter(|w| w.is_valid()) {
                prop_assert!(w.weight >= WEIGHT_EPSILON && w.point.unwrap().coords.iter().all(|c| c.is_finite()));
            }
        }

        #[test]
        fn outlier_rows_stay_below_one((obs, proj, covs) in mixture(10, 10), r in 0.01..10.0f64) {
            let p = compute_posteriors(&obs, &proj, &covs, &OutlierModel::with_radius(r)).unwrap();
            for s in p.row_sums() {
                prop_assert!(s <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn common_distance_offset_leaves_posteriors_unchanged(
            (obs, proj, _) in mixture(8, 8),
            var in 0.5..20.0f64,
            shift in 1.0..50.0f64,
        ) {
            // Lifting every 2D point into a third coordinate that is shared by
            // all components but differs per observation adds the same
            // squared distance to every term of a row.
            let covs = vec![Covariance2::isotropic(var); proj.len()];
            let base = compute_posteriors(&obs, &proj, &covs, &OutlierModel::disabled()).unwrap();
            let shifted: Vec<f64> = obs
                .iter()
                .enumerate()
                .map(|(j, y)| {
                    let mut row: Vec<f64> = proj.iter().map(|mu| (y - mu).norm_squared() / var + shift * (j + 1) as f64).collect();
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, |a, b| a.max(-0.5 * b));
                    row.iter_mut().for_each(|d| *d = (-0.5 * *d - mx).exp());
                    let total: f64 = row.iter().sum();
                    row.iter().map(|w| w / total).collect::<Vec<_>>()
                })
                .flatten()
                .collect();
            for (a, b) in base.as_matrix().transpose().iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn covariance_updates_are_spd_above_floor((obs, proj, covs) in mixture(12, 12), iso in any::<bool>()) {
            let p = compute_posteriors(&obs, &proj, &covs, &OutlierModel::disabled()).unwrap();
            let mode = if iso { CovarianceMode::Isotropic } else { CovarianceMode::Anisotropic };
            for c in update_covariances(&p, &obs, &proj, mode, &covs).unwrap() {
                let m = c.matrix();
                prop_assert!((m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * m.abs().max());
                prop_assert!(c.min_eigenvalue() >= COV_FLOOR * (1.0 - 1e-9));
            }
        }

        #[test]
        fn covariance_update_maximises_expected_log_likelihood(
            model in prop::collection::vec((-300.0..300.0f64, -300.0..300.0f64, 1500.0..2500.0f64), 3..6),
            obs in prop::collection::vec(point2(), 3..6),
            perturb in prop::collection::vec((-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64), 10),
        ) {
            let model: Vec<Point3> = model.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
            let cam = CameraModel::default();
            let pose = RigidTransform::identity();
            let proj = project_all_ok(&model, &pose, &cam);
            let start = vec![Covariance2::isotropic(400.0); model.len()];
            let post = compute_posteriors(&obs, &proj, &start, &OutlierModel::disabled()).unwrap();
            let fitted = update_covariances(&post, &obs, &proj, CovarianceMode::Anisotropic, &start).unwrap();
            let terms = ObjectiveTerms { posteriors: &post, observations: &obs, model_points: &model, covariances: &fitted, camera: &cam };
            let best = expected_complete_log_likelihood(&pose, &terms).unwrap();
            for &(a, b, c) in &perturb {
                let other: Vec<Covariance2> = fitted
                    .iter()
                    .map(|s| {
                        let d = Matrix2::new(a, c, c, b) * s.matrix().norm();
                        Covariance2::new(s.matrix() + d * 0.5).unwrap_or(*s)
                    })
                    .collect();
                let ll = expected_complete_log_likelihood(&pose, &ObjectiveTerms { covariances: &other, ..terms }).unwrap();
                prop_assert!(best >= ll - 1e-9 * best.abs().max(1.0));
            }
        }

        #[test]
        fn objective_matches_double_loop(
            model in prop::collection::vec((-300.0..300.0f64, -300.0..300.0f64, 1500.0..2500.0f64), 1..=5),
            obs in prop::collection::vec(point2(), 1..=5),
            raw in prop::collection::vec(0.0..1.0f64, 25),
        ) {
            let model: Vec<Point3> = model.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
            let (m, n) = (obs.len(), model.len());
            let mut a = DMatrix::from_fn(m, n, |j, i| raw[j * 5 + i] + 1e-3);
            for mut row in a.row_iter_mut() {
                let s: f64 = row.sum();
                row /= s;
            }
            let post = PosteriorMatrix::from_matrix(a).unwrap();
            let cam = CameraModel::default();
            let covs = vec![Covariance2::identity(); n];
            let pose = RigidTransform::from_euler(crate::geometry::EulerAngles::new(0.1, -0.2, 0.3), Vector3::new(10.0, -20.0, 30.0));
            let terms = ObjectiveTerms { posteriors: &post, observations: &obs, model_points: &model, covariances: &covs, camera: &cam };
            let j = pose_objective(&pose, &terms).unwrap();
            let mut oracle = 0.0;
            for jj in 0..m {
                for i in 0..n {
                    let c = pose.rotation * model[i].coords + pose.translation;
                    let (u, v) = (177.8 * c.x / c.z, 177.8 * c.y / c.z);
                    oracle += post.get(jj, i) * ((obs[jj].x - u).powi(2) + (obs[jj].y - v).powi(2));
                }
            }
            prop_assert!((j - 0.5 * oracle).abs() <= 1e-9 * oracle.max(1.0));
        }
    }

    fn project_all_ok(model: &[Point3], pose: &RigidTransform, cam: &CameraModel) -> Vec<Point2> {
        crate::geometry::project_all(model, pose, cam).unwrap()
    }
}
