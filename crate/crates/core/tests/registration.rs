//! End-to-end registration on generated scenes.

use ecmpr::ecm::{CovarianceMode, WEIGHT_EPSILON};
use ecmpr::geometry::rotation_distance_sq;
use ecmpr::harness::compute_metrics;
use ecmpr::registration::{map_classify, PoseRecord, ResultRecord};
use ecmpr::synthdata::{generate_scene, Scene, SceneSpec};
use ecmpr::{register, Error, RegistrationConfig, Solver};

fn scene(noise_sigma: f64, seed: u64) -> Scene {
    generate_scene(&SceneSpec { noise_sigma, seed, ..SceneSpec::default() }).unwrap()
}

fn from_truth(scene: &Scene, solver: Solver) -> RegistrationConfig {
    RegistrationConfig { solver, initial_pose: PoseRecord::from(&scene.true_pose), ..RegistrationConfig::default() }
}

#[test]
fn noise_free_start_at_truth_stays_there() {
    for solver in [Solver::Lse, Solver::Traversal] {
        let s = scene(0.0, 3);
        let result = register(&s.model_points, &s.observations, &from_truth(&s, solver)).unwrap();
        let m = compute_metrics(&result, &s);
        assert!(result.converged, "{solver:?}");
        assert_eq!(m.correct_match_pct, 100.0, "{solver:?}");
        assert!(rotation_distance_sq(&result.pose.rotation, &s.true_pose.rotation) < 1e-6, "{solver:?}");
    }
}

#[test]
fn noisy_start_at_truth_matches_everything() {
    for seed in 0..4 {
        let s = scene(1.0, seed);
        let result = register(&s.model_points, &s.observations, &from_truth(&s, Solver::Lse)).unwrap();
        assert_eq!(compute_metrics(&result, &s).correct_match_pct, 100.0, "seed {seed}");
    }
}

#[test]
fn runs_are_deterministic() {
    let s = scene(1.0, 8);
    for solver in [Solver::Lse, Solver::Traversal] {
        let cfg = RegistrationConfig { solver, max_iterations: 4, ..RegistrationConfig::default() };
        let a = register(&s.model_points, &s.observations, &cfg).unwrap();
        let b = register(&s.model_points, &s.observations, &cfg).unwrap();
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.iterations_used, b.iterations_used);
    }
}

#[test]
fn iteration_cap_is_respected() {
    let s = scene(1.0, 1);
    let cfg = RegistrationConfig { solver: Solver::Lse, max_iterations: 1, ..RegistrationConfig::default() };
    let result = register(&s.model_points, &s.observations, &cfg).unwrap();
    assert_eq!(result.iterations_used, 1);
    assert_eq!(result.trace.len(), 1);
}

#[test]
fn outputs_are_mutually_consistent() {
    let s = generate_scene(&SceneSpec { observed_fraction: 0.5, noise_sigma: 1.0, seed: 2, ..SceneSpec::default() }).unwrap();
    for mode in [CovarianceMode::Anisotropic, CovarianceMode::Isotropic] {
        let cfg = RegistrationConfig { solver: Solver::Lse, covariance_mode: mode, ..RegistrationConfig::default() };
        let r = register(&s.model_points, &s.observations, &cfg).unwrap();
        assert_eq!(r.assignments, map_classify(&r.posteriors));
        assert_eq!(r.assignments.len(), s.observations.len());
        assert_eq!(r.covariances.len(), s.model_points.len());
        let total: f64 = r.weights.iter().sum();
        assert!((total - s.observations.len() as f64).abs() < 1e-9);
        for (w, v) in r.weights.iter().zip(&r.valid) {
            assert_eq!(*v, *w >= WEIGHT_EPSILON);
        }
        assert!(r.pose.rotation.matrix().determinant() > 0.0);
        assert!(r.timing.total >= 0.0);
    }
}

#[test]
fn result_record_has_the_exchange_layout() {
    let s = scene(0.0, 0);
    let r = register(&s.model_points, &s.observations, &from_truth(&s, Solver::Lse)).unwrap();
    let json = serde_json::to_value(ResultRecord::from(&r)).unwrap();
    assert_eq!(json["pose"]["rotation"].as_array().unwrap().len(), 9);
    assert_eq!(json["pose"]["translation"].as_array().unwrap().len(), 3);
    assert_eq!(json["pose"]["euler_deg"].as_array().unwrap().len(), 3);
    assert_eq!(json["assignments"].as_array().unwrap().len(), s.observations.len());
    let back: PoseRecord = serde_json::from_value(json["pose"].clone()).unwrap();
    let pose = back.to_transform().unwrap();
    assert!((pose.rotation.matrix() - r.pose.rotation.matrix()).norm() < 1e-12);
}

#[test]
fn bad_inputs_are_rejected() {
    let s = scene(0.0, 0);
    let cfg = RegistrationConfig::default();
    assert!(matches!(register(&s.model_points[..2], &s.observations, &cfg), Err(Error::InputShape(_))));
    assert!(matches!(register(&s.model_points, &[], &cfg), Err(Error::InputShape(_))));
    let bad = RegistrationConfig { max_iterations: 0, ..RegistrationConfig::default() };
    assert!(matches!(register(&s.model_points, &s.observations, &bad), Err(Error::InvalidConfig(_))));
}
