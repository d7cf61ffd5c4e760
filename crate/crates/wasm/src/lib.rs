//! Browser bindings. Every function exchanges JSON strings so the page needs
//! no generated TypeScript types; errors surface as thrown JS `Error`s.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use ecmpr::geometry::{apply_rigid, perspective_project, Point2, Point3};
use ecmpr::registration::{PoseRecord, ResultRecord};
use ecmpr::synthdata::{generate_scene, SceneSpec};
use ecmpr::{register, RegistrationConfig};

#[derive(Serialize)]
struct SceneOut {
    model_points: Vec<[f64; 3]>,
    observations: Vec<[f64; 2]>,
    true_pose: PoseRecord,
    true_correspondence: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectIn {
    model_points: Vec<[f64; 3]>,
    pose: PoseRecord,
    #[serde(default)]
    camera: ecmpr::CameraModel,
}

fn parse<'a, T: Deserialize<'a>>(what: &str, json: &'a str) -> Result<T, JsError> {
    serde_json::from_str(json).map_err(|e| JsError::new(&format!("{what}: {e}")))
}

fn emit<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn core_err(e: ecmpr::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn points3(raw: &[[f64; 3]]) -> Vec<Point3> {
    raw.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()
}

/// Default scene specification as JSON, for seeding the page's form.
#[wasm_bindgen(js_name = defaultSceneSpec)]
pub fn default_scene_spec() -> Result<String, JsError> {
    emit(&SceneSpec::default())
}

/// Default registration config as JSON.
#[wasm_bindgen(js_name = defaultRegistrationConfig)]
pub fn default_registration_config() -> Result<String, JsError> {
    emit(&RegistrationConfig::default())
}

/// Generates a scene from a (possibly partial) scene spec JSON.
#[wasm_bindgen(js_name = generateScene)]
pub fn generate_scene_json(spec_json: &str) -> Result<String, JsError> {
    let spec: SceneSpec = parse("scene spec", spec_json)?;
    let scene = generate_scene(&spec).map_err(core_err)?;
    emit(&SceneOut {
        model_points: scene.model_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        observations: scene.observations.iter().map(|p| [p.x, p.y]).collect(),
        true_pose: PoseRecord::from(&scene.true_pose),
        true_correspondence: scene.true_correspondence,
    })
}

/// Registers `[[x,y,z],…]` model points to `[[u,v],…]` observations.
#[wasm_bindgen(js_name = registerPoints)]
pub fn register_json(model_json: &str, observations_json: &str, config_json: &str) -> Result<String, JsError> {
    let model: Vec<[f64; 3]> = parse("model points", model_json)?;
    let obs: Vec<[f64; 2]> = parse("observations", observations_json)?;
    let cfg: RegistrationConfig = parse("registration config", config_json)?;
    let obs: Vec<Point2> = obs.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let result = register(&points3(&model), &obs, &cfg).map_err(core_err)?;
    emit(&ResultRecord::from(&result))
}

/// Projects model points under a pose; points at or behind the image plane
/// come back as `null`.
#[wasm_bindgen(js_name = projectPoints)]
pub fn project_json(request_json: &str) -> Result<String, JsError> {
    let req: ProjectIn = parse("projection request", request_json)?;
    let pose = req.pose.to_transform().map_err(core_err)?;
    let out: Vec<Option<[f64; 2]>> = points3(&req.model_points)
        .iter()
        .map(|p| {
            let in_front = apply_rigid(p, &pose).z > 0.0;
            in_front.then(|| perspective_project(p, &pose, &req.camera).ok()).flatten().map(|q| [q.x, q.y])
        })
        .collect();
    emit(&out)
}
