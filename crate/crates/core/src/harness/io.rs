//! File formats: model points as `x,y,z` CSV (mm), observations as `u,v` CSV
//! (pixels), strict JSON configs, and the scene sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3};
use crate::registration::PoseRecord;
use crate::synthdata::{Scene, SceneSpec};

pub const MODEL_FILE: &str = "model.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const SCENE_FILE: &str = "scene.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ModelRow {
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ObservationRow {
    u: f64,
    v: f64,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, message: impl ToString) -> Error {
    Error::Parse { path: path.display().to_string(), message: message.to_string() }
}

/// Reads every record of a headed CSV file, checking the header exactly.
pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_csv(&text, header).map_err(|m| parse_err(path, m))
}

fn parse_csv<T: DeserializeOwned>(text: &str, header: &[&str]) -> std::result::Result<Vec<T>, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let found: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(format!("expected header `{}`, found `{}`", header.join(","), found.join(",")));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| format!("record {}: {e}", k + 1)))
        .collect()
}

/// Writes records under the header derived from `T`'s field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let text = csv_string(rows).map_err(|m| parse_err(path, m))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> std::result::Result<String, String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| e.to_string())?;
    }
    let bytes = writer.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

fn check_finite(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(parse_err(path, "coordinates must be finite"))
    }
}

pub fn read_model_points(path: &Path) -> Result<Vec<Point3>> {
    let rows: Vec<ModelRow> = read_csv(path, &["x", "y", "z"])?;
    check_finite(path, rows.iter().flat_map(|r| [r.x, r.y, r.z]))?;
    Ok(rows.into_iter().map(|r| Point3::new(r.x, r.y, r.z)).collect())
}

pub fn write_model_points(path: &Path, points: &[Point3]) -> Result<()> {
    let rows: Vec<ModelRow> = points.iter().map(|p| ModelRow { x: p.x, y: p.y, z: p.z }).collect();
    write_csv(path, &rows)
}

pub fn read_observations(path: &Path) -> Result<Vec<Point2>> {
    let rows: Vec<ObservationRow> = read_csv(path, &["u", "v"])?;
    check_finite(path, rows.iter().flat_map(|r| [r.u, r.v]))?;
    Ok(rows.into_iter().map(|r| Point2::new(r.u, r.v)).collect())
}

pub fn write_observations(path: &Path, points: &[Point2]) -> Result<()> {
    let rows: Vec<ObservationRow> = points.iter().map(|p| ObservationRow { u: p.x, v: p.y }).collect();
    write_csv(path, &rows)
}

/// Parses a JSON document into `T`; unknown keys are rejected by `T`'s schema.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// The JSON sidecar written next to a scene's CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSidecar {
    pub true_pose: PoseRecord,
    /// Model index of each observation row, 0-based.
    pub true_correspondence: Vec<usize>,
    pub spec: SceneSpec,
}

/// Paths of a scene written by [`write_scene`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePaths {
    pub model: PathBuf,
    pub observations: PathBuf,
    pub sidecar: PathBuf,
}

impl ScenePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self { model: dir.join(MODEL_FILE), observations: dir.join(OBSERVATIONS_FILE), sidecar: dir.join(SCENE_FILE) }
    }
}

pub fn write_scene(dir: &Path, scene: &Scene, spec: &SceneSpec) -> Result<ScenePaths> {
    ensure_dir(dir)?;
    let paths = ScenePaths::in_dir(dir);
    write_model_points(&paths.model, &scene.model_points)?;
    write_observations(&paths.observations, &scene.observations)?;
    let sidecar = SceneSidecar {
        true_pose: PoseRecord::from(&scene.true_pose),
        true_correspondence: scene.true_correspondence.clone(),
        spec: spec.clone(),
    };
    write_json(&paths.sidecar, &sidecar)?;
    Ok(paths)
}

pub fn read_scene(dir: &Path) -> Result<(Scene, SceneSpec)> {
    let paths = ScenePaths::in_dir(dir);
    let model_points = read_model_points(&paths.model)?;
    let observations = read_observations(&paths.observations)?;
    let sidecar: SceneSidecar = read_json(&paths.sidecar)?;
    if sidecar.true_correspondence.len() != observations.len()
        || sidecar.true_correspondence.iter().any(|&i| i >= model_points.len())
    {
        return Err(parse_err(&paths.sidecar, "true_correspondence does not match the CSV files"));
    }
    let true_pose = sidecar.true_pose.to_transform()?;
    Ok((Scene { model_points, observations, true_pose, true_correspondence: sidecar.true_correspondence }, sidecar.spec))
}
