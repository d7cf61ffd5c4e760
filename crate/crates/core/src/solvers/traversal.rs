//! Traversal CM-step: cyclic per-coordinate grid search over the three Euler
//! angles (translation held fixed) and then the three translation components
//! (rotation held fixed), refined coarse-to-fine around the incumbent.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ecm::{pose_objective_with, validate_terms, ObjectiveTerms};
use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, Point2, RigidTransform};

/// Grid layout of the traversal search. Angles are radians here and degrees
/// in serialised form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TraversalConfigDegrees", into = "TraversalConfigDegrees")]
pub struct TraversalConfig {
    pub angle_range: [f64; 2],
    pub angle_coarse_step: f64,
    pub translation_range: [f64; 2],
    pub translation_coarse_step: f64,
    pub refine_levels: usize,
    pub refine_shrink: f64,
    /// Upper bound on angle→translation alternations; the search stops early
    /// once a full cycle leaves every coordinate unchanged.
    pub cycles: usize,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self {
            angle_range: [0.0, TAU],
            angle_coarse_step: 1f64.to_radians(),
            translation_range: [-1000.0, 1000.0],
            translation_coarse_step: 20.0,
            refine_levels: 3,
            refine_shrink: 0.1,
            cycles: 2,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TraversalConfigDegrees {
    angle_range: [f64; 2],
    angle_coarse_step: f64,
    translation_range: [f64; 2],
    translation_coarse_step: f64,
    refine_levels: usize,
    refine_shrink: f64,
    cycles: usize,
}

impl Default for TraversalConfigDegrees {
    fn default() -> Self {
        TraversalConfig::default().into()
    }
}

impl From<TraversalConfigDegrees> for TraversalConfig {
    fn from(d: TraversalConfigDegrees) -> Self {
        Self {
            angle_range: [d.angle_range[0].to_radians(), d.angle_range[1].to_radians()],
            angle_coarse_step: d.angle_coarse_step.to_radians(),
            translation_range: d.translation_range,
            translation_coarse_step: d.translation_coarse_step,
            refine_levels: d.refine_levels,
            refine_shrink: d.refine_shrink,
            cycles: d.cycles,
        }
    }
}

impl From<TraversalConfig> for TraversalConfigDegrees {
    fn from(c: TraversalConfig) -> Self {
        Self {
            angle_range: [c.angle_range[0].to_degrees(), c.angle_range[1].to_degrees()],
            angle_coarse_step: c.angle_coarse_step.to_degrees(),
            translation_range: c.translation_range,
            translation_coarse_step: c.translation_coarse_step,
            refine_levels: c.refine_levels,
            refine_shrink: c.refine_shrink,
            cycles: c.cycles,
        }
    }
}

impl TraversalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("traversal: {msg}")));
        if !(self.angle_coarse_step > 0.0 && self.translation_coarse_step > 0.0) {
            return bad("steps must be > 0");
        }
        if !(self.angle_range[1] >= self.angle_range[0] && self.translation_range[1] >= self.translation_range[0]) {
            return bad("ranges must be ordered [lo, hi]");
        }
        if !(self.refine_shrink > 0.0 && self.refine_shrink < 1.0) {
            return bad("refine_shrink must lie in (0, 1)");
        }
        if self.cycles == 0 {
            return bad("cycles must be >= 1");
        }
        Ok(())
    }

    /// Values of the coarse angle grid. A range spanning a full turn drops
    /// its duplicate endpoint.
    pub fn angle_grid(&self) -> Vec<f64> {
        let mut g = linear_grid(self.angle_range, self.angle_coarse_step);
        let [lo, hi] = self.angle_range;
        if g.len() > 1 && hi - lo >= TAU - 1e-9 {
            if let Some(&last) = g.last() {
                if (last - lo - TAU).abs() < 1e-9 {
                    g.pop();
                }
            }
        }
        g
    }

    pub fn translation_grid(&self) -> Vec<f64> {
        linear_grid(self.translation_range, self.translation_coarse_step)
    }
}

fn linear_grid([lo, hi]: [f64; 2], step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|k| lo + k as f64 * step).collect()
}

/// Pose parameter vector `[rx, ry, rz, tx, ty, tz]`.
type Params = [f64; 6];

fn params_of(pose: &RigidTransform) -> Params {
    let e = pose.euler();
    let t = pose.translation;
    [e.rx, e.ry, e.rz, t.x, t.y, t.z]
}

fn pose_of(p: &Params) -> RigidTransform {
    RigidTransform::from_euler(EulerAngles::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5]))
}

struct Search<'a> {
    terms: &'a ObjectiveTerms<'a>,
    scratch: Vec<Point2>,
    evaluations: usize,
}

impl Search<'_> {
    fn eval(&mut self, p: &Params) -> f64 {
        self.evaluations += 1;
        pose_objective_with(self.terms, &pose_of(p), &mut self.scratch)
    }

    /// Sets coordinate `axis` to the best of `candidates`. The incumbent is
    /// evaluated before the sweep so ties keep it; among candidates the
    /// lowest grid index wins.
    fn sweep(&mut self, params: &mut Params, best: &mut f64, axis: usize, candidates: impl Iterator<Item = f64>) {
        let mut trial = *params;
        for v in candidates {
            trial[axis] = v;
            let j = self.eval(&trial);
            if j < *best {
                *best = j;
                *params = trial;
            }
        }
    }
}

/// Summary of one traversal CM-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalOutcome {
    pub pose: RigidTransform,
    pub objective: f64,
    pub evaluations: usize,
    pub cycles_run: usize,
}

/// Minimises the pose objective over the configured grids, starting from
/// `pose`. Never returns a pose with a larger objective than `pose`.
pub fn traversal_cm_step(
    pose: &RigidTransform,
    terms: &ObjectiveTerms<'_>,
    cfg: &TraversalConfig,
) -> Result<RigidTransform> {
    traversal_search(pose, terms, cfg).map(|o| o.pose)
}

pub fn traversal_search(
    pose: &RigidTransform,
    terms: &ObjectiveTerms<'_>,
    cfg: &TraversalConfig,
) -> Result<TraversalOutcome> {
    cfg.validate()?;
    validate_terms(terms)?;
    let mut search = Search { terms, scratch: Vec::with_capacity(terms.model_points.len()), evaluations: 0 };

    let j_in = pose_objective_with(terms, pose, &mut search.scratch);
    let mut params = params_of(pose);
    let mut best = search.eval(&params);

    let angle_grid = cfg.angle_grid();
    let translation_grid = cfg.translation_grid();
    let mut cycles_run = 0;
    for _ in 0..cfg.cycles {
        cycles_run += 1;
        let before = params;
        let mut angle_step = cfg.angle_coarse_step;
        let mut translation_step = cfg.translation_coarse_step;
        for level in 0..=cfg.refine_levels {
            if level == 0 {
                for axis in 0..3 {
                    search.sweep(&mut params, &mut best, axis, angle_grid.iter().copied());
                }
                for axis in 3..6 {
                    search.sweep(&mut params, &mut best, axis, translation_grid.iter().copied());
                }
            } else {
                let (outer_a, outer_t) = (angle_step, translation_step);
                angle_step *= cfg.refine_shrink;
                translation_step *= cfg.refine_shrink;
                for axis in 0..3 {
                    let c = params[axis];
                    search.sweep(&mut params, &mut best, axis, window(c, outer_a, angle_step));
                }
                for axis in 3..6 {
                    let c = params[axis];
                    search.sweep(&mut params, &mut best, axis, window(c, outer_t, translation_step));
                }
            }
        }
        if params == before {
            break;
        }
    }

    if !best.is_finite() && !j_in.is_finite() {
        return Err(Error::NoFeasiblePose);
    }
    // Euler round-tripping can perturb the incumbent by an ulp; fall back to
    // the exact input pose unless the search strictly improved on it.
    let (pose_out, objective) = if best < j_in { (pose_of(&params), best) } else { (*pose, j_in) };
    Ok(TraversalOutcome { pose: pose_out, objective, evaluations: search.evaluations, cycles_run })
}

/// `center + k·step` for `|k·step| ≤ half_width`, centre excluded (it is the incumbent).
fn window(center: f64, half_width: f64, step: f64) -> impl Iterator<Item = f64> {
    let k_max = (half_width / step + 1e-9).floor() as i64;
    (-k_max..=k_max).filter(|&k| k != 0).map(move |k| center + k as f64 * step)
}
