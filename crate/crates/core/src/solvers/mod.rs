//! Conditional-maximisation pose solvers.

mod lse;
mod traversal;

use serde::{Deserialize, Serialize};

pub use lse::{
    harden_correspondences, lse_cm_step, umeyama_fit, umeyama_fit_detailed, Correspondence, CorrespondenceSet,
    UmeyamaFit, MIN_CORRESPONDENCES,
};
pub(crate) use lse::argmax_row;
pub use traversal::{traversal_cm_step, traversal_search, TraversalConfig, TraversalOutcome};

/// Which CM-step updates the pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Traversal,
    Lse,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Traversal => "traversal",
            Solver::Lse => "lse",
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "traversal" => Ok(Solver::Traversal),
            "lse" | "least-squares" => Ok(Solver::Lse),
            other => Err(format!("unknown solver `{other}` (expected traversal or lse)")),
        }
    }
}
