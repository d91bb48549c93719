//! Static stability oracle.
//!
//! A structure is judged by a quasi-static settle (every block drops onto
//! whatever is below it) followed by a contact-force equilibrium LP. A
//! structure is unstable if any block drops by more than half a layer
//! during the settle or if no admissible set of contact forces balances
//! gravity.

mod body;
mod contacts;
mod equilibrium;
mod settle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Stack;

pub use contacts::{detect_contacts, ContactKind, ContactPatch, Contactor, PENETRATION_FACTOR};
pub use equilibrium::{equilibrium_feasible, equilibrium_residual, LP_TOLERANCE};
pub use settle::{settle, settle_with, SettleOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("blocks {a} and {b} interpenetrate by {depth:.3} units")]
    Penetration { a: usize, b: usize, depth: f64 },
    #[error("equilibrium LP failed: {0}")]
    SolverFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityParams {
    /// Contact tolerance in world units.
    pub tol: f64,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Vertical displacement that counts as falling (half a layer).
    pub fall_threshold: f64,
    /// Tilt beyond which a block is considered toppled rather than levelled.
    pub max_tilt: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            tol: 0.02,
            mu: 0.5,
            fall_threshold: 1.0,
            max_tilt: 0.3,
        }
    }
}

impl StabilityParams {
    /// Footprint overlaps narrower than this are side contacts, not support.
    pub fn lateral_allowance(&self) -> f64 {
        PENETRATION_FACTOR * self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Blocks that dropped by more than the fall threshold.
    #[serde(rename = "fell")]
    pub fell_indices: Vec<usize>,
    /// Per-block vertical drop during the settle (negative = lifted).
    #[serde(rename = "drops")]
    pub settle_displacements: Vec<f64>,
    /// Blocks pushed up by more than the fall threshold, i.e. generated
    /// deep inside another block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lifted: Vec<usize>,
    /// Blocks tilted beyond the levelling limit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tilted: Vec<usize>,
    /// LP outcome; absent when the settle already decided the verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<bool>,
    /// The settled structure (what a viewer would see afterwards).
    #[serde(skip)]
    pub settled: Stack,
}

/// Classify with default parameters.
pub fn classify(stack: &Stack) -> Result<StabilityVerdict, StabilityError> {
    classify_with(stack, &StabilityParams::default())
}

pub fn classify_with(
    stack: &Stack,
    params: &StabilityParams,
) -> Result<StabilityVerdict, StabilityError> {
    let outcome = settle_with(stack, params);
    let pick =
        |pred: &dyn Fn(usize) -> bool| (0..stack.len()).filter(|&i| pred(i)).collect::<Vec<_>>();
    let fell = pick(&|i| outcome.displacements[i] > params.fall_threshold);
    let lifted = pick(&|i| -outcome.displacements[i] > params.fall_threshold);
    let tilted = pick(&|i| outcome.tilts[i] > params.max_tilt);

    let equilibrium = if fell.is_empty() && lifted.is_empty() && tilted.is_empty() {
        let contacts = detect_contacts(&outcome.stack, params.tol)?;
        Some(equilibrium_feasible(&outcome.stack, &contacts, params.mu)?)
    } else {
        None
    };
    Ok(StabilityVerdict {
        stable: equilibrium == Some(true),
        fell_indices: fell,
        settle_displacements: outcome.displacements,
        lifted,
        tilted,
        equilibrium,
        settled: outcome.stack,
    })
}

/// Stability verdict where malformed input (deep interpenetration, solver
/// breakdown) counts as unstable. Used when judging generated structures.
pub fn is_stable(stack: &Stack, params: &StabilityParams) -> (bool, Stack) {
    match classify_with(stack, params) {
        Ok(v) => (v.stable, v.settled),
        Err(_) => (false, stack.clone()),
    }
}
