use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use nalgebra::Vector3;

use super::body::Body;
use super::contacts::{ContactKind, ContactPatch, Contactor};
use super::StabilityError;
use crate::geometry::Stack;

/// Residual (in units of total weight) below which the equilibrium LP is
/// considered satisfied.
pub const LP_TOLERANCE: f64 = 1e-7;

/// Static equilibrium as an LP feasibility problem.
///
/// Every support contact point carries a force in the 4-sided linearized
/// friction cone `f = sum_j l_j (n + mu t_j)`, `l_j >= 0`. Each block needs
/// zero net force and zero net torque about its center of mass under its
/// own weight (uniform density, weights normalized to sum to one). The LP
/// minimizes the L1 residual of those balance rows; the structure is in
/// equilibrium iff the residual is within [`LP_TOLERANCE`].
pub fn equilibrium_feasible(
    stack: &Stack,
    contacts: &[ContactPatch],
    mu: f64,
) -> Result<bool, StabilityError> {
    equilibrium_residual(stack, contacts, mu).map(|r| r <= LP_TOLERANCE)
}

pub fn equilibrium_residual(
    stack: &Stack,
    contacts: &[ContactPatch],
    mu: f64,
) -> Result<f64, StabilityError> {
    assert!(mu >= 0.0, "friction coefficient must be non-negative");
    let bodies: Vec<Body> = stack.blocks.iter().map(Body::from_block).collect();
    if bodies.is_empty() {
        return Ok(0.0);
    }
    let total_mass: f64 = bodies.iter().map(Body::mass).sum();
    let coms: Vec<Vector3<f64>> = bodies.iter().map(Body::center_of_mass).collect();

    // rows[6 * b + k]: k = 0..3 force, 3..6 torque about the block's CoM.
    let mut rows: Vec<LinearExpr> = (0..6 * bodies.len()).map(|_| LinearExpr::empty()).collect();
    let mut problem = Problem::new(OptimizationDirection::Minimize);

    let add_wrench = |rows: &mut [LinearExpr],
                      var: Variable,
                      block: usize,
                      point: &Vector3<f64>,
                      f: &Vector3<f64>,
                      sign: f64| {
        let torque = (point - coms[block]).cross(f);
        for k in 0..3 {
            if f[k] != 0.0 {
                rows[6 * block + k].add(var, sign * f[k]);
            }
            if torque[k] != 0.0 {
                rows[6 * block + 3 + k].add(var, sign * torque[k]);
            }
        }
    };

    for patch in contacts.iter().filter(|c| c.kind == ContactKind::Support) {
        let n = patch.normal.normalize();
        let helper = if n.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let t1 = n.cross(&helper).normalize();
        let t2 = n.cross(&t1);
        let generators = [n + mu * t1, n - mu * t1, n + mu * t2, n - mu * t2];
        for point in &patch.points {
            for g in &generators {
                let var = problem.add_var(0.0, (0.0, f64::INFINITY));
                add_wrench(&mut rows, var, patch.b, point, g, 1.0);
                if let Contactor::Block(lower) = patch.a {
                    add_wrench(&mut rows, var, lower, point, g, -1.0);
                }
            }
        }
    }

    for (r, mut expr) in rows.into_iter().enumerate() {
        let (block, k) = (r / 6, r % 6);
        let rhs = if k == 2 {
            bodies[block].mass() / total_mass
        } else {
            0.0
        };
        let plus = problem.add_var(1.0, (0.0, f64::INFINITY));
        let minus = problem.add_var(1.0, (0.0, f64::INFINITY));
        expr.add(plus, 1.0);
        expr.add(minus, -1.0);
        problem.add_constraint(expr, ComparisonOp::Eq, rhs);
    }

    let outcome = problem
        .solve()
        .map_err(|e| StabilityError::SolverFailure(e.to_string()))?;
    let solution = outcome
        .solution()
        .ok_or_else(|| StabilityError::SolverFailure("solve interrupted".into()))?;
    Ok(solution.objective().max(0.0))
}
