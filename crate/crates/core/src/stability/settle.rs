use super::body::Body;
use super::StabilityParams;
use crate::geometry::polygon;
use crate::geometry::Stack;

#[derive(Debug, Clone, PartialEq)]
pub struct SettleOutcome {
    /// Levelled and settled stack, block order unchanged.
    pub stack: Stack,
    /// Per-block vertical displacement, positive downwards.
    pub displacements: Vec<f64>,
    /// Per-block tilt (radians) removed by levelling.
    pub tilts: Vec<f64>,
}

/// Quasi-static settle with default parameters.
pub fn settle(stack: &Stack) -> SettleOutcome {
    settle_with(stack, &StabilityParams::default())
}

/// Levels every block to upright (keeping its heading), then visits blocks
/// in ascending z-center order (ties by x, then y) and rests each one on
/// the highest surface beneath it: the ground or an already-settled block
/// whose footprint overlap is wider than the lateral penetration allowance.
/// Blocks only move vertically; a block that was slightly sunk into its
/// support is lifted onto it.
pub fn settle_with(stack: &Stack, params: &StabilityParams) -> SettleOutcome {
    let n = stack.blocks.len();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| stack.blocks[i].pose.translation;
    order.sort_by(|&i, &j| {
        let (a, b) = (key(i), key(j));
        a.z.total_cmp(&b.z)
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
    });

    let lateral_allowance = params.lateral_allowance();
    let mut settled: Vec<Option<Body>> = vec![None; n];
    let mut displacements = vec![0.0; n];
    let tilts = stack.blocks.iter().map(|b| b.pose.tilt()).collect();
    for &i in &order {
        let body = Body::from_block(&stack.blocks[i]);
        let mut rest: f64 = 0.0;
        for below in settled.iter().flatten() {
            let region = body.footprint_overlap(below);
            if region.len() < 3 || polygon::min_width(&region) <= lateral_allowance {
                continue;
            }
            rest = rest.max(below.support_height(&region));
        }
        let z = rest + body.half_height();
        displacements[i] = body.center.z - z;
        settled[i] = Some(body.with_center_z(z));
    }

    let blocks = settled
        .into_iter()
        .map(|b| b.expect("every block visited").to_block())
        .collect();
    SettleOutcome {
        stack: Stack {
            blocks,
            meta: stack.meta.clone(),
        },
        displacements,
        tilts,
    }
}
