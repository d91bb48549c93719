//! Non-learned comparison methods: a greedy left-to-right, bottom-to-top
//! layer filler and a brute-force silhouette alignment search, both with
//! the optional cube-pair/rectangle swap that injects diversity.

mod brute;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    BlockInstance, BlockShape, Pose6, Silhouette64, Stack, GRID_SIZE, PX_PER_UNIT, SIL_SIZE,
};

pub use brute::{brute_force_place, overlap_fraction, placement_score, BruteForceConfig, Coverage};

/// Pixels per grid cell (and per layer band).
const CELL_PX: usize = SIL_SIZE / GRID_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    /// Probability of one cube-pair/rectangle swap per generated stack.
    pub sigma: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { sigma: 0.0 }
    }
}

/// Layer index of a z-center: floor(z / 2) clamped to the scaffold.
pub fn layer_of(z: f64) -> usize {
    ((z / 2.0).floor().max(0.0) as usize).min(GRID_SIZE - 1)
}

/// Longest run of set, unclaimed pixels in one image row: (start, length).
/// Ties go to the leftmost run.
fn longest_run(bits: u64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut c = 0;
    while c < SIL_SIZE {
        if (bits >> c) & 1 == 0 {
            c += 1;
            continue;
        }
        let start = c;
        while c < SIL_SIZE && (bits >> c) & 1 == 1 {
            c += 1;
        }
        if best.is_none_or(|(_, len)| c - start > len) {
            best = Some((start, c - start));
        }
    }
    best
}

/// Fills each layer band left to right: measure the longest run of pixels
/// on the band's middle row, drop in the widest remaining shape that fits
/// at the run's left end, and repeat on what is left of the row. Triangles
/// are only used on the top layer. Deterministic; the swap is applied
/// afterwards with probability `cfg.sigma`.
pub fn greedy_place<R: Rng + ?Sized>(
    sil: &Silhouette64,
    shapes: &[BlockShape],
    cfg: &GreedyConfig,
    rng: &mut R,
) -> Stack {
    let mut left: Vec<BlockShape> = shapes.to_vec();
    // Widest first; among equal widths keep the count-tuple order.
    left.sort_by_key(|s| (std::cmp::Reverse(s.width_cells()), s.index()));
    let mut blocks = Vec::new();
    for layer in 0..GRID_SIZE {
        let row = SIL_SIZE - layer * CELL_PX - CELL_PX / 2;
        let mut bits = sil.row_bits(row);
        while let Some((start, len)) = longest_run(bits) {
            let fits = left.iter().position(|s| {
                s.width_cells() * CELL_PX <= len
                    && (*s != BlockShape::Triangle || layer == GRID_SIZE - 1)
            });
            let Some(i) = fits else { break };
            let shape = left.remove(i);
            let w = shape.width_cells() * CELL_PX;
            let x = -4.0 + (start as f64 + w as f64 / 2.0) / PX_PER_UNIT;
            blocks.push(BlockInstance::at(shape, x, 0.0, 2.0 * layer as f64 + 1.0));
            let mask = if w >= 64 { u64::MAX } else { (1u64 << w) - 1 };
            bits &= !(mask << start);
        }
    }
    apply_swap(&Stack::new(blocks), cfg.sigma, rng)
}

/// Cube pairs abutting within this slack count as adjacent.
const ADJACENT_SLACK: f64 = 0.1;

/// Every (left cube, right cube, rectangle) triple that can be exchanged.
pub fn swap_candidates(stack: &Stack) -> Vec<(usize, usize, usize)> {
    let b = &stack.blocks;
    let of = |shape| (0..b.len()).filter(move |&i| b[i].shape == shape);
    let mut out = Vec::new();
    for i in of(BlockShape::Cube) {
        for j in of(BlockShape::Cube) {
            let (pi, pj) = (b[i].pose.translation, b[j].pose.translation);
            let adjacent =
                layer_of(pi.z) == layer_of(pj.z) && ((pj.x - pi.x) - 2.0).abs() <= ADJACENT_SLACK;
            if adjacent {
                out.extend(of(BlockShape::Rectangle).map(|r| (i, j, r)));
            }
        }
    }
    out
}

/// With probability `sigma`, exchange one uniformly chosen adjacent cube
/// pair with a rectangle: the rectangle takes the pair's span and the two
/// cubes take the rectangle's. Equal lengths at equal heights, so the front
/// silhouette is unchanged for grid-aligned blocks.
pub fn apply_swap<R: Rng + ?Sized>(stack: &Stack, sigma: f64, rng: &mut R) -> Stack {
    if sigma <= 0.0 || rng.random::<f64>() >= sigma {
        return stack.clone();
    }
    let Some(&(i, j, r)) = swap_candidates(stack).choose(rng) else {
        return stack.clone();
    };
    let mut out = stack.clone();
    let (pi, pj, pr) = (
        stack.blocks[i].pose,
        stack.blocks[j].pose,
        stack.blocks[r].pose,
    );
    let mid = (pi.translation + pj.translation) / 2.0;
    let moved =
        |p: Pose6, x: f64, y: f64, z: f64| Pose6::new(nalgebra::Vector3::new(x, y, z), p.rotation);
    out.blocks[r].pose = moved(pr, mid.x, pr.translation.y, mid.z);
    out.blocks[i].pose = moved(
        pi,
        pr.translation.x - 1.0,
        pi.translation.y,
        pr.translation.z,
    );
    out.blocks[j].pose = moved(
        pj,
        pr.translation.x + 1.0,
        pj.translation.y,
        pr.translation.z,
    );
    out
}
