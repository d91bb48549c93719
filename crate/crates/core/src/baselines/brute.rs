use rand::Rng;
use serde::{Deserialize, Serialize};

use super::apply_swap;
use crate::geometry::polygon::{area, clip_convex, convex_hull, Point2};
use crate::geometry::{BlockInstance, BlockShape, Silhouette64, Stack, PX_PER_UNIT, SIL_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BruteForceConfig {
    pub n_seeds: usize,
    pub x_range: [f64; 2],
    pub z_levels: Vec<f64>,
    pub search_step: f64,
    pub collision_weight: f64,
    /// Probability of one cube-pair/rectangle swap per generated stack.
    pub sigma: f64,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        Self {
            n_seeds: 20,
            x_range: [-3.0, 3.0],
            z_levels: vec![1.0, 3.0, 5.0, 7.0],
            search_step: 0.05,
            collision_weight: 1.0,
            sigma: 0.0,
        }
    }
}

fn front_hull(b: &BlockInstance) -> Vec<Point2> {
    let pts: Vec<Point2> = b.world_vertices().iter().map(|v| [v.x, v.z]).collect();
    convex_hull(&pts)
}

/// Intersection volume of `block` with every block of `placed`, as a
/// fraction of the block's own volume. Exact for blocks that are only
/// rotated about y, which is all the baselines produce.
pub fn overlap_fraction(block: &BlockInstance, placed: &[BlockInstance]) -> f64 {
    let hull = front_hull(block);
    let (y0, y1) = block.extent_along(1);
    let mut vol = 0.0;
    for p in placed {
        let (q0, q1) = p.extent_along(1);
        let depth = (y1.min(q1) - y0.max(q0)).max(0.0);
        if depth > 0.0 {
            vol += area(&clip_convex(&hull, &front_hull(p))) * depth;
        }
    }
    vol / block.shape.volume()
}

/// Exact area of the target silhouette inside a region, with pixels taken
/// as unit squares (so sub-pixel shifts change the score).
pub struct Coverage<'a> {
    sil: &'a Silhouette64,
    /// integral[r][c] = set pixels in rows < r and columns < c.
    integral: Vec<[u32; SIL_SIZE + 1]>,
}

impl<'a> Coverage<'a> {
    pub fn new(sil: &'a Silhouette64) -> Self {
        let mut integral = vec![[0u32; SIL_SIZE + 1]; SIL_SIZE + 1];
        for r in 0..SIL_SIZE {
            let mut run = 0;
            for c in 0..SIL_SIZE {
                run += sil.get(r, c) as u32;
                integral[r + 1][c + 1] = integral[r][c + 1] + run;
            }
        }
        Self { sil, integral }
    }

    /// Covered area in [0, row] x [0, col], fractional pixel coordinates.
    fn cumulative(&self, row: f64, col: f64) -> f64 {
        let n = SIL_SIZE as f64;
        let (row, col) = (row.clamp(0.0, n), col.clamp(0.0, n));
        let (r, c) = (
            (row.floor() as usize).min(SIL_SIZE - 1),
            (col.floor() as usize).min(SIL_SIZE - 1),
        );
        let (b, a) = (row - r as f64, col - c as f64);
        let i = |r: usize, c: usize| self.integral[r][c] as f64;
        let along_row = i(r + 1, c) - i(r, c);
        let along_col = i(r, c + 1) - i(r, c);
        i(r, c) + b * along_row + a * along_col + a * b * self.sil.get(r, c) as u8 as f64
    }

    fn to_pixels(x: f64, z: f64) -> (f64, f64) {
        ((8.0 - z) * PX_PER_UNIT, (x + 4.0) * PX_PER_UNIT)
    }

    /// Fraction of the block's front projection lying on set pixels.
    pub fn fraction(&self, block: &BlockInstance) -> f64 {
        let hull = front_hull(block);
        let total = area(&hull);
        if total <= 0.0 {
            return 0.0;
        }
        let axis_aligned = block.shape != BlockShape::Triangle && block.pose.rotation.norm() == 0.0;
        let covered = if axis_aligned {
            let (x0, x1) = block.extent_along(0);
            let (z0, z1) = block.extent_along(2);
            let (r1, c0) = Self::to_pixels(x0, z0);
            let (r0, c1) = Self::to_pixels(x1, z1);
            let px = self.cumulative(r1, c1) - self.cumulative(r0, c1) - self.cumulative(r1, c0)
                + self.cumulative(r0, c0);
            px / (PX_PER_UNIT * PX_PER_UNIT)
        } else {
            self.polygon_area(&hull)
        };
        (covered / total).clamp(0.0, 1.0)
    }

    fn polygon_area(&self, hull: &[Point2]) -> f64 {
        let (mut x0, mut x1, mut z0, mut z1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in hull {
            (x0, x1, z0, z1) = (x0.min(p[0]), x1.max(p[0]), z0.min(p[1]), z1.max(p[1]));
        }
        let (r1, c0) = Self::to_pixels(x0, z0);
        let (r0, c1) = Self::to_pixels(x1, z1);
        let span = |lo: f64, hi: f64| {
            (lo.floor().max(0.0) as usize)..(hi.ceil().min(SIL_SIZE as f64).max(0.0) as usize)
        };
        let side = 1.0 / PX_PER_UNIT;
        let mut acc = 0.0;
        for r in span(r0, r1) {
            for c in span(c0, c1) {
                if !self.sil.get(r, c) {
                    continue;
                }
                let (u, v) = (-4.0 + c as f64 * side, 8.0 - (r + 1) as f64 * side);
                let square = [[u, v], [u + side, v], [u + side, v + side], [u, v + side]];
                acc += area(&clip_convex(&square, hull));
            }
        }
        acc
    }
}

/// Fraction of the block's front projection covered by the target, minus
/// the weighted overlap with already placed blocks.
pub fn placement_score(
    block: &BlockInstance,
    coverage: &Coverage<'_>,
    placed: &[BlockInstance],
    collision_weight: f64,
) -> f64 {
    coverage.fraction(block) - collision_weight * overlap_fraction(block, placed)
}

/// Places the blocks one at a time, widest first. Each block starts from
/// `n_seeds` random (x, layer) seeds and sweeps x in both directions across
/// the range; the best-scoring pose over every seed and sweep is kept
/// (earliest wins ties). All blocks are placed even when nothing scores
/// well.
pub fn brute_force_place<R: Rng + ?Sized>(
    sil: &Silhouette64,
    shapes: &[BlockShape],
    cfg: &BruteForceConfig,
    rng: &mut R,
) -> Stack {
    let mut order = shapes.to_vec();
    order.sort_by_key(|s| std::cmp::Reverse(s.width_cells()));
    let [lo, hi] = cfg.x_range;
    let step = cfg.search_step.max(1e-3);
    let coverage = Coverage::new(sil);
    let mut placed: Vec<BlockInstance> = Vec::with_capacity(order.len());
    for shape in order {
        let mut best: Option<(f64, BlockInstance)> = None;
        for _ in 0..cfg.n_seeds {
            let x0 = rng.random_range(lo..=hi);
            let z = cfg.z_levels[rng.random_range(0..cfg.z_levels.len())];
            for dir in [-1.0, 1.0] {
                // The seed itself is scored once, on the leftward sweep.
                let mut k = if dir < 0.0 { 0 } else { 1 };
                loop {
                    let x = x0 + dir * k as f64 * step;
                    if x < lo - 1e-9 || x > hi + 1e-9 {
                        break;
                    }
                    let cand = BlockInstance::at(shape, x, 0.0, z);
                    let s = placement_score(&cand, &coverage, &placed, cfg.collision_weight);
                    if best.as_ref().is_none_or(|(b, _)| s > *b) {
                        best = Some((s, cand));
                    }
                    k += 1;
                }
            }
        }
        let chosen = best
            .map(|(_, b)| b)
            .unwrap_or_else(|| BlockInstance::at(shape, 0.0, 0.0, cfg.z_levels[0]));
        placed.push(chosen);
    }
    apply_swap(&Stack::new(placed), cfg.sigma, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, View};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corner_patch() -> Silhouette64 {
        rasterize(
            &Stack::new(vec![BlockInstance::at(BlockShape::Cube, -3.0, 0.0, 1.0)]),
            View::Front,
        )
    }

    #[test]
    fn single_cube_finds_the_corner() {
        let cfg = BruteForceConfig::default();
        for seed in 0..5 {
            let s = brute_force_place(
                &corner_patch(),
                &[BlockShape::Cube],
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            let t = s.blocks[0].pose.translation;
            assert!(
                (t.x + 3.0).abs() <= 0.05 + 1e-9 && t.z == 1.0,
                "seed {seed}: {t:?}"
            );
        }
    }

    #[test]
    fn empty_target_still_places_every_block() {
        let cfg = BruteForceConfig::default();
        let shapes = [BlockShape::Cube, BlockShape::Rectangle];
        let s = brute_force_place(
            &Silhouette64::empty(View::Front),
            &shapes,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(s.len(), 2);
        for (i, b) in s.blocks.iter().enumerate() {
            let empty = Silhouette64::empty(View::Front);
            assert!(placement_score(b, &Coverage::new(&empty), &s.blocks[..i], 1.0) <= 0.0);
        }
    }

    #[test]
    fn coincident_second_cube_is_penalized() {
        let first = BlockInstance::at(BlockShape::Cube, -3.0, 0.0, 1.0);
        let sil = corner_patch();
        let cov = Coverage::new(&sil);
        let alone = placement_score(&first, &cov, &[], 1.0);
        let stacked = placement_score(&first, &cov, &[first], 1.0);
        assert!((alone - 1.0).abs() < 1e-12);
        assert!(stacked.abs() < 1e-12);
    }

    #[test]
    fn coverage_is_exact_area() {
        let sil = corner_patch();
        let cov = Coverage::new(&sil);
        let shifted = BlockInstance::at(BlockShape::Cube, -2.9, 0.0, 1.0);
        assert!((cov.fraction(&shifted) - 0.95).abs() < 1e-12);
        let half_up = BlockInstance::at(BlockShape::Rectangle, -2.0, 0.0, 2.0);
        assert!((cov.fraction(&half_up) - 0.25).abs() < 1e-12);
        let tri = BlockInstance::at(BlockShape::Triangle, -3.0, 0.0, 1.0);
        assert!((cov.fraction(&tri) - 1.0).abs() < 1e-12);
        let full = Silhouette64::full(View::Front);
        let tri_full =
            Coverage::new(&full).fraction(&BlockInstance::at(BlockShape::Triangle, 0.3, 0.0, 5.0));
        assert!((tri_full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raising_collision_weight_never_adds_overlap() {
        let sil = rasterize(
            &Stack::new(vec![
                BlockInstance::at(BlockShape::Rectangle, -2.0, 0.0, 1.0),
                BlockInstance::at(BlockShape::Cube, -3.0, 0.0, 3.0),
            ]),
            View::Front,
        );
        let shapes = [BlockShape::Rectangle, BlockShape::Cube, BlockShape::Cube];
        let total = |w: f64| {
            let cfg = BruteForceConfig {
                collision_weight: w,
                ..Default::default()
            };
            let s = brute_force_place(&sil, &shapes, &cfg, &mut ChaCha8Rng::seed_from_u64(8));
            (1..s.len())
                .map(|i| {
                    overlap_fraction(&s.blocks[i], &s.blocks[..i]) * s.blocks[i].shape.volume()
                })
                .sum::<f64>()
        };
        let weights = [0.0, 0.5, 1.0, 2.0, 5.0];
        let overlaps: Vec<f64> = weights.iter().map(|&w| total(w)).collect();
        for w in overlaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{overlaps:?}");
        }
    }

    #[test]
    fn triangle_overlap_uses_its_cross_section() {
        let tri = BlockInstance::at(BlockShape::Triangle, 0.0, 0.0, 1.0);
        let cube = BlockInstance::at(BlockShape::Cube, 0.0, 0.0, 1.0);
        assert!((overlap_fraction(&cube, &[tri]) - 0.5).abs() < 1e-12);
        assert!((overlap_fraction(&tri, &[cube]) - 1.0).abs() < 1e-12);
    }
}
