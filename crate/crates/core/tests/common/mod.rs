#![allow(dead_code)]

//! Test-only oracles that are independent of the library's physics code.

use rand::Rng;
use stackforge::{BlockInstance, BlockShape, Stack};

/// One block per layer: (shape, x center).
pub type Tower = Vec<(BlockShape, f64)>;

fn width(shape: BlockShape) -> f64 {
    match shape {
        BlockShape::Cube | BlockShape::Triangle => 2.0,
        BlockShape::Rectangle => 4.0,
        BlockShape::LongRectangle => 8.0,
    }
}

fn mass(shape: BlockShape) -> f64 {
    // Uniform density, depth 2, height 2.
    match shape {
        BlockShape::Triangle => 4.0,
        s => width(s) * 4.0,
    }
}

pub fn tower_stack(tower: &Tower) -> Stack {
    Stack::new(
        tower
            .iter()
            .enumerate()
            .map(|(layer, &(shape, x))| BlockInstance::at(shape, x, 0.0, 2.0 * layer as f64 + 1.0))
            .collect(),
    )
}

/// Signed stability margin of a single-stranded tower of boxes: for every
/// cut (including the ground), the combined center of mass of everything
/// above must project inside the contact interval; the margin is the
/// smallest distance to an interval end (negative when outside).
pub fn tower_margin(tower: &Tower) -> f64 {
    let mut margin = f64::INFINITY;
    for cut in 0..tower.len() {
        let above = &tower[cut..];
        let m: f64 = above.iter().map(|&(s, _)| mass(s)).sum();
        let com = above.iter().map(|&(s, x)| mass(s) * x).sum::<f64>() / m;
        let (s, x) = tower[cut];
        let (mut lo, mut hi) = (x - width(s) / 2.0, x + width(s) / 2.0);
        if cut > 0 {
            let (sb, xb) = tower[cut - 1];
            lo = lo.max(xb - width(sb) / 2.0);
            hi = hi.min(xb + width(sb) / 2.0);
        }
        margin = margin.min((com - lo).min(hi - com));
    }
    margin
}

pub fn random_tower<R: Rng>(rng: &mut R, layers: usize) -> Tower {
    let boxes = [
        BlockShape::Cube,
        BlockShape::Rectangle,
        BlockShape::LongRectangle,
    ];
    let mut tower = Vec::with_capacity(layers);
    let mut x = rng.random_range(-1.0..1.0);
    let mut prev_w: f64 = 0.0;
    for layer in 0..layers {
        let shape = boxes[rng.random_range(0..boxes.len())];
        if layer > 0 {
            let reach = 0.5 * (prev_w + width(shape));
            x += rng.random_range(-0.9 * reach..0.9 * reach);
        }
        prev_w = width(shape);
        tower.push((shape, x));
    }
    tower
}
