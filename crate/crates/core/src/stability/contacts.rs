use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::body::Body;
use super::StabilityError;
use crate::geometry::polygon::{self, Point2};
use crate::geometry::{BlockShape, Stack};

/// The lower side of a contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contactor {
    Ground,
    Block(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    /// Load-bearing contact: the normal has an upward component.
    Support,
    /// Touching vertical faces of neighbours. Reported, but not load bearing.
    Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPatch {
    pub a: Contactor,
    pub b: usize,
    pub points: Vec<Vector3<f64>>,
    /// Unit normal pointing from `a` into `b`.
    pub normal: Vector3<f64>,
    pub kind: ContactKind,
}

/// Interpenetration deeper than this multiple of the contact tolerance is
/// treated as malformed input.
pub const PENETRATION_FACTOR: f64 = 5.0;

pub fn detect_contacts(stack: &Stack, tol: f64) -> Result<Vec<ContactPatch>, StabilityError> {
    assert!(tol > 0.0, "contact tolerance must be positive");
    let bodies: Vec<Body> = stack.blocks.iter().map(Body::from_block).collect();
    let max_depth = PENETRATION_FACTOR * tol;

    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let (a, b) = (&bodies[i], &bodies[j]);
            let vertical = a.top().min(b.top()) - a.bottom().max(b.bottom());
            if vertical <= max_depth {
                continue;
            }
            let lateral = polygon::sat_overlap(&a.footprint, &b.footprint);
            let depth = vertical.min(lateral);
            if depth > max_depth {
                return Err(StabilityError::Penetration { a: i, b: j, depth });
            }
        }
    }

    let mut patches = Vec::new();
    for (i, body) in bodies.iter().enumerate() {
        if body.bottom().abs() <= tol {
            patches.push(ContactPatch {
                a: Contactor::Ground,
                b: i,
                points: body
                    .footprint
                    .iter()
                    .map(|p| Vector3::new(p[0], p[1], 0.0))
                    .collect(),
                normal: Vector3::z(),
                kind: ContactKind::Support,
            });
        }
    }

    for (lo, lower) in bodies.iter().enumerate() {
        for (up, upper) in bodies.iter().enumerate() {
            if lo == up {
                continue;
            }
            if let Some(patch) = support_contact(lo, lower, up, upper, tol) {
                patches.push(patch);
            }
        }
    }

    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            if let Some(patch) = side_contact(i, &bodies[i], j, &bodies[j], tol) {
                patches.push(patch);
            }
        }
    }
    Ok(patches)
}

fn support_contact(
    lo: usize,
    lower: &Body,
    up: usize,
    upper: &Body,
    tol: f64,
) -> Option<ContactPatch> {
    if upper.bottom() < lower.top() - PENETRATION_FACTOR * tol - 1e-9 {
        return None;
    }
    let region = upper.footprint_overlap(lower);
    if region.len() < 3 || polygon::area(&region) < 1e-9 {
        return None;
    }
    let surface = lower.support_height(&region);
    if (upper.bottom() - surface).abs() > tol {
        return None;
    }
    let lift = |p: Point2, z: f64| Vector3::new(p[0], p[1], z);
    let (points, normal) = match lower.shape {
        BlockShape::Triangle => {
            if lower.min_abs_local_x(&region) == 0.0 {
                let (r0, r1) = lower.ridge();
                let (p, q) = polygon::clip_segment(r0, r1, &upper.footprint)?;
                (vec![lift(p, surface), lift(q, surface)], Vector3::z())
            } else {
                // The upper block's bottom edge rests on one sloped face.
                let d = lower.min_abs_local_x(&region);
                let pts: Vec<_> = region
                    .iter()
                    .filter(|&&p| (lower.local_x(p).abs() - d).abs() < 1e-9)
                    .map(|&p| lift(p, surface))
                    .collect();
                let side = lower.local_x(region[0]).signum();
                let [ax, ay] = lower.axis_x();
                let n = Vector3::new(2.0 * side * ax, 2.0 * side * ay, 1.0).normalize();
                (pts, n)
            }
        }
        _ => (
            polygon::extreme_points(&region)
                .into_iter()
                .map(|p| lift(p, surface))
                .collect(),
            Vector3::z(),
        ),
    };
    if points.is_empty() {
        return None;
    }
    Some(ContactPatch {
        a: Contactor::Block(lo),
        b: up,
        points,
        normal,
        kind: ContactKind::Support,
    })
}

fn side_contact(i: usize, a: &Body, j: usize, b: &Body, tol: f64) -> Option<ContactPatch> {
    let z0 = a.bottom().max(b.bottom());
    let z1 = a.top().min(b.top());
    if z1 - z0 <= tol {
        return None;
    }
    // Axis of least overlap among the footprint edge normals.
    let mut best: Option<(f64, [f64; 2])> = None;
    for poly in [&a.footprint, &b.footprint] {
        for k in 0..poly.len() {
            let p = poly[k];
            let q = poly[(k + 1) % poly.len()];
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            let n = [-(q[1] - p[1]) / len, (q[0] - p[0]) / len];
            let proj = |poly: &[Point2]| {
                poly.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        let d = p[0] * n[0] + p[1] * n[1];
                        (lo.min(d), hi.max(d))
                    })
            };
            let (alo, ahi) = proj(&a.footprint);
            let (blo, bhi) = proj(&b.footprint);
            let overlap = ahi.min(bhi) - alo.max(blo);
            if best.is_none_or(|(o, _)| overlap < o) {
                best = Some((overlap, n));
            }
        }
    }
    let (overlap, mut n) = best?;
    if overlap < -tol {
        return None;
    }
    let dc = [b.center.x - a.center.x, b.center.y - a.center.y];
    if dc[0] * n[0] + dc[1] * n[1] < 0.0 {
        n = [-n[0], -n[1]];
    }
    let t = [-n[1], n[0]];
    let proj = |poly: &[Point2], dir: [f64; 2]| {
        poly.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let d = p[0] * dir[0] + p[1] * dir[1];
                (lo.min(d), hi.max(d))
            })
    };
    let (atlo, athi) = proj(&a.footprint, t);
    let (btlo, bthi) = proj(&b.footprint, t);
    let (s0, s1) = (atlo.max(btlo), athi.min(bthi));
    if s1 - s0 <= tol {
        return None;
    }
    let face = 0.5 * (proj(&a.footprint, n).1 + proj(&b.footprint, n).0);
    let mut points = Vec::with_capacity(4);
    for s in [s0, s1] {
        for z in [z0, z1] {
            points.push(Vector3::new(
                face * n[0] + s * t[0],
                face * n[1] + s * t[1],
                z,
            ));
        }
    }
    Some(ContactPatch {
        a: Contactor::Block(i),
        b: j,
        points,
        normal: Vector3::new(n[0], n[1], 0.0),
        kind: ContactKind::Side,
    })
}
