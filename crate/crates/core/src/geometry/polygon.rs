//! Small convex-polygon toolkit in 2D, shared by rasterization, contact
//! detection and the brute-force baseline's overlap measure.

pub type Point2 = [f64; 2];

const EPS: f64 = 1e-12;

#[inline]
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by monotone chain. Output is counter-clockwise with
/// collinear points removed.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < EPS && (a[1] - b[1]).abs() < EPS);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= EPS {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= EPS
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Signed area (positive for counter-clockwise).
pub fn signed_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

pub fn area(poly: &[Point2]) -> f64 {
    signed_area(poly).abs()
}

/// Clip `subject` against the convex counter-clockwise polygon `clip`
/// (Sutherland-Hodgman). Both inputs must be convex; the result is convex.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    if clip.len() < 3 {
        return Vec::new();
    }
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            let p_in = dp >= -EPS;
            let q_in = dq >= -EPS;
            if p_in {
                output.push(p);
            }
            if p_in != q_in {
                let t = dp / (dp - dq);
                output.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    output.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
    if output.len() > 1 {
        let first = output[0];
        let last = output[output.len() - 1];
        if (first[0] - last[0]).abs() < 1e-10 && (first[1] - last[1]).abs() < 1e-10 {
            output.pop();
        }
    }
    output
}

/// Clip the segment `a`-`b` to a convex counter-clockwise polygon.
pub fn clip_segment(a: Point2, b: Point2, poly: &[Point2]) -> Option<(Point2, Point2)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let da = cross(p, q, a);
        let db = cross(p, q, b);
        if da < -EPS && db < -EPS {
            return None;
        }
        if da < -EPS || db < -EPS {
            let t = da / (da - db);
            if da < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t0 > t1 + EPS {
        return None;
    }
    let lerp = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    Some((lerp(t0), lerp(t1)))
}

/// Minimum width of a convex polygon: the smallest extent over the edge
/// normals. Zero for degenerate input.
pub fn min_width(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        if len < EPS {
            continue;
        }
        let n = [-ey / len, ex / len];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in poly {
            let d = p[0] * n[0] + p[1] * n[1];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        best = best.min(hi - lo);
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Separating-axis overlap depth of two convex polygons. Positive values are
/// penetration depths, negative values are separation distances.
pub fn sat_overlap(a: &[Point2], b: &[Point2]) -> f64 {
    let mut depth = f64::INFINITY;
    for poly in [a, b] {
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
            let len = ex.hypot(ey);
            if len < EPS {
                continue;
            }
            let n = [-ey / len, ex / len];
            let project = |poly: &[Point2]| {
                poly.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        let d = p[0] * n[0] + p[1] * n[1];
                        (lo.min(d), hi.max(d))
                    })
            };
            let (alo, ahi) = project(a);
            let (blo, bhi) = project(b);
            depth = depth.min(ahi.min(bhi) - alo.max(blo));
        }
    }
    depth
}

/// Reduce a convex polygon to at most four extreme points (the support
/// points along the two diagonals), preserving its convex hull when it
/// already has four or fewer vertices.
pub fn extreme_points(poly: &[Point2]) -> Vec<Point2> {
    if poly.len() <= 4 {
        return poly.to_vec();
    }
    let dirs = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
    let mut out: Vec<Point2> = Vec::with_capacity(4);
    for d in dirs {
        let best = poly
            .iter()
            .copied()
            .max_by(|p, q| (p[0] * d[0] + p[1] * d[1]).total_cmp(&(q[0] * d[0] + q[1] * d[1])))
            .expect("nonempty polygon");
        if !out
            .iter()
            .any(|o| (o[0] - best[0]).abs() < 1e-10 && (o[1] - best[1]).abs() < 1e-10)
        {
            out.push(best);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point2> {
        vec![[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let pts = [
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [2.0, 2.0],
            [1.0, 1.0],
            [0.0, 2.0],
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((signed_area(&hull) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_overlapping_squares() {
        let a = square(0.0, 0.0, 2.0);
        let b = square(1.0, 1.0, 2.0);
        let c = clip_convex(&a, &b);
        assert!((area(&c) - 1.0).abs() < 1e-12);
        assert!((min_width(&c) - 1.0).abs() < 1e-12);
        assert!(clip_convex(&a, &square(5.0, 5.0, 1.0)).len() < 3);
    }

    #[test]
    fn sat_reports_separation_and_depth() {
        let a = square(0.0, 0.0, 2.0);
        assert!((sat_overlap(&a, &square(2.1, 0.0, 2.0)) + 0.1).abs() < 1e-12);
        assert!((sat_overlap(&a, &square(1.7, 0.5, 2.0)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn segment_clip() {
        let sq = square(0.0, 0.0, 2.0);
        let (p, q) = clip_segment([-1.0, 1.0], [3.0, 1.0], &sq).unwrap();
        assert!((p[0] - 0.0).abs() < 1e-12 && (q[0] - 2.0).abs() < 1e-12);
        assert!(clip_segment([-1.0, 3.0], [3.0, 3.0], &sq).is_none());
    }
}
