use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::polygon::{self, Point2};
use super::{GeometryError, Stack, PX_PER_UNIT};

pub const SIL_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Front,
    Side,
    Top,
}

impl View {
    pub const ALL: [View; 3] = [View::Front, View::Side, View::Top];

    /// (u_min, v_max): world coordinates of the image's top-left corner.
    fn origin(self) -> (f64, f64) {
        match self {
            View::Front | View::Side => (-4.0, 8.0),
            View::Top => (-4.0, 4.0),
        }
    }

    fn project(self, p: &nalgebra::Vector3<f64>) -> Point2 {
        match self {
            View::Front => [p.x, p.z],
            View::Side => [p.y, p.z],
            View::Top => [p.x, p.y],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Front => "front",
            View::Side => "side",
            View::Top => "top",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "front" => Ok(View::Front),
            "side" => Ok(View::Side),
            "top" => Ok(View::Top),
            other => Err(GeometryError::Parse(format!("unknown view `{other}`"))),
        }
    }
}

/// 64x64 binary image. Row 0 is the top of the image; bit `c` of a row is
/// column `c`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Silhouette64 {
    rows: [u64; SIL_SIZE],
    pub view: View,
}

impl fmt::Debug for Silhouette64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Silhouette64({}, {} px)", self.view, self.count())
    }
}

impl Silhouette64 {
    pub fn empty(view: View) -> Self {
        Self {
            rows: [0; SIL_SIZE],
            view,
        }
    }

    pub fn full(view: View) -> Self {
        Self {
            rows: [u64::MAX; SIL_SIZE],
            view,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        (self.rows[row] >> col) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        if on {
            self.rows[row] |= 1 << col;
        } else {
            self.rows[row] &= !(1 << col);
        }
    }

    pub fn row_bits(&self, row: usize) -> u64 {
        self.rows[row]
    }

    pub fn count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    pub fn union_with(&mut self, other: &Silhouette64) {
        for (a, b) in self.rows.iter_mut().zip(other.rows.iter()) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Silhouette64) -> usize {
        self.rows
            .iter()
            .zip(other.rows.iter())
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_count(&self, other: &Silhouette64) -> usize {
        self.rows
            .iter()
            .zip(other.rows.iter())
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    /// World coordinates of a pixel center.
    pub fn pixel_center(view: View, row: usize, col: usize) -> Point2 {
        let (u0, v1) = view.origin();
        [
            u0 + (col as f64 + 0.5) / PX_PER_UNIT,
            v1 - (row as f64 + 0.5) / PX_PER_UNIT,
        ]
    }

    /// The 16 non-overlapping 16x16 patches in row-major patch order, each
    /// flattened row-major to 256 values in {0, 1}.
    pub fn patches(&self) -> Vec<[f32; 256]> {
        let mut out = vec![[0f32; 256]; 16];
        for (p, patch) in out.iter_mut().enumerate() {
            let (pr, pc) = (p / 4, p % 4);
            for r in 0..16 {
                let bits = self.rows[pr * 16 + r] >> (pc * 16);
                for c in 0..16 {
                    patch[r * 16 + c] = ((bits >> c) & 1) as f32;
                }
            }
        }
        out
    }

    /// Row-major 64x64 values in {0, 1}.
    pub fn to_f32(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(SIL_SIZE * SIL_SIZE);
        for r in 0..SIL_SIZE {
            for c in 0..SIL_SIZE {
                out.push(if self.get(r, c) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// `SIL64 <view>` header followed by 64 rows of '0'/'1'.
    pub fn to_sil64_string(&self) -> String {
        let mut s = String::with_capacity(12 + SIL_SIZE * (SIL_SIZE + 1));
        s.push_str("SIL64 ");
        s.push_str(self.view.name());
        s.push('\n');
        for r in 0..SIL_SIZE {
            for c in 0..SIL_SIZE {
                s.push(if self.get(r, c) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    /// Parse either the SIL64 text form or a JSON array of 64 arrays of
    /// 64 zeros/ones (taken as a front view).
    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            return Self::parse_json(trimmed);
        }
        let mut lines = trimmed.lines();
        let header = lines
            .next()
            .ok_or_else(|| GeometryError::Parse("empty input".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("SIL64") {
            return Err(GeometryError::Parse(format!("bad header `{header}`")));
        }
        let view: View = parts
            .next()
            .ok_or_else(|| GeometryError::Parse("missing view in header".into()))?
            .parse()?;
        let mut sil = Self::empty(view);
        let mut n = 0;
        for (r, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            if r >= SIL_SIZE {
                return Err(GeometryError::Parse("more than 64 rows".into()));
            }
            let line = line.trim_end();
            if line.len() != SIL_SIZE {
                return Err(GeometryError::Parse(format!(
                    "row {r} has {} columns",
                    line.len()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => sil.set(r, c, true),
                    other => return Err(GeometryError::Parse(format!("bad pixel `{other}`"))),
                }
            }
            n += 1;
        }
        if n != SIL_SIZE {
            return Err(GeometryError::Parse(format!("expected 64 rows, found {n}")));
        }
        Ok(sil)
    }

    fn parse_json(text: &str) -> Result<Self, GeometryError> {
        let grid: Vec<Vec<u8>> =
            serde_json::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        if grid.len() != SIL_SIZE || grid.iter().any(|row| row.len() != SIL_SIZE) {
            return Err(GeometryError::Parse("JSON silhouette must be 64x64".into()));
        }
        let mut sil = Self::empty(View::Front);
        for (r, row) in grid.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => sil.set(r, c, true),
                    other => return Err(GeometryError::Parse(format!("bad pixel value {other}"))),
                }
            }
        }
        Ok(sil)
    }
}

impl Serialize for Silhouette64 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_sil64_string())
    }
}

impl<'de> Deserialize<'de> for Silhouette64 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Silhouette64::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Point-in-convex-polygon with a half-open tie rule: points exactly on a
/// left or bottom edge are inside, on a right or top edge outside.
fn contains(poly: &[Point2], p: Point2) -> bool {
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let c = polygon::cross(a, b, p);
        if c < 0.0 {
            return false;
        }
        if c == 0.0 {
            let left_edge = b[1] < a[1];
            let bottom_edge = b[1] == a[1] && b[0] > a[0];
            if !(left_edge || bottom_edge) {
                return false;
            }
        }
    }
    true
}

fn fill_polygon(sil: &mut Silhouette64, poly: &[Point2]) {
    if poly.len() < 3 {
        return;
    }
    let (u0, v1) = sil.view.origin();
    let (mut umin, mut umax, mut vmin, mut vmax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in poly {
        umin = umin.min(p[0]);
        umax = umax.max(p[0]);
        vmin = vmin.min(p[1]);
        vmax = vmax.max(p[1]);
    }
    let to_col = |u: f64| ((u - u0) * PX_PER_UNIT - 0.5).clamp(-1.0, SIL_SIZE as f64);
    let to_row = |v: f64| ((v1 - v) * PX_PER_UNIT - 0.5).clamp(-1.0, SIL_SIZE as f64);
    let c0 = to_col(umin).floor().max(0.0) as usize;
    let c1 = (to_col(umax).ceil() as i64).clamp(0, SIL_SIZE as i64 - 1) as usize;
    let r0 = to_row(vmax).floor().max(0.0) as usize;
    let r1 = (to_row(vmin).ceil() as i64).clamp(0, SIL_SIZE as i64 - 1) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            if contains(poly, Silhouette64::pixel_center(sil.view, r, c)) {
                sil.set(r, c, true);
            }
        }
    }
}

fn projected_hull(block: &super::BlockInstance, view: View) -> Vec<Point2> {
    let pts: Vec<Point2> = block
        .world_vertices()
        .iter()
        .map(|v| view.project(v))
        .collect();
    polygon::convex_hull(&pts)
}

fn in_window(view: View, p: Point2) -> bool {
    let (u0, v1) = view.origin();
    let span = SIL_SIZE as f64 / PX_PER_UNIT;
    let eps = 1e-9;
    p[0] >= u0 - eps && p[0] <= u0 + span + eps && p[1] <= v1 + eps && p[1] >= v1 - span - eps
}

/// Orthographic silhouette: a pixel is set iff its center lies inside the
/// projection of any block. Blocks leaving the window are clipped.
pub fn rasterize(stack: &Stack, view: View) -> Silhouette64 {
    let mut sil = Silhouette64::empty(view);
    for block in &stack.blocks {
        fill_polygon(&mut sil, &projected_hull(block, view));
    }
    sil
}

/// Like [`rasterize`] but reports the first block with a vertex outside the
/// window. The error still carries the clipped image.
pub fn rasterize_strict(stack: &Stack, view: View) -> Result<Silhouette64, GeometryError> {
    let sil = rasterize(stack, view);
    for (i, block) in stack.blocks.iter().enumerate() {
        if block
            .world_vertices()
            .iter()
            .any(|v| !in_window(view, view.project(v)))
        {
            return Err(GeometryError::BlockOutOfWindow {
                block: i,
                view,
                silhouette: Box::new(sil),
            });
        }
    }
    Ok(sil)
}

/// Intersection over union; 1.0 when both images are empty.
pub fn iou(a: &Silhouette64, b: &Silhouette64) -> Result<f64, GeometryError> {
    if a.view != b.view {
        return Err(GeometryError::ViewMismatch(a.view, b.view));
    }
    let union = a.union_count(b);
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.intersection_count(b) as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewIou {
    pub front: f64,
    pub side: f64,
    pub top: f64,
    pub average: f64,
}

impl ViewIou {
    pub const ZERO: ViewIou = ViewIou {
        front: 0.0,
        side: 0.0,
        top: 0.0,
        average: 0.0,
    };

    pub fn from_views(front: f64, side: f64, top: f64) -> Self {
        Self {
            front,
            side,
            top,
            average: (front + side + top) / 3.0,
        }
    }
}

pub fn three_view_iou(generated: &Stack, reference: &Stack) -> ViewIou {
    let per_view =
        |view| iou(&rasterize(generated, view), &rasterize(reference, view)).expect("same view");
    ViewIou::from_views(
        per_view(View::Front),
        per_view(View::Side),
        per_view(View::Top),
    )
}
