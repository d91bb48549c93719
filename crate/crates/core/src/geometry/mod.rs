//! Block shapes, 6-DoF poses, stacks, and their orthographic silhouettes.
//!
//! World units: a cube has edge 2, so the four grid layers have their
//! centers at z = 1, 3, 5, 7 and grid column `c` (0..4) has its center at
//! x = 2c - 3. Every block's local origin is the center of its bounding box.

pub mod polygon;
mod raster;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use raster::{
    iou, rasterize, rasterize_strict, three_view_iou, Silhouette64, View, ViewIou, SIL_SIZE,
};

/// Maximum number of blocks in a structure (object-token budget).
pub const MAX_BLOCKS: usize = 16;
/// Number of grid layers and columns.
pub const GRID_SIZE: usize = 4;
/// Grid pitch in world units (one cube edge).
pub const CELL: f64 = 2.0;
/// Silhouette resolution in pixels per world unit.
pub const PX_PER_UNIT: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("silhouette views differ: {0} vs {1}")]
    ViewMismatch(View, View),
    #[error("block {block} projects outside the {view} window")]
    BlockOutOfWindow {
        block: usize,
        view: View,
        silhouette: Box<Silhouette64>,
    },
    #[error("malformed silhouette: {0}")]
    Parse(String),
    #[error("unknown block shape `{0}`")]
    UnknownShape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockShape {
    Cube,
    Rectangle,
    LongRectangle,
    Triangle,
}

impl BlockShape {
    /// Count-tuple order: cubes, rectangles, long rectangles, triangles.
    pub const ALL: [BlockShape; 4] = [
        BlockShape::Cube,
        BlockShape::Rectangle,
        BlockShape::LongRectangle,
        BlockShape::Triangle,
    ];

    pub fn index(self) -> usize {
        match self {
            BlockShape::Cube => 0,
            BlockShape::Rectangle => 1,
            BlockShape::LongRectangle => 2,
            BlockShape::Triangle => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// (width along x, depth along y, height along z).
    pub fn extent(self) -> [f64; 3] {
        match self {
            BlockShape::Cube | BlockShape::Triangle => [2.0, 2.0, 2.0],
            BlockShape::Rectangle => [4.0, 2.0, 2.0],
            BlockShape::LongRectangle => [8.0, 2.0, 2.0],
        }
    }

    pub fn width_cells(self) -> usize {
        (self.extent()[0] / CELL).round() as usize
    }

    /// Counter-clockwise cross-section in the local x-z plane.
    pub fn cross_section(self) -> Vec<[f64; 2]> {
        let [w, _, h] = self.extent();
        let (hw, hh) = (w / 2.0, h / 2.0);
        match self {
            BlockShape::Triangle => vec![[-hw, -hh], [hw, -hh], [0.0, hh]],
            _ => vec![[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]],
        }
    }

    pub fn volume(self) -> f64 {
        polygon::area(&self.cross_section()) * self.extent()[1]
    }

    /// Center of mass in the local frame (uniform density).
    pub fn center_of_mass(self) -> Vector3<f64> {
        match self {
            BlockShape::Triangle => Vector3::new(0.0, 0.0, -1.0 / 3.0),
            _ => Vector3::zeros(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockShape::Cube => "cube",
            BlockShape::Rectangle => "rectangle",
            BlockShape::LongRectangle => "long_rectangle",
            BlockShape::Triangle => "triangle",
        }
    }

    fn local_vertices(self) -> Vec<Vector3<f64>> {
        let hd = self.extent()[1] / 2.0;
        let section = self.cross_section();
        let mut out = Vec::with_capacity(section.len() * 2);
        for y in [-hd, hd] {
            for p in &section {
                out.push(Vector3::new(p[0], y, p[1]));
            }
        }
        out
    }
}

impl fmt::Display for BlockShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockShape {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cube" => Ok(BlockShape::Cube),
            "rectangle" => Ok(BlockShape::Rectangle),
            "long_rectangle" => Ok(BlockShape::LongRectangle),
            "triangle" => Ok(BlockShape::Triangle),
            other => Err(GeometryError::UnknownShape(other.to_string())),
        }
    }
}

/// Translation plus exponential-coordinate orientation.
///
/// The rotation vector is kept in the canonical chart `|w| <= pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Pose6 {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

fn canonical_rotation(w: Vector3<f64>) -> Vector3<f64> {
    let theta = w.norm();
    if theta <= PI || !theta.is_finite() {
        return w;
    }
    let mut reduced = theta.rem_euclid(2.0 * PI);
    if reduced > PI {
        reduced -= 2.0 * PI;
    }
    w * (reduced / theta)
}

impl Pose6 {
    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation: canonical_rotation(rotation),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), Vector3::zeros())
    }

    pub fn with_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(Vector3::new(x, y, z), Vector3::new(0.0, 0.0, yaw))
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(a[3], a[4], a[5]),
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (t, w) = (self.translation, self.rotation);
        [t.x, t.y, t.z, w.x, w.y, w.z]
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(self.rotation)
    }

    pub fn from_rotation(translation: Vector3<f64>, rotation: &Rotation3<f64>) -> Self {
        Self::new(translation, log_map(rotation))
    }

    /// Heading of the rotated local x axis in the world x-y plane.
    pub fn yaw(&self) -> f64 {
        let r = self.rotation_matrix();
        r[(1, 0)].atan2(r[(0, 0)])
    }

    /// Angle between the rotated local z axis and world up.
    pub fn tilt(&self) -> f64 {
        let r = self.rotation_matrix();
        r[(2, 2)].clamp(-1.0, 1.0).acos()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl From<[f64; 6]> for Pose6 {
    fn from(a: [f64; 6]) -> Self {
        Self::from_array(a)
    }
}

impl From<Pose6> for [f64; 6] {
    fn from(p: Pose6) -> Self {
        p.to_array()
    }
}

/// Rotation logarithm. Uses atan2 on the skew and symmetric parts so that
/// angles near pi keep full precision.
fn log_map(r: &Rotation3<f64>) -> Vector3<f64> {
    let m = r.matrix();
    let skew = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let s = 0.5 * skew.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < 1e-8 {
        return 0.5 * skew;
    }
    if PI - theta > 1e-4 {
        return skew * (theta / (2.0 * s));
    }
    // Near pi the skew part vanishes; recover the axis from R + I.
    let b = (m + nalgebra::Matrix3::identity()) * 0.5;
    let mut axis = Vector3::new(
        b[(0, 0)].max(0.0).sqrt(),
        b[(1, 1)].max(0.0).sqrt(),
        b[(2, 2)].max(0.0).sqrt(),
    );
    let k = (0..3).max_by(|&i, &j| axis[i].total_cmp(&axis[j])).unwrap();
    for i in 0..3 {
        if i != k {
            axis[i] = b[(i, k)] / axis[k];
        }
    }
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockInstance {
    #[serde(rename = "kind")]
    pub shape: BlockShape,
    pub pose: Pose6,
}

impl BlockInstance {
    pub fn new(shape: BlockShape, pose: Pose6) -> Self {
        Self { shape, pose }
    }

    /// Unrotated block whose bounding-box center sits at (x, y, z).
    pub fn at(shape: BlockShape, x: f64, y: f64, z: f64) -> Self {
        Self::new(shape, Pose6::from_translation(x, y, z))
    }

    /// Convex-hull vertices in the world frame: 8 for boxes, 6 for the
    /// triangular prism.
    pub fn world_vertices(&self) -> Vec<Vector3<f64>> {
        let r = self.pose.rotation_matrix();
        let t = self.pose.translation;
        self.shape
            .local_vertices()
            .into_iter()
            .map(|v| r * v + t)
            .collect()
    }

    pub fn center_of_mass(&self) -> Vector3<f64> {
        self.pose.rotation_matrix() * self.shape.center_of_mass() + self.pose.translation
    }

    /// (min, max) of the world vertices along one axis.
    pub fn extent_along(&self, axis: usize) -> (f64, f64) {
        self.world_vertices()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v[axis]), hi.max(v[axis]))
            })
    }
}

/// Where a stack came from: the scaffold template it was derived from and
/// the blocks removed on the way.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: u64,
    pub parent_id: Option<String>,
    pub removed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stack {
    pub blocks: Vec<BlockInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Provenance>,
}

impl Stack {
    pub fn new(blocks: Vec<BlockInstance>) -> Self {
        Self { blocks, meta: None }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Shape counts in (cube, rectangle, long rectangle, triangle) order.
    pub fn counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for b in &self.blocks {
            counts[b.shape.index()] += 1;
        }
        counts
    }

    pub fn shapes(&self) -> Vec<BlockShape> {
        self.blocks.iter().map(|b| b.shape).collect()
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Stack {
        let shift = Vector3::new(dx, dy, dz);
        Stack {
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    BlockInstance::new(
                        b.shape,
                        Pose6::new(b.pose.translation + shift, b.pose.rotation),
                    )
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    /// Mirror image through the plane x = 0. Block shapes are symmetric
    /// about their local y-z plane, so only translation and yaw change.
    pub fn mirrored_x(&self) -> Stack {
        Stack {
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    let t = b.pose.translation;
                    let w = b.pose.rotation;
                    BlockInstance::new(
                        b.shape,
                        Pose6::new(Vector3::new(-t.x, t.y, t.z), Vector3::new(w.x, -w.y, -w.z)),
                    )
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    /// Highest point over all blocks.
    pub fn top(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.extent_along(2).1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Block counts expanded into a shape list, cubes first.
pub fn shapes_from_counts(counts: [usize; 4]) -> Vec<BlockShape> {
    BlockShape::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&s, n)| std::iter::repeat_n(s, n))
        .collect()
}
