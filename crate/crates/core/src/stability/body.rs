use nalgebra::Vector3;

use crate::geometry::polygon::{self, Point2};
use crate::geometry::{BlockInstance, BlockShape, Pose6};

/// An upright view of a posed block: roll and pitch are levelled away and
/// only the heading is kept. All physics runs on this representation.
#[derive(Debug, Clone)]
pub(crate) struct Body {
    pub shape: BlockShape,
    pub center: Vector3<f64>,
    pub yaw: f64,
    pub footprint: Vec<Point2>,
}

impl Body {
    pub fn from_block(block: &BlockInstance) -> Self {
        Self::upright(block.shape, block.pose.translation, block.pose.yaw())
    }

    pub fn upright(shape: BlockShape, center: Vector3<f64>, yaw: f64) -> Self {
        let [w, d, _] = shape.extent();
        let (c, s) = (yaw.cos(), yaw.sin());
        let corners = [
            [-w / 2.0, -d / 2.0],
            [w / 2.0, -d / 2.0],
            [w / 2.0, d / 2.0],
            [-w / 2.0, d / 2.0],
        ];
        let footprint = corners
            .iter()
            .map(|p| {
                [
                    center.x + c * p[0] - s * p[1],
                    center.y + s * p[0] + c * p[1],
                ]
            })
            .collect();
        Self {
            shape,
            center,
            yaw,
            footprint,
        }
    }

    pub fn half_height(&self) -> f64 {
        self.shape.extent()[2] / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.center.z - self.half_height()
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.half_height()
    }

    pub fn with_center_z(&self, z: f64) -> Self {
        let mut b = self.clone();
        b.center.z = z;
        b
    }

    /// World direction of the local x axis in the horizontal plane.
    pub fn axis_x(&self) -> [f64; 2] {
        [self.yaw.cos(), self.yaw.sin()]
    }

    pub fn local_x(&self, p: Point2) -> f64 {
        let a = self.axis_x();
        (p[0] - self.center.x) * a[0] + (p[1] - self.center.y) * a[1]
    }

    pub fn mass(&self) -> f64 {
        self.shape.volume()
    }

    pub fn center_of_mass(&self) -> Vector3<f64> {
        self.center + self.shape.center_of_mass()
    }

    /// Highest point of this body's upper surface over a horizontal region.
    pub fn support_height(&self, region: &[Point2]) -> f64 {
        match self.shape {
            BlockShape::Triangle => self.top() - 2.0 * self.min_abs_local_x(region),
            _ => self.top(),
        }
    }

    /// Smallest |local x| over a convex region (zero when the region
    /// straddles the ridge line).
    pub fn min_abs_local_x(&self, region: &[Point2]) -> f64 {
        let (lo, hi) = region
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                let lx = self.local_x(p);
                (lo.min(lx), hi.max(lx))
            });
        if lo <= 0.0 && hi >= 0.0 {
            0.0
        } else {
            lo.abs().min(hi.abs())
        }
    }

    /// End points of a triangle's ridge (its apex edge) in the x-y plane.
    pub fn ridge(&self) -> (Point2, Point2) {
        let hd = self.shape.extent()[1] / 2.0;
        let [ax, ay] = self.axis_x();
        let (ny, nx) = (ax, -ay);
        (
            [self.center.x - nx * hd, self.center.y - ny * hd],
            [self.center.x + nx * hd, self.center.y + ny * hd],
        )
    }

    pub fn footprint_overlap(&self, other: &Body) -> Vec<Point2> {
        polygon::clip_convex(&self.footprint, &other.footprint)
    }

    pub fn to_block(&self) -> BlockInstance {
        BlockInstance::new(
            self.shape,
            Pose6::with_yaw(self.center.x, self.center.y, self.center.z, self.yaw),
        )
    }
}
