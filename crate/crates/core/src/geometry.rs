//! Analytic planar signed distance fields.
//!
//! Distances are negative strictly inside a shape, zero on its surface and
//! positive outside. A [`SdfScene`] is the hard-min union of its shapes placed
//! under a planar rigid pose; the pose is the uncontrollable configuration of
//! the obstacle and may move from step to step.
//!
//! Scene files are TOML:
//!
//! ```toml
//! pose = { x = 0.0, y = 0.0, yaw = 0.0 }
//! pose_velocity = [0.0, 0.0, 0.0]
//!
//! [[shapes]]
//! type = "circle"
//! center = [1.0, 2.0]
//! radius = 0.3
//!
//! [[shapes]]
//! type = "box"
//! center = [0.0, 0.0]
//! half_extents = [0.5, 0.2]
//! yaw = 0.0
//!
//! [[shapes]]
//! type = "capsule"
//! a = [0.0, 0.0]
//! b = [1.0, 0.0]
//! radius = 0.1
//!
//! [[shapes]]
//! type = "half_plane"
//! normal = [0.0, 1.0]
//! offset = -0.2
//! ```
//!
//! A half-plane with unit `normal` and `offset` has distance `normal . p - offset`,
//! so its interior is `normal . p < offset`. `pose` and `pose_velocity` are optional.

use std::path::Path;

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Planar rigid pose `(x, y, yaw)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn translation(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.yaw)
    }

    /// Maps a local point into the world frame.
    pub fn transform(&self, local: &Point) -> Point {
        self.rotation() * local + self.translation()
    }

    /// Maps a world point into the local frame.
    pub fn inverse_transform(&self, world: &Point) -> Point {
        self.rotation().inverse() * (world - self.translation())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SdfShape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Box {
        center: [f64; 2],
        half_extents: [f64; 2],
        #[serde(default)]
        yaw: f64,
    },
    Capsule {
        a: [f64; 2],
        b: [f64; 2],
        radius: f64,
    },
    HalfPlane {
        normal: [f64; 2],
        offset: f64,
    },
}

fn pt(v: [f64; 2]) -> Point {
    Point::new(v[0], v[1])
}

/// Any unit vector perpendicular to `v`, or `+x` when `v` vanishes.
fn fallback_normal(v: &Point) -> Point {
    let n = v.norm();
    if n > 0.0 {
        Point::new(-v.y, v.x) / n
    } else {
        Point::x()
    }
}

impl SdfShape {
    pub fn circle(center: [f64; 2], radius: f64) -> Result<Self> {
        let s = SdfShape::Circle { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn rect(center: [f64; 2], half_extents: [f64; 2], yaw: f64) -> Result<Self> {
        let s = SdfShape::Box {
            center,
            half_extents,
            yaw,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn capsule(a: [f64; 2], b: [f64; 2], radius: f64) -> Result<Self> {
        let s = SdfShape::Capsule { a, b, radius };
        s.validate()?;
        Ok(s)
    }

    /// The normal is normalized here; a zero normal is rejected.
    pub fn half_plane(normal: [f64; 2], offset: f64) -> Result<Self> {
        let n = pt(normal);
        let len = n.norm();
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidParameter("half-plane normal must be nonzero".into()));
        }
        Ok(SdfShape::HalfPlane {
            normal: [n.x / len, n.y / len],
            offset: offset / len,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match *self {
            SdfShape::Circle { center, radius } => {
                if !finite(&center) || !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("circle needs finite center and radius > 0, got {radius}"));
                }
            }
            SdfShape::Box {
                center,
                half_extents,
                yaw,
            } => {
                if !finite(&center) || !yaw.is_finite() || !half_extents.iter().all(|&h| h > 0.0 && h.is_finite()) {
                    return bad(format!("box needs positive half extents, got {half_extents:?}"));
                }
            }
            SdfShape::Capsule { a, b, radius } => {
                if !finite(&a) || !finite(&b) || !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("capsule needs finite endpoints and radius > 0, got {radius}"));
                }
            }
            SdfShape::HalfPlane { normal, offset } => {
                let len = pt(normal).norm();
                if !offset.is_finite() || (len - 1.0).abs() > 1e-9 {
                    return bad(format!("half-plane normal must be unit length, got norm {len}"));
                }
            }
        }
        Ok(())
    }

    /// Signed distance and its gradient at `p` (shape frame).
    pub fn distance(&self, p: &Point) -> (f64, Point) {
        match *self {
            SdfShape::Circle { center, radius } => {
                let r = p - pt(center);
                let n = r.norm();
                let g = if n > 0.0 { r / n } else { Point::x() };
                (n - radius, g)
            }
            SdfShape::Box {
                center,
                half_extents,
                yaw,
            } => {
                let rot = Rotation2::new(yaw);
                let local = rot.inverse() * (p - pt(center));
                let sx = if local.x < 0.0 { -1.0 } else { 1.0 };
                let sy = if local.y < 0.0 { -1.0 } else { 1.0 };
                let qx = local.x.abs() - half_extents[0];
                let qy = local.y.abs() - half_extents[1];
                let (d, g) = if qx > 0.0 || qy > 0.0 {
                    let m = Point::new(qx.max(0.0), qy.max(0.0));
                    let d = m.norm();
                    (d, Point::new(sx * m.x, sy * m.y) / d)
                } else if qx >= qy {
                    (qx, Point::new(sx, 0.0))
                } else {
                    (qy, Point::new(0.0, sy))
                };
                (d, rot * g)
            }
            SdfShape::Capsule { a, b, radius } => {
                let (a, b) = (pt(a), pt(b));
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 {
                    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let r = p - (a + ab * t);
                let n = r.norm();
                let g = if n > 0.0 { r / n } else { fallback_normal(&ab) };
                (n - radius, g)
            }
            SdfShape::HalfPlane { normal, offset } => {
                let n = pt(normal);
                (n.dot(p) - offset, n)
            }
        }
    }
}

/// Result of a scene query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfQuery {
    pub distance: f64,
    /// World-frame gradient of the distance w.r.t. the query point.
    pub gradient: Point,
    /// Index of the minimizing shape.
    pub shape: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdfScene {
    pub shapes: Vec<SdfShape>,
    #[serde(default)]
    pub pose: Pose2,
    #[serde(default)]
    pub pose_velocity: [f64; 3],
}

impl SdfScene {
    pub fn new(shapes: Vec<SdfShape>) -> Result<Self> {
        let scene = Self {
            shapes,
            pose: Pose2::default(),
            pose_velocity: [0.0; 3],
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn with_pose(mut self, pose: Pose2) -> Self {
        self.pose = pose;
        self
    }

    pub fn with_pose_velocity(mut self, velocity: [f64; 3]) -> Self {
        self.pose_velocity = velocity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::InvalidParameter("scene has no shapes".into()));
        }
        self.shapes.iter().try_for_each(SdfShape::validate)
    }

    /// Distance and gradient of the union at `p`, ties broken by lowest index.
    pub fn query(&self, p: &Point) -> SdfQuery {
        self.query_at(&self.pose, p)
    }

    /// Same as [`query`](Self::query) but with the scene placed at `pose`.
    pub fn query_at(&self, pose: &Pose2, p: &Point) -> SdfQuery {
        let local = pose.inverse_transform(p);
        let mut best = (f64::INFINITY, Point::x(), 0usize);
        for (i, shape) in self.shapes.iter().enumerate() {
            let (d, g) = shape.distance(&local);
            if d < best.0 {
                best = (d, g, i);
            }
        }
        SdfQuery {
            distance: best.0,
            gradient: pose.rotation() * best.1,
            shape: best.2,
        }
    }

    /// Signed distance of every shape at `p`, in shape order.
    pub fn shape_distances(&self, p: &Point) -> Vec<f64> {
        let local = self.pose.inverse_transform(p);
        self.shapes.iter().map(|s| s.distance(&local).0).collect()
    }

    /// Partial derivatives of the distance at `p` w.r.t. the pose `(x, y, yaw)`.
    pub fn jacobian_pose(&self, p: &Point) -> Vector3<f64> {
        self.jacobian_pose_at(&self.pose, p)
    }

    pub fn jacobian_pose_at(&self, pose: &Pose2, p: &Point) -> Vector3<f64> {
        let q = self.query_at(pose, p);
        let lever = p - pose.translation();
        // d/dyaw of R(-yaw)(p - t) is -S R(-yaw)(p - t); expressed in the world frame
        // this gives -grad . perp(p - t).
        let yaw = -(q.gradient.x * -lever.y + q.gradient.y * lever.x);
        Vector3::new(-q.gradient.x, -q.gradient.y, yaw)
    }

    /// Time derivative of the distance at a fixed `p` under `pose_velocity`.
    pub fn distance_rate(&self, p: &Point) -> f64 {
        self.jacobian_pose(p).dot(&Vector3::from(self.pose_velocity))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let scene: SdfScene = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
