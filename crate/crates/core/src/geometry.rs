//! Oriented boxes, rotated IoU, observation angles and canonical frames.
//!
//! Boxes rotate about the vertical (z) axis only. In the box's own frame the
//! length `l` runs along x (the heading), the width `w` along y and the
//! height `h` along z.

use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Oriented 3D bounding box `(x, y, z, w, l, h, yaw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box7 {
    /// Builds a box, normalizing `yaw` into `(-π, π]`.
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            w: size[0],
            l: size[1],
            h: size[2],
            yaw: wrap_angle(yaw),
        }
    }

    /// Like [`Box7::new`] but rejects non-positive or non-finite sizes.
    pub fn try_new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self> {
        let b = Self::new(center, size, yaw);
        if !b.is_valid() {
            return Err(Error::InvalidBox(format!("{b:?}")));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.as_array().iter().all(|v| v.is_finite());
        finite && self.w > 0.0 && self.l > 0.0 && self.h > 0.0 && self.yaw > -PI && self.yaw <= PI
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::new(self.cx, self.cy, self.cz)
    }

    /// `(w, l, h)`
    pub fn size(&self) -> [f64; 3] {
        [self.w, self.l, self.h]
    }

    pub fn with_center(mut self, c: Point3<f64>) -> Self {
        self.cx = c.x;
        self.cy = c.y;
        self.cz = c.z;
        self
    }

    /// `[cx, cy, cz, w, l, h, yaw]`
    pub fn as_array(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.w, self.l, self.h, self.yaw]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }

    /// Footprint corners, counter-clockwise seen from +z.
    fn footprint(&self) -> [Point2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, y)| {
            Point2::new(self.cx + c * x - s * y, self.cy + s * x + c * y)
        })
    }

    /// The eight corners: bottom face counter-clockwise seen from +z, then
    /// the top face in the same order.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let fp = self.footprint();
        let (zb, zt) = (self.cz - self.h / 2.0, self.cz + self.h / 2.0);
        std::array::from_fn(|i| {
            let p = fp[i % 4];
            Point3::new(p.x, p.y, if i < 4 { zb } else { zt })
        })
    }

    /// True when `p` is inside the box or on its boundary.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let q = world_to_box(p, self);
        // tolerance for points placed exactly on a face
        let eps = 1e-9;
        q.x.abs() <= self.l / 2.0 + eps
            && q.y.abs() <= self.w / 2.0 + eps
            && q.z.abs() <= self.h / 2.0 + eps
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }
}

/// Expresses `p` in the frame of `b` (origin at its center, x along its heading).
fn world_to_box(p: &Point3<f64>, b: &Box7) -> Point3<f64> {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (p.x - b.cx, p.y - b.cy);
    Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z - b.cz)
}

/// Unordered set of 3D points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

impl FromIterator<Point3<f64>> for PointCloud {
    fn from_iter<T: IntoIterator<Item = Point3<f64>>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Heading relative to the sensor bearing, stored as `(sin, cos)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationAngle {
    pub sin_a: f64,
    pub cos_a: f64,
}

impl ObservationAngle {
    pub fn from_radians(a: f64) -> Self {
        let (sin_a, cos_a) = a.sin_cos();
        Self { sin_a, cos_a }
    }

    pub fn radians(&self) -> f64 {
        self.sin_a.atan2(self.cos_a)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.sin_a, self.cos_a]
    }
}

/// Signed area of a simple polygon (positive when counter-clockwise).
fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice / 2.0
}

fn cross(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman clip of `subject` against the convex CCW polygon `clip`.
fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect(p: Point2<f64>, q: Point2<f64>, dp: f64, dq: f64) -> Point2<f64> {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Bird's-eye-view intersection area of two boxes' footprints.
pub fn bev_intersection(a: &Box7, b: &Box7) -> f64 {
    let poly = clip_convex(&a.footprint(), &b.footprint());
    polygon_area(&poly).max(0.0)
}

/// Volume intersection-over-union of two oriented boxes.
pub fn iou3d(a: &Box7, b: &Box7) -> f64 {
    let z_lo = (a.cz - a.h / 2.0).max(b.cz - b.h / 2.0);
    let z_hi = (a.cz + a.h / 2.0).min(b.cz + b.h / 2.0);
    let dz = z_hi - z_lo;
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &Box7, b: &Box7) -> f64 {
    (a.center() - b.center()).norm()
}

/// `wrap(yaw - bearing)` where the bearing is the horizontal direction from
/// the sensor to the box center.
pub fn observation_angle(b: &Box7, sensor_origin: &Point3<f64>) -> Result<ObservationAngle> {
    let (dx, dy) = (b.cx - sensor_origin.x, b.cy - sensor_origin.y);
    if dx.hypot(dy) < 1e-9 {
        return Err(Error::DegenerateBearing);
    }
    Ok(ObservationAngle::from_radians(wrap_angle(b.yaw - dy.atan2(dx))))
}

/// Rigid transform about the vertical axis: `p ↦ R(yaw)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawIsometry {
    pub translation: Vector3<f64>,
    pub yaw: f64,
}

impl YawIsometry {
    pub fn new(translation: Vector3<f64>, yaw: f64) -> Self {
        Self { translation, yaw }
    }

    /// Frame whose origin and heading are those of `b`; `apply` maps local
    /// coordinates to world coordinates.
    pub fn of_box(b: &Box7) -> Self {
        Self::new(b.center().coords, b.yaw)
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z) + self.translation
    }

    pub fn apply_inverse(&self, p: &Point3<f64>) -> Point3<f64> {
        let q = p - self.translation;
        let (s, c) = self.yaw.sin_cos();
        Point3::new(c * q.x + s * q.y, -s * q.x + c * q.y, q.z)
    }

    pub fn apply_box(&self, b: &Box7) -> Box7 {
        Box7::new(self.apply(&b.center()).coords.into(), b.size(), b.yaw + self.yaw)
    }

    pub fn apply_box_inverse(&self, b: &Box7) -> Box7 {
        Box7::new(self.apply_inverse(&b.center()).coords.into(), b.size(), b.yaw - self.yaw)
    }
}

/// Translates by `-center(ref_box)` and rotates by `-yaw(ref_box)`.
pub fn to_local_frame(cloud: &PointCloud, ref_box: &Box7) -> PointCloud {
    let iso = YawIsometry::of_box(ref_box);
    cloud.points.iter().map(|p| iso.apply_inverse(p)).collect()
}

/// Inverse of [`to_local_frame`].
pub fn from_local_frame(cloud: &PointCloud, ref_box: &Box7) -> PointCloud {
    let iso = YawIsometry::of_box(ref_box);
    cloud.points.iter().map(|p| iso.apply(p)).collect()
}
