//! Camera geometry: rigid poses, pinhole projection, point maps.
//!
//! Conventions used throughout the crate:
//! * camera frame: +Z forward, +X right, +Y down;
//! * poses are world-to-camera maps `p_cam = R p_world + t`;
//! * pixel coordinates are continuous, `(u, v)` = (column, row), with the
//!   center of the top-left pixel at `(0, 0)`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below this is treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("look-at direction is degenerate (forward parallel to up hint)")]
    DegenerateLookAt,
    #[error("point map shape mismatch: points {points:?} vs mask {mask:?}")]
    PointMapShape { points: Vec<usize>, mask: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// World-to-camera rigid transform. Rows of `r` are the camera axes
/// expressed in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Pose {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl SE3Pose {
    pub fn identity() -> Self {
        SE3Pose {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    /// Camera at `eye` looking at `target`. `up` is a world-space up hint;
    /// the camera +Y axis points opposite to it (image rows grow downward).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let fwd = target - eye;
        if fwd.norm() < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let fwd = fwd.normalized();
        let right = fwd.cross(up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let right = right.normalized();
        let down = fwd.cross(right);
        let r = [
            [right.x, right.y, right.z],
            [down.x, down.y, down.z],
            [fwd.x, fwd.y, fwd.z],
        ];
        let rot = SE3Pose { r, t: [0.0; 3] };
        let rt = rot.apply_rotation(eye);
        Ok(SE3Pose { r, t: [-rt.x, -rt.y, -rt.z] })
    }

    fn apply_rotation(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            self.r[0][0] * p.x + self.r[0][1] * p.y + self.r[0][2] * p.z,
            self.r[1][0] * p.x + self.r[1][1] * p.y + self.r[1][2] * p.z,
            self.r[2][0] * p.x + self.r[2][1] * p.y + self.r[2][2] * p.z,
        )
    }

    /// World point to camera frame.
    pub fn transform(&self, p: Vec3) -> Vec3 {
        let rp = self.apply_rotation(p);
        Vec3::new(rp.x + self.t[0], rp.y + self.t[1], rp.z + self.t[2])
    }

    /// Camera-frame point back to world.
    pub fn transform_inverse(&self, p: Vec3) -> Vec3 {
        let d = Vec3::new(p.x - self.t[0], p.y - self.t[1], p.z - self.t[2]);
        self.rotate_to_world(d)
    }

    /// Rotate a camera-frame direction into world frame (R^T d).
    pub fn rotate_to_world(&self, d: Vec3) -> Vec3 {
        Vec3::new(
            self.r[0][0] * d.x + self.r[1][0] * d.y + self.r[2][0] * d.z,
            self.r[0][1] * d.x + self.r[1][1] * d.y + self.r[2][1] * d.z,
            self.r[0][2] * d.x + self.r[1][2] * d.y + self.r[2][2] * d.z,
        )
    }

    /// Camera center in world coordinates (-R^T t).
    pub fn center(&self) -> Vec3 {
        self.rotate_to_world(Vec3::new(-self.t[0], -self.t[1], -self.t[2]))
    }

    pub fn inverse(&self) -> SE3Pose {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.r[j][i];
            }
        }
        let c = self.center();
        SE3Pose { r, t: [c.x, c.y, c.z] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Symmetric pinhole for a W x H image with the given horizontal FOV.
    pub fn from_fov(width: usize, height: usize, fov_x_rad: f64) -> Self {
        let fx = width as f64 / (2.0 * (fov_x_rad / 2.0).tan());
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }
}

/// Projection of a world point into a camera: pixel coordinates plus depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Project a world point; `None` when the point is at or behind the camera.
pub fn project(p: Vec3, pose: &SE3Pose, k: &CameraIntrinsics) -> Option<Projected> {
    let c = pose.transform(p);
    if c.z < MIN_DEPTH {
        return None;
    }
    Some(Projected {
        u: k.fx * c.x / c.z + k.cx,
        v: k.fy * c.y / c.z + k.cy,
        depth: c.z,
    })
}

/// Inverse of [`project`]: pixel plus camera-frame depth to a world point.
pub fn unproject(u: f64, v: f64, depth: f64, pose: &SE3Pose, k: &CameraIntrinsics) -> Vec3 {
    let cam = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    pose.transform_inverse(cam)
}

/// Squared Euclidean distances between two point lists, shape (|a|, |b|).
pub fn pairwise_sq_dist(a: &[Vec3], b: &[Vec3]) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            out[[i, j]] = (*pa - *pb).norm_sq();
        }
    }
    out
}

/// Dense per-pixel world points for one frame plus a validity mask
/// (false where the pixel saw no surface).
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    /// (H, W, 3) world coordinates; undefined where `valid` is false.
    pub points: Array3<f64>,
    pub valid: Array2<bool>,
}

impl PointMap {
    pub fn new(points: Array3<f64>, valid: Array2<bool>) -> Result<Self, GeometryError> {
        let ps = points.shape().to_vec();
        let ms = valid.shape().to_vec();
        if ps.len() != 3 || ps[2] != 3 || ps[0] != ms[0] || ps[1] != ms[1] {
            return Err(GeometryError::PointMapShape { points: ps, mask: ms });
        }
        Ok(PointMap { points, valid })
    }

    pub fn invalid(height: usize, width: usize) -> Self {
        PointMap {
            points: Array3::zeros((height, width, 3)),
            valid: Array2::from_elem((height, width), false),
        }
    }

    pub fn height(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Vec3> {
        if self.valid[[row, col]] {
            Some(Vec3::new(
                self.points[[row, col, 0]],
                self.points[[row, col, 1]],
                self.points[[row, col, 2]],
            ))
        } else {
            None
        }
    }

    pub fn set(&mut self, row: usize, col: usize, p: Vec3) {
        self.points[[row, col, 0]] = p.x;
        self.points[[row, col, 1]] = p.y;
        self.points[[row, col, 2]] = p.z;
        self.valid[[row, col]] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Dense warp from source pixels into a destination camera.
///
/// `coords` is (H, W, 2) holding (u, v) in the destination image; `valid`
/// marks source pixels whose world point projects in-bounds, in front of the
/// destination camera, and unoccluded there.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub coords: Array3<f64>,
    pub valid: Array2<bool>,
}

/// Relative depth slack before a reprojected point counts as occluded.
pub const OCCLUSION_REL_TOL: f64 = 0.01;

/// Reproject every valid source pixel into the destination camera.
///
/// Occlusion is decided against the destination point map: if the
/// destination pixel nearest to the reprojection sees a surface more than
/// [`OCCLUSION_REL_TOL`] relatively closer than the reprojected depth, the
/// source pixel is marked occluded.
pub fn reproject_frame(
    src_points: &PointMap,
    dst_pose: &SE3Pose,
    k: &CameraIntrinsics,
    dst_points: &PointMap,
) -> WarpField {
    let (h, w) = (src_points.height(), src_points.width());
    let mut coords = Array3::zeros((h, w, 2));
    let mut valid = Array2::from_elem((h, w), false);
    for row in 0..h {
        for col in 0..w {
            let Some(p) = src_points.get(row, col) else { continue };
            let Some(proj) = project(p, dst_pose, k) else { continue };
            if proj.u < 0.0 || proj.u > (w - 1) as f64 || proj.v < 0.0 || proj.v > (h - 1) as f64 {
                continue;
            }
            let nu = proj.u.round() as usize;
            let nv = proj.v.round() as usize;
            if let Some(q) = dst_points.get(nv, nu) {
                let dst_depth = dst_pose.transform(q).z;
                if dst_depth > MIN_DEPTH
                    && (proj.depth - dst_depth) / dst_depth > OCCLUSION_REL_TOL
                {
                    continue;
                }
            }
            coords[[row, col, 0]] = proj.u;
            coords[[row, col, 1]] = proj.v;
            valid[[row, col]] = true;
        }
    }
    WarpField { coords, valid }
}
