//! Procedural multi-view scenes with exact per-pixel 3D ground truth.
//!
//! A sample is a short video of a static scene: analytic primitives carrying
//! procedural textures, ray-cast from a smooth camera trajectory. Because
//! every frame comes from ray-primitive intersection, the world point behind
//! each pixel is exact, which is what downstream correspondence mining and
//! evaluation lean on.
//!
//! World coordinates are rescaled per sample so the median depth of the
//! first frame is 1.0. The correspondence distance thresholds elsewhere in
//! the crate assume that normalization. After rescaling, coordinates are
//! rounded to f32 so a dataset round trip reproduces them bit for bit.

pub mod dataset;

use crate::geometry::{
    reproject_frame, CameraIntrinsics, GeometryError, PointMap, SE3Pose, Vec3,
};
use ndarray::Array4;
use rand::Rng;
use thiserror::Error;

/// Up direction of the world (+Y points down in camera convention).
pub const WORLD_UP: Vec3 = Vec3 { x: 0.0, y: -1.0, z: 0.0 };

/// Rays must travel at least this far before a hit counts.
const MIN_RAY_T: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene must contain at least one primitive")]
    EmptyScene,
    #[error("{what} must be positive, got {got}")]
    NonPositiveSize { what: &'static str, got: f64 },
    #[error("plane axis must be 0, 1, or 2, got {0}")]
    BadPlaneAxis(usize),
    #[error("trajectory needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("trajectory magnitude is zero, consecutive poses would coincide")]
    ZeroMagnitude,
    #[error("dolly travel {travel:.3} passes too close to the target at distance {dist:.3}")]
    DollyThroughTarget { travel: f64, dist: f64 },
    #[error("camera center of frame {frame} is inside a primitive")]
    CameraInsidePrimitive { frame: usize },
    #[error("first frame sees no geometry, cannot normalize world scale")]
    EmptyFirstFrame,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Procedural albedo sampled at a world point; all colors are RGB in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// 3D checkerboard with the given world-space period.
    Checker { period: f64, color_a: [f64; 3], color_b: [f64; 3] },
    /// Linear color ramp along a world direction, saturating over `span`.
    Gradient { dir: Vec3, span: f64, color_a: [f64; 3], color_b: [f64; 3] },
    /// Trilinear lattice noise; `scale` is the coarsest cell size in world
    /// units, halving per octave.
    ValueNoise { scale: f64, octaves: u32, color_a: [f64; 3], color_b: [f64; 3] },
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Hash of a lattice cell to [0, 1), stable across platforms.
fn lattice_hash(seed: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice_noise(p: Vec3, seed: u64) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (smoothstep(p.x - fx), smoothstep(p.y - fy), smoothstep(p.z - fz));
    let mut corners = [0.0; 8];
    for (c, v) in corners.iter_mut().enumerate() {
        let (dx, dy, dz) = ((c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64);
        *v = lattice_hash(seed, ix + dx, iy + dy, iz + dz);
    }
    let x00 = corners[0] + (corners[1] - corners[0]) * tx;
    let x10 = corners[2] + (corners[3] - corners[2]) * tx;
    let x01 = corners[4] + (corners[5] - corners[4]) * tx;
    let x11 = corners[6] + (corners[7] - corners[6]) * tx;
    let y0 = x00 + (x10 - x00) * ty;
    let y1 = x01 + (x11 - x01) * ty;
    y0 + (y1 - y0) * tz
}

fn value_noise(p: Vec3, scale: f64, octaves: u32, seed: u64) -> f64 {
    let mut amp = 1.0;
    let mut freq = 1.0 / scale;
    let (mut sum, mut norm) = (0.0, 0.0);
    for o in 0..octaves {
        sum += amp * lattice_noise(p.scale(freq), seed.wrapping_add(o as u64));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

impl Texture {
    fn validate(&self) -> Result<(), SceneError> {
        let check = |what, got: f64| {
            if got > 0.0 {
                Ok(())
            } else {
                Err(SceneError::NonPositiveSize { what, got })
            }
        };
        match self {
            Texture::Checker { period, .. } => check("checker period", *period),
            Texture::Gradient { span, .. } => check("gradient span", *span),
            Texture::ValueNoise { scale, octaves, .. } => {
                check("noise scale", *scale)?;
                check("noise octaves", *octaves as f64)
            }
        }
    }

    fn sample(&self, p: Vec3, seed: u64) -> [f64; 3] {
        match self {
            Texture::Checker { period, color_a, color_b } => {
                let cell = (p.x / period).floor() + (p.y / period).floor() + (p.z / period).floor();
                if (cell as i64).rem_euclid(2) == 0 {
                    *color_a
                } else {
                    *color_b
                }
            }
            Texture::Gradient { dir, span, color_a, color_b } => {
                let t = (p.dot(dir.normalized()) / span + 0.5).clamp(0.0, 1.0);
                lerp3(*color_a, *color_b, t)
            }
            Texture::ValueNoise { scale, octaves, color_a, color_b } => {
                lerp3(*color_a, *color_b, value_noise(p, *scale, *octaves, seed))
            }
        }
    }
}

/// Analytic shape. Everything is axis-aligned so intersections stay exact
/// and cheap; orientation variety comes from the camera trajectory instead.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Finite rectangle with normal along `axis`, at coordinate `offset`.
    /// `center`/`half` live in the two remaining axes, in ascending order.
    Plane { axis: usize, offset: f64, center: [f64; 2], half: [f64; 2] },
    Sphere { center: Vec3, radius: f64 },
    Cuboid { center: Vec3, half: Vec3 },
}

fn axis_get(p: Vec3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl Primitive {
    fn validate(&self) -> Result<(), SceneError> {
        let check = |what, got: f64| {
            if got > 0.0 {
                Ok(())
            } else {
                Err(SceneError::NonPositiveSize { what, got })
            }
        };
        match self {
            Primitive::Plane { axis, half, .. } => {
                if *axis > 2 {
                    return Err(SceneError::BadPlaneAxis(*axis));
                }
                check("plane half extent", half[0])?;
                check("plane half extent", half[1])
            }
            Primitive::Sphere { radius, .. } => check("sphere radius", *radius),
            Primitive::Cuboid { half, .. } => {
                check("cuboid half extent", half.x)?;
                check("cuboid half extent", half.y)?;
                check("cuboid half extent", half.z)
            }
        }
    }

    /// Smallest ray parameter t > MIN_RAY_T hitting the shape, if any.
    /// `dir` need not be normalized.
    fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match self {
            Primitive::Plane { axis, offset, center, half } => {
                let d = axis_get(dir, *axis);
                if d.abs() < 1e-12 {
                    return None;
                }
                let t = (offset - axis_get(origin, *axis)) / d;
                if t <= MIN_RAY_T {
                    return None;
                }
                let p = origin + dir.scale(t);
                let (a1, a2) = match axis {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let in_rect = (axis_get(p, a1) - center[0]).abs() <= half[0]
                    && (axis_get(p, a2) - center[1]).abs() <= half[1];
                in_rect.then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - *center;
                let a = dir.norm_sq();
                let b = 2.0 * oc.dot(dir);
                let c = oc.norm_sq() - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                (t > MIN_RAY_T).then_some(t)
            }
            Primitive::Cuboid { center, half } => {
                let (mut tmin, mut tmax) = (MIN_RAY_T, f64::INFINITY);
                for axis in 0..3 {
                    let o = axis_get(origin, axis) - axis_get(*center, axis);
                    let d = axis_get(dir, axis);
                    let hf = axis_get(Vec3::new(half.x, half.y, half.z), axis);
                    if d.abs() < 1e-12 {
                        if o.abs() > hf {
                            return None;
                        }
                        continue;
                    }
                    let (t1, t2) = ((-hf - o) / d, (hf - o) / d);
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    tmin = tmin.max(lo);
                    tmax = tmax.min(hi);
                    if tmin > tmax {
                        return None;
                    }
                }
                (tmin > MIN_RAY_T).then_some(tmin)
            }
        }
    }

    /// Whether a point lies inside (or on) the shape. Planes have no
    /// interior.
    fn contains(&self, p: Vec3) -> bool {
        match self {
            Primitive::Plane { .. } => false,
            Primitive::Sphere { center, radius } => (p - *center).norm_sq() <= radius * radius,
            Primitive::Cuboid { center, half } => {
                (p.x - center.x).abs() <= half.x
                    && (p.y - center.y).abs() <= half.y
                    && (p.z - center.z).abs() <= half.z
            }
        }
    }
}

/// A shape with its albedo texture.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub shape: Primitive,
    pub texture: Texture,
}

/// Static scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Surface>,
    /// Color of rays that hit nothing.
    pub background: [f64; 3],
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.primitives.is_empty() {
            return Err(SceneError::EmptyScene);
        }
        for s in &self.primitives {
            s.shape.validate()?;
            s.texture.validate()?;
        }
        Ok(())
    }
}

/// Camera path families. Magnitudes are total travel over the clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    /// Rotate about the vertical axis through the target.
    Orbit { span_rad: f64 },
    /// Translate along the initial viewing axis (positive = toward target).
    Dolly { travel: f64 },
    /// Translate along the initial right axis with orientation held fixed,
    /// so the image of a fronto-parallel plane shifts uniformly.
    Truck { travel: f64 },
    /// Orbit combined with a linear vertical offset of the eye.
    Arc { span_rad: f64, lift: f64 },
}

/// A camera path: `frames` poses derived from an initial eye and a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub eye: Vec3,
    pub target: Vec3,
}

impl TrajectorySpec {
    pub fn poses(&self) -> Result<Vec<SE3Pose>, SceneError> {
        if self.frames < 2 {
            return Err(SceneError::TooFewFrames(self.frames));
        }
        let zero = match self.kind {
            TrajectoryKind::Orbit { span_rad } => span_rad == 0.0,
            TrajectoryKind::Dolly { travel } => travel == 0.0,
            TrajectoryKind::Truck { travel } => travel == 0.0,
            TrajectoryKind::Arc { span_rad, lift } => span_rad == 0.0 && lift == 0.0,
        };
        if zero {
            return Err(SceneError::ZeroMagnitude);
        }
        let n = self.frames;
        let frac = |i: usize| i as f64 / (n - 1) as f64;
        let mut poses = Vec::with_capacity(n);
        match self.kind {
            TrajectoryKind::Orbit { span_rad } => {
                for i in 0..n {
                    let eye = orbit_eye(self.eye, self.target, span_rad * (frac(i) - 0.5), 0.0);
                    poses.push(SE3Pose::look_at(eye, self.target, WORLD_UP)?);
                }
            }
            TrajectoryKind::Dolly { travel } => {
                let to_target = self.target - self.eye;
                let dist = to_target.norm();
                if travel >= 0.9 * dist {
                    return Err(SceneError::DollyThroughTarget { travel, dist });
                }
                let dir = to_target.normalized();
                for i in 0..n {
                    let eye = self.eye + dir.scale(travel * frac(i));
                    poses.push(SE3Pose::look_at(eye, self.target, WORLD_UP)?);
                }
            }
            TrajectoryKind::Truck { travel } => {
                let base = SE3Pose::look_at(self.eye, self.target, WORLD_UP)?;
                let right = base.rotate_to_world(Vec3::new(1.0, 0.0, 0.0));
                for i in 0..n {
                    let eye = self.eye + right.scale(travel * frac(i));
                    // Same rotation, translated center: t = -R * eye.
                    let mut t = [0.0; 3];
                    let e = [eye.x, eye.y, eye.z];
                    for (ti, row) in t.iter_mut().zip(base.r.iter()) {
                        *ti = -(row[0] * e[0] + row[1] * e[1] + row[2] * e[2]);
                    }
                    poses.push(SE3Pose { r: base.r, t });
                }
            }
            TrajectoryKind::Arc { span_rad, lift } => {
                for i in 0..n {
                    let f = frac(i);
                    let eye = orbit_eye(self.eye, self.target, span_rad * (f - 0.5), lift * (f - 0.5));
                    poses.push(SE3Pose::look_at(eye, self.target, WORLD_UP)?);
                }
            }
        }
        Ok(poses)
    }
}

/// Eye rotated about the vertical axis through `target` by `angle`, then
/// shifted vertically by `lift` (negative y is up).
fn orbit_eye(eye: Vec3, target: Vec3, angle: f64, lift: f64) -> Vec3 {
    let off = eye - target;
    let (s, c) = angle.sin_cos();
    Vec3::new(
        target.x + off.x * c + off.z * s,
        target.y + off.y + lift,
        target.z - off.x * s + off.z * c,
    )
}

/// One frame's camera: world-to-camera pose plus pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub pose: SE3Pose,
    pub intr: CameraIntrinsics,
}

/// A rendered clip with exact geometry labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// (N, 3, H, W) RGB in [0, 1].
    pub frames: Array4<f32>,
    pub cameras: Vec<CameraFrame>,
    pub pointmaps: Vec<PointMap>,
    pub caption: Option<String>,
}

impl VideoSample {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }
}

/// Render a trajectory over a scene. Deterministic in all arguments; `seed`
/// drives the procedural textures only.
pub fn render(
    scene: &SceneSpec,
    traj: &TrajectorySpec,
    intr: &CameraIntrinsics,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<VideoSample, SceneError> {
    render_poses(scene, &traj.poses()?, intr, height, width, seed)
}

/// Render an explicit pose list (also the path for static or replayed
/// cameras that [`TrajectorySpec`] cannot express).
pub fn render_poses(
    scene: &SceneSpec,
    poses: &[SE3Pose],
    intr: &CameraIntrinsics,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<VideoSample, SceneError> {
    scene.validate()?;
    for (frame, pose) in poses.iter().enumerate() {
        let c = pose.center();
        if scene.primitives.iter().any(|s| s.shape.contains(c)) {
            return Err(SceneError::CameraInsidePrimitive { frame });
        }
    }

    let n = poses.len();
    let mut frames = Array4::<f32>::zeros((n, 3, height, width));
    let mut pointmaps = Vec::with_capacity(n);
    for (fi, pose) in poses.iter().enumerate() {
        let eye = pose.center();
        let mut pm = PointMap::invalid(height, width);
        for row in 0..height {
            for col in 0..width {
                let dir_cam = Vec3::new(
                    (col as f64 - intr.cx) / intr.fx,
                    (row as f64 - intr.cy) / intr.fy,
                    1.0,
                );
                let dir = pose.rotate_to_world(dir_cam);
                let mut best: Option<(f64, usize)> = None;
                for (pi, s) in scene.primitives.iter().enumerate() {
                    if let Some(t) = s.shape.intersect(eye, dir) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, pi));
                        }
                    }
                }
                let rgb = match best {
                    Some((t, pi)) => {
                        let p = eye + dir.scale(t);
                        pm.set(row, col, p);
                        // Per-primitive seed so identical textures decorrelate.
                        scene.primitives[pi].texture.sample(p, seed ^ (pi as u64).wrapping_mul(0x9E37_79B9))
                    }
                    None => scene.background,
                };
                for (ch, v) in rgb.iter().enumerate() {
                    frames[(fi, ch, row, col)] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        pointmaps.push(pm);
    }

    // Rescale the world so the first frame's median depth is 1, then snap
    // coordinates to f32 so storage round-trips bitwise.
    let mut depths: Vec<f64> = Vec::new();
    let pm0 = &pointmaps[0];
    for row in 0..height {
        for col in 0..width {
            if let Some(p) = pm0.get(row, col) {
                depths.push(poses[0].transform(p).z);
            }
        }
    }
    if depths.is_empty() {
        return Err(SceneError::EmptyFirstFrame);
    }
    depths.sort_by(f64::total_cmp);
    let median = if depths.len() % 2 == 1 {
        depths[depths.len() / 2]
    } else {
        0.5 * (depths[depths.len() / 2 - 1] + depths[depths.len() / 2])
    };
    let scale = 1.0 / median;
    for pm in &mut pointmaps {
        pm.points.mapv_inplace(|v| (v * scale) as f32 as f64);
    }
    let cameras = poses
        .iter()
        .map(|p| CameraFrame {
            pose: SE3Pose {
                r: p.r,
                t: [p.t[0] * scale, p.t[1] * scale, p.t[2] * scale],
            },
            intr: *intr,
        })
        .collect();

    Ok(VideoSample { frames, cameras, pointmaps, caption: None })
}

/// Ground-truth matches for `pixels` (u, v) of frame `a` in frame `b`:
/// reprojected (u', v') plus a validity flag covering missing geometry,
/// out-of-frame reprojection, and occlusion in `b`.
pub fn gt_correspondences(
    sample: &VideoSample,
    a: usize,
    b: usize,
    pixels: &[(usize, usize)],
) -> Vec<(f64, f64, bool)> {
    let cam_b = &sample.cameras[b];
    let wf = reproject_frame(&sample.pointmaps[a], &cam_b.pose, &cam_b.intr, &sample.pointmaps[b]);
    pixels
        .iter()
        .map(|&(u, v)| (wf.coords[[v, u, 0]], wf.coords[[v, u, 1]], wf.valid[[v, u]]))
        .collect()
}

fn sample_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

/// Two colors far enough apart that the texture produces visible structure.
fn sample_color_pair(rng: &mut impl Rng) -> ([f64; 3], [f64; 3]) {
    let a = sample_color(rng);
    let b = [
        (1.0 - a[0]).clamp(0.05, 0.95) + rng.random_range(-0.05..0.05),
        (1.0 - a[1]).clamp(0.05, 0.95) + rng.random_range(-0.05..0.05),
        (1.0 - a[2]).clamp(0.05, 0.95) + rng.random_range(-0.05..0.05),
    ];
    (a, b)
}

fn sample_texture(rng: &mut impl Rng) -> Texture {
    let (color_a, color_b) = sample_color_pair(rng);
    match rng.random_range(0..3u32) {
        // Periods keep the projected checker period comfortably above 4 px
        // at the working depths (around 0.13 world units per 4 px).
        0 => Texture::Checker { period: rng.random_range(0.25..0.6), color_a, color_b },
        1 => {
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let dir = if dir.norm() < 1e-3 { Vec3::new(1.0, 0.0, 0.0) } else { dir };
            Texture::Gradient { dir, span: rng.random_range(0.8..2.0), color_a, color_b }
        }
        _ => Texture::ValueNoise {
            scale: rng.random_range(0.3..0.8),
            octaves: rng.random_range(2..4),
            color_a,
            color_b,
        },
    }
}

/// Scene center the samplers build around.
const SCENE_TARGET: Vec3 = Vec3 { x: 0.0, y: 0.05, z: 2.0 };
const GROUND_Y: f64 = 0.85;

/// Random cluttered scene: ground plane, back wall, and 1-3 floating
/// objects near [`SCENE_TARGET`].
pub fn sample_scene(rng: &mut impl Rng) -> SceneSpec {
    let mut primitives = vec![
        Surface {
            shape: Primitive::Plane {
                axis: 1,
                offset: GROUND_Y,
                center: [0.0, 2.2],
                half: [5.0, 5.0],
            },
            texture: sample_texture(rng),
        },
        Surface {
            shape: Primitive::Plane {
                axis: 2,
                offset: rng.random_range(3.8..4.6),
                center: [0.0, 0.0],
                half: [5.0, 3.0],
            },
            texture: sample_texture(rng),
        },
    ];
    for _ in 0..rng.random_range(1..=3u32) {
        let x = rng.random_range(-0.6..0.6);
        let z = rng.random_range(1.6..2.5);
        let shape = if rng.random_bool(0.5) {
            let radius = rng.random_range(0.25..0.45);
            let y = GROUND_Y - radius - rng.random_range(0.0..0.35);
            Primitive::Sphere { center: Vec3::new(x, y, z), radius }
        } else {
            let half = Vec3::new(
                rng.random_range(0.18..0.4),
                rng.random_range(0.18..0.4),
                rng.random_range(0.18..0.4),
            );
            let y = GROUND_Y - half.y - rng.random_range(0.0..0.3);
            Primitive::Cuboid { center: Vec3::new(x, y, z), half }
        };
        primitives.push(Surface { shape, texture: sample_texture(rng) });
    }
    SceneSpec { primitives, background: sample_color(rng) }
}

/// Random camera path looking at [`SCENE_TARGET`] from the front hemisphere.
pub fn sample_trajectory(rng: &mut impl Rng, frames: usize) -> TrajectorySpec {
    let az = rng.random_range(-0.5..0.5f64);
    let el = rng.random_range(0.08..0.4f64);
    let d = rng.random_range(1.7..2.4);
    let eye = Vec3::new(
        SCENE_TARGET.x + d * az.sin() * el.cos(),
        SCENE_TARGET.y - d * el.sin(),
        SCENE_TARGET.z - d * az.cos() * el.cos(),
    );
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let kind = match rng.random_range(0..4u32) {
        0 => TrajectoryKind::Orbit { span_rad: sign * rng.random_range(0.35..0.9) },
        1 => TrajectoryKind::Dolly { travel: rng.random_range(0.35..0.7) },
        2 => TrajectoryKind::Truck { travel: sign * rng.random_range(0.3..0.6) },
        _ => TrajectoryKind::Arc {
            span_rad: sign * rng.random_range(0.3..0.7),
            lift: rng.random_range(-0.3..0.3),
        },
    };
    TrajectorySpec { kind, frames, eye, target: SCENE_TARGET }
}

#[cfg(test)]
mod tests;
