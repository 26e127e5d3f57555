//! Camera poses on a viewing sphere, unit quaternions and Slerp trajectories.
//!
//! Conventions: `y` is the vertical axis. A pose at azimuth `a`, elevation `e`
//! and radius `r` places the camera at `r * (cos e sin a, sin e, cos e cos a)`
//! looking at the origin. Its orientation quaternion is `R_y(a) * R_x(-e)`,
//! which maps `+z` onto the unit direction from the origin to the camera.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dot-product threshold above which Slerp falls back to normalized lerp.
pub const SLERP_LINEAR_THRESHOLD: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned unchanged.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotates a 3-vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        let r = *self * p * self.conjugate();
        [r.x, r.y, r.z]
    }

    /// Geodesic angle in `[0, pi]` of the rotation taking `self` to `other`,
    /// insensitive to the quaternion double cover.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let rel = self.conjugate() * *other;
        let v = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
        2.0 * v.atan2(rel.w.abs())
    }

    /// 3x3 rotation matrix, row-major.
    pub fn to_rotation_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Spherical linear interpolation along the shortest arc.
///
/// `q1` is negated when `dot(q0, q1) < 0`; nearly parallel inputs use
/// normalized linear interpolation.
pub fn slerp(q0: &Quaternion, q1: &Quaternion, tau: f64) -> Quaternion {
    let mut end = *q1;
    let mut cos = q0.dot(q1);
    if cos < 0.0 {
        end = -end;
        cos = -cos;
    }
    let (a, b) = if cos > SLERP_LINEAR_THRESHOLD {
        (1.0 - tau, tau)
    } else {
        let theta = cos.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - tau) * theta).sin() / s, (tau * theta).sin() / s)
    };
    Quaternion::new(
        a * q0.w + b * end.w,
        a * q0.x + b * end.x,
        a * q0.y + b * end.y,
        a * q0.z + b * end.z,
    )
    .normalized()
}

/// `frames` orientations at `tau = f / (frames - 1)`, `f = 0..frames`.
pub fn slerp_path(q0: &Quaternion, q1: &Quaternion, frames: usize) -> Vec<Quaternion> {
    match frames {
        0 => Vec::new(),
        1 => vec![*q0],
        n => (0..n).map(|f| slerp(q0, q1, f as f64 / (n - 1) as f64)).collect(),
    }
}

/// Camera on a sphere around the origin. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", try_from = "PoseRecord")]
pub struct CameraPose {
    azimuth: f64,
    elevation: f64,
    radius: f64,
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64, radius: f64) -> Result<Self, GeometryError> {
        if !(azimuth.is_finite() && elevation.is_finite() && radius.is_finite()) {
            return Err(GeometryError::InvalidArgument("pose components must be finite".into()));
        }
        if radius <= 0.0 {
            return Err(GeometryError::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&elevation) {
            return Err(GeometryError::InvalidArgument(format!(
                "elevation {elevation} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self { azimuth: wrap_angle(azimuth), elevation, radius })
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Result<Self, GeometryError> {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians(), radius)
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Unit vector from the origin towards the camera.
    pub fn direction(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ce * sa, se, ce * ca]
    }

    pub fn position(&self) -> [f64; 3] {
        let d = self.direction();
        [d[0] * self.radius, d[1] * self.radius, d[2] * self.radius]
    }

    /// Recovers azimuth and elevation from the direction `q` maps `+z` onto.
    pub fn from_orientation(q: &Quaternion, radius: f64) -> Result<Self, GeometryError> {
        let d = q.rotate([0.0, 0.0, 1.0]);
        let elevation = d[1].clamp(-1.0, 1.0).asin();
        let azimuth = d[0].atan2(d[2]);
        Self::new(azimuth, elevation, radius)
    }
}

/// Serialized pose: degrees in files, radians in memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
}

impl From<CameraPose> for PoseRecord {
    fn from(p: CameraPose) -> Self {
        Self {
            azimuth_deg: p.azimuth.to_degrees(),
            elevation_deg: p.elevation.to_degrees(),
            radius: p.radius,
        }
    }
}

impl TryFrom<PoseRecord> for CameraPose {
    type Error = GeometryError;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        CameraPose::from_degrees(r.azimuth_deg, r.elevation_deg, r.radius)
    }
}

/// Orientation `R_y(azimuth) * R_x(-elevation)`.
pub fn quat_from_pose(p: &CameraPose) -> Quaternion {
    let yaw = Quaternion::from_axis_angle([0.0, 1.0, 0.0], p.azimuth);
    let pitch = Quaternion::from_axis_angle([1.0, 0.0, 0.0], -p.elevation);
    (yaw * pitch).normalized()
}

/// Pose difference used as view conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativePose {
    pub d_azimuth: f64,
    pub d_elevation: f64,
    pub d_radius: f64,
}

impl RelativePose {
    pub fn to_array(self) -> [f64; 3] {
        [self.d_azimuth, self.d_elevation, self.d_radius]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { d_azimuth: a[0], d_elevation: a[1], d_radius: a[2] }
    }

    /// Applies this offset to `reference`.
    pub fn apply(&self, reference: &CameraPose) -> Result<CameraPose, GeometryError> {
        CameraPose::new(
            reference.azimuth + self.d_azimuth,
            reference.elevation + self.d_elevation,
            reference.radius + self.d_radius,
        )
    }
}

pub fn relative_pose(reference: &CameraPose, view: &CameraPose) -> RelativePose {
    RelativePose {
        d_azimuth: wrap_angle(view.azimuth - reference.azimuth),
        d_elevation: view.elevation - reference.elevation,
        d_radius: view.radius - reference.radius,
    }
}

/// Ordered camera path. Poses built by [`make_trajectory`] move at constant
/// angular speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<PoseRecord>", try_from = "Vec<PoseRecord>")]
pub struct Trajectory {
    poses: Vec<CameraPose>,
}

impl Trajectory {
    pub fn from_poses(poses: Vec<CameraPose>) -> Result<Self, GeometryError> {
        if poses.is_empty() {
            return Err(GeometryError::InvalidArgument("trajectory needs at least one pose".into()));
        }
        Ok(Self { poses })
    }

    /// One-frame path containing only `pose`.
    pub fn single(pose: CameraPose) -> Self {
        Self { poses: vec![pose] }
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Angles between consecutive viewing directions.
    pub fn step_angles(&self) -> Vec<f64> {
        self.poses
            .windows(2)
            .map(|w| direction_angle(&w[0].direction(), &w[1].direction()))
            .collect()
    }
}

impl From<Trajectory> for Vec<PoseRecord> {
    fn from(t: Trajectory) -> Self {
        t.poses.into_iter().map(PoseRecord::from).collect()
    }
}

impl TryFrom<Vec<PoseRecord>> for Trajectory {
    type Error = GeometryError;

    fn try_from(records: Vec<PoseRecord>) -> Result<Self, Self::Error> {
        let poses = records.into_iter().map(CameraPose::try_from).collect::<Result<Vec<_>, _>>()?;
        Trajectory::from_poses(poses)
    }
}

fn direction_angle(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos)
}

/// Slerp path of `frames` poses from `start` to `target`, radius interpolated
/// linearly. The endpoints are copied verbatim.
pub fn make_trajectory(start: &CameraPose, target: &CameraPose, frames: usize) -> Result<Trajectory, GeometryError> {
    if frames < 2 {
        return Err(GeometryError::InvalidArgument(format!("trajectory needs at least 2 frames, got {frames}")));
    }
    if start == target {
        return Ok(Trajectory { poses: vec![*start; frames] });
    }
    let path = slerp_path(&quat_from_pose(start), &quat_from_pose(target), frames);
    let last = frames - 1;
    let mut poses = Vec::with_capacity(frames);
    for (f, q) in path.iter().enumerate() {
        let pose = if f == 0 {
            *start
        } else if f == last {
            *target
        } else {
            let tau = f as f64 / last as f64;
            let radius = start.radius + (target.radius - start.radius) * tau;
            CameraPose::from_orientation(q, radius)?
        };
        poses.push(pose);
    }
    Ok(Trajectory { poses })
}
