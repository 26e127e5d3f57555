//! Ray-traced single-object scenes with exact ground-truth flow.
//!
//! World is y-up; the camera sits at `pose.position()` and looks at the
//! origin. Pixel `(i, j)` has its centre at continuous coordinate `(i, j)`;
//! flow vectors use the same convention.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vivid_core::geometry::CameraPose;

use crate::flow::{write_flo, FlowField};
use crate::image::{Image, Mask};
use crate::VisionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    /// Axis-aligned cube; `size` is its half extent.
    Cuboid,
}

/// Smooth two-colour checkerboard. On the sphere, `cells` is the number of
/// cells around the equator (must be even so the pattern closes); on each
/// cube face, the number of cells along an edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct Checkerboard {
    pub cells: usize,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    /// Width of the tanh transition between cells; smaller is sharper.
    pub softness: f64,
}

impl Default for Checkerboard {
    fn default() -> Self {
        Self { cells: 12, color_a: [0.15, 0.25, 0.7], color_b: [0.95, 0.75, 0.2], softness: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct SceneObject {
    pub kind: ShapeKind,
    /// Sphere radius or cube half extent.
    pub size: f64,
    pub texture: Checkerboard,
}

impl Default for SceneObject {
    fn default() -> Self {
        Self { kind: ShapeKind::Sphere, size: 0.8, texture: Checkerboard::default() }
    }
}

impl SceneObject {
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(self.size > 0.0 && self.size.is_finite()) {
            return Err(VisionError::InvalidArgument(format!("object size must be positive, got {}", self.size)));
        }
        let t = &self.texture;
        if t.cells < 2 {
            return Err(VisionError::InvalidArgument(format!("need at least 2 checker cells, got {}", t.cells)));
        }
        if self.kind == ShapeKind::Sphere && t.cells % 2 != 0 {
            return Err(VisionError::InvalidArgument(format!("sphere checker cell count must be even, got {}", t.cells)));
        }
        if !(t.softness > 0.0) {
            return Err(VisionError::InvalidArgument("checker softness must be positive".into()));
        }
        Ok(())
    }

    /// Rotation angle about the vertical axis that maps the sphere texture
    /// onto itself.
    pub fn azimuth_symmetry(&self) -> f64 {
        2.0 * std::f64::consts::TAU / self.texture.cells as f64
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        match self.kind {
            ShapeKind::Sphere => dot(p, p) <= self.size * self.size,
            ShapeKind::Cuboid => p.iter().all(|c| c.abs() <= self.size),
        }
    }

    /// Nearest intersection along a unit ray: `(t, point, outward normal)`.
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, [f64; 3], [f64; 3])> {
        match self.kind {
            ShapeKind::Sphere => {
                let b = dot(o, d);
                let c = dot(o, o) - self.size * self.size;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                if t <= 0.0 {
                    return None;
                }
                let p = add(o, scale(d, t));
                Some((t, p, scale(p, 1.0 / self.size)))
            }
            ShapeKind::Cuboid => {
                let s = self.size;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k].abs() > s {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((-s - o[k]) / d[k], (s - o[k]) / d[k]);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    if a > t0 {
                        t0 = a;
                        axis = k;
                    }
                    t1 = t1.min(b);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let p = add(o, scale(d, t0));
                let mut n = [0.0; 3];
                n[axis] = -d[axis].signum();
                Some((t0, p, n))
            }
        }
    }

    /// Albedo at a surface point.
    pub fn color_at(&self, p: [f64; 3], n: [f64; 3]) -> [f64; 3] {
        use std::f64::consts::PI;
        let t = &self.texture;
        let c = t.cells as f64;
        let s = match self.kind {
            ShapeKind::Sphere => {
                let q = scale(p, 1.0 / self.size);
                let lon = q[0].atan2(q[2]);
                let colat = q[1].clamp(-1.0, 1.0).acos();
                (0.5 * c * lon).sin() * (0.5 * c * colat).sin()
            }
            ShapeKind::Cuboid => {
                let axis = (0..3).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).unwrap_or(0);
                let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                let f = |x: f64| (PI * c * (x + self.size) / (2.0 * self.size)).sin();
                f(p[i]) * f(p[j])
            }
        };
        let w = 0.5 + 0.5 * (s / t.softness).tanh();
        [0, 1, 2].map(|k| t.color_a[k] * (1.0 - w) + t.color_b[k] * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Vertical field of view in radians.
    pub fov: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 256, height: 256, fov: 40f64.to_radians(), background: [1.0, 1.0, 1.0] }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), VisionError> {
        if self.width < 16 || self.height < 16 {
            return Err(VisionError::InvalidArgument(format!(
                "render size must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(VisionError::InvalidArgument(format!("field of view must be in (0, pi), got {}", self.fov)));
        }
        Ok(())
    }
}

/// Pinhole camera looking at the origin.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub position: [f64; 3],
    right: [f64; 3],
    up: [f64; 3],
    forward: [f64; 3],
    focal: f64,
    cx: f64,
    cy: f64,
}

impl Camera {
    pub fn new(pose: &CameraPose, cfg: &RenderConfig) -> Self {
        let position = pose.position();
        let forward = scale(pose.direction(), -1.0);
        let mut right = cross(forward, [0.0, 1.0, 0.0]);
        if norm(right) < 1e-9 {
            // looking straight up or down: pick the world -z as "up" in the image
            right = cross(forward, [0.0, 0.0, -1.0]);
        }
        let right = scale(right, 1.0 / norm(right));
        let up = cross(right, forward);
        let focal = 0.5 * cfg.height as f64 / (0.5 * cfg.fov).tan();
        Self { position, right, up, forward, focal, cx: 0.5 * (cfg.width as f64 - 1.0), cy: 0.5 * (cfg.height as f64 - 1.0) }
    }

    /// Unit ray through continuous pixel coordinate `(x, y)`.
    pub fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        let a = (x - self.cx) / self.focal;
        let b = (y - self.cy) / self.focal;
        let d = add(self.forward, add(scale(self.right, a), scale(self.up, -b)));
        scale(d, 1.0 / norm(d))
    }

    /// Continuous pixel coordinate of a world point in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let v = sub(p, self.position);
        let z = dot(v, self.forward);
        if z <= 0.0 {
            return None;
        }
        Some((self.cx + self.focal * dot(v, self.right) / z, self.cy - self.focal * dot(v, self.up) / z))
    }
}

fn check_inputs(obj: &SceneObject, pose: &CameraPose, cfg: &RenderConfig) -> Result<(), VisionError> {
    obj.validate()?;
    cfg.validate()?;
    if obj.contains(pose.position()) {
        return Err(VisionError::InvalidArgument(format!(
            "camera at radius {} is inside the object",
            pose.radius()
        )));
    }
    Ok(())
}

/// Surface hit for every pixel (row-major), `None` on background.
fn trace(obj: &SceneObject, cam: &Camera, cfg: &RenderConfig) -> Vec<Option<([f64; 3], [f64; 3])>> {
    (0..cfg.width * cfg.height)
        .into_par_iter()
        .map(|i| {
            let d = cam.ray((i % cfg.width) as f64, (i / cfg.width) as f64);
            obj.intersect(cam.position, d).map(|(_, p, n)| (p, n))
        })
        .collect()
}

/// A rendered view and its foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: Image,
    pub mask: Mask,
}

/// Unlit render: each pixel shows the albedo of the first surface hit.
pub fn render(obj: &SceneObject, pose: &CameraPose, cfg: &RenderConfig) -> Result<Render, VisionError> {
    check_inputs(obj, pose, cfg)?;
    let cam = Camera::new(pose, cfg);
    let hits = trace(obj, &cam, cfg);
    let n = cfg.width * cfg.height;
    let mut data = vec![0.0; 3 * n];
    for (i, hit) in hits.iter().enumerate() {
        let color = match hit {
            Some((p, nrm)) => obj.color_at(*p, *nrm),
            None => cfg.background,
        };
        for c in 0..3 {
            data[c * n + i] = color[c];
        }
    }
    let mask = Mask::new(cfg.height, cfg.width, hits.iter().map(Option::is_some).collect())?;
    Ok(Render { image: Image::new(3, cfg.height, cfg.width, data)?, mask })
}

/// Exact flow from view `a` to view `b`. A pixel is valid when it sees the
/// object in `a`, the surface point faces camera `b` (the objects are
/// convex, so that means unoccluded), and its projection lands inside `b`'s
/// image with all four bilinear neighbours on the object.
pub fn gt_flow(obj: &SceneObject, a: &CameraPose, b: &CameraPose, cfg: &RenderConfig) -> Result<FlowField, VisionError> {
    check_inputs(obj, a, cfg)?;
    check_inputs(obj, b, cfg)?;
    let (ca, cb) = (Camera::new(a, cfg), Camera::new(b, cfg));
    let hits_a = trace(obj, &ca, cfg);
    let fg_b: Vec<bool> = trace(obj, &cb, cfg).iter().map(Option::is_some).collect();
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let (mut u, mut v, mut valid) = (vec![0.0f32; n], vec![0.0f32; n], vec![false; n]);
    for (i, hit) in hits_a.iter().enumerate() {
        let Some((p, nrm)) = hit else { continue };
        if dot(*nrm, sub(cb.position, *p)) <= 0.0 {
            continue;
        }
        let Some((xb, yb)) = cb.project(*p) else { continue };
        if !(xb >= 0.0 && yb >= 0.0 && xb <= (w - 1) as f64 && yb <= (h - 1) as f64) {
            continue;
        }
        let (x0, y0) = (xb.floor() as usize, yb.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        if !(fg_b[y0 * w + x0] && fg_b[y0 * w + x1] && fg_b[y1 * w + x0] && fg_b[y1 * w + x1]) {
            continue;
        }
        u[i] = (xb - (i % w) as f64) as f32;
        v[i] = (yb - (i / w) as f64) as f32;
        valid[i] = true;
    }
    FlowField::new(w, h, u, v, Some(valid))
}

/// View layout of the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct DatasetProtocol {
    pub views: usize,
    pub elevation_deg: f64,
    /// Views span `[-azimuth_span_deg, +azimuth_span_deg]` around the base azimuth.
    pub azimuth_span_deg: f64,
}

impl Default for DatasetProtocol {
    fn default() -> Self {
        Self { views: 25, elevation_deg: 15.0, azimuth_span_deg: 45.0 }
    }
}

impl DatasetProtocol {
    /// Evenly spaced offsets including both ends.
    pub fn relative_azimuths_deg(&self) -> Vec<f64> {
        let n = self.views;
        if n == 1 {
            return vec![0.0];
        }
        (0..n).map(|i| -self.azimuth_span_deg + 2.0 * self.azimuth_span_deg * i as f64 / (n - 1) as f64).collect()
    }

    pub fn poses(&self, base: &CameraPose) -> Result<Vec<CameraPose>, VisionError> {
        self.relative_azimuths_deg()
            .into_iter()
            .map(|d| {
                CameraPose::new(base.azimuth() + d.to_radians(), self.elevation_deg.to_radians(), base.radius())
                    .map_err(|e| VisionError::InvalidArgument(e.to_string()))
            })
            .collect()
    }
}

/// One entry of `poses.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub view: usize,
    pub file: String,
    pub relative_azimuth_deg: f64,
    pub pose: CameraPose,
}

/// Renders the protocol views around `base`, writing
/// `views/view_XX.png`, `masks/mask_XX.png`, `flows/flow_00_to_XX.flo`
/// (exact flow from the first view) and `poses.json`.
pub fn generate_dataset(
    obj: &SceneObject,
    base: &CameraPose,
    cfg: &RenderConfig,
    protocol: &DatasetProtocol,
    out_dir: &Path,
) -> Result<Vec<ViewRecord>, VisionError> {
    if protocol.views == 0 || protocol.views > 100 {
        return Err(VisionError::InvalidArgument(format!("view count must be in 1..=100, got {}", protocol.views)));
    }
    let poses = protocol.poses(base)?;
    for p in &poses {
        check_inputs(obj, p, cfg)?;
    }
    let dirs: Vec<PathBuf> = ["views", "masks", "flows"].iter().map(|d| out_dir.join(d)).collect();
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| VisionError::io(d, e))?;
    }
    let rel = protocol.relative_azimuths_deg();
    poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let r = render(obj, pose, cfg)?;
            r.image.write_png(&dirs[0].join(format!("view_{i:02}.png")))?;
            r.mask.write_png(&dirs[1].join(format!("mask_{i:02}.png")))?;
            write_flo(&gt_flow(obj, &poses[0], pose, cfg)?, &dirs[2].join(format!("flow_00_to_{i:02}.flo")))?;
            Ok(())
        })
        .collect::<Result<Vec<()>, VisionError>>()?;
    let records: Vec<ViewRecord> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| ViewRecord { view: i, file: format!("views/view_{i:02}.png"), relative_azimuth_deg: rel[i], pose: *p })
        .collect();
    let path = out_dir.join("poses.json");
    let json = serde_json::to_string_pretty(&records).map_err(|e| VisionError::InvalidArgument(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| VisionError::io(&path, e))?;
    Ok(records)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
