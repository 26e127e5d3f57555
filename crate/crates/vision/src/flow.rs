//! Dense optical flow: the `FlowField` container, Middlebury `.flo`
//! interchange and a coarse-to-fine Lucas-Kanade estimator.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{bilinear, Image};
use crate::VisionError;

pub const FLO_MAGIC: f32 = 202021.25;
/// Components above this magnitude mark unknown flow in `.flo` files.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;
pub const UNKNOWN_FLOW: f32 = 1e10;

/// Per-pixel displacement `(u, v)` in pixels, row-major, with an optional
/// validity mask (`None` means every pixel is valid).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>, valid: Option<Vec<bool>>) -> Result<Self, VisionError> {
        let n = width * height;
        if width == 0 || height == 0 {
            return Err(VisionError::InvalidArgument("flow field dimensions must be positive".into()));
        }
        if u.len() != n || v.len() != n || valid.as_ref().is_some_and(|m| m.len() != n) {
            return Err(VisionError::InvalidArgument(format!("flow arrays must have {n} entries")));
        }
        Ok(Self { width, height, u, v, valid })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: None }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn valid_mask(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        (0..self.u.len()).filter(|&i| self.is_valid(i)).count()
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        (self.u[i] as f64).hypot(self.v[i] as f64)
    }

    /// Endpoint error against `other` on pixels valid in both.
    pub fn endpoint_errors(&self, other: &FlowField) -> Vec<f64> {
        (0..self.u.len())
            .filter(|&i| self.is_valid(i) && other.is_valid(i))
            .map(|i| ((self.u[i] - other.u[i]) as f64).hypot((self.v[i] - other.v[i]) as f64))
            .collect()
    }
}

/// Writes the Middlebury layout: magic, width, height, then interleaved
/// `(u, v)` float32 pairs, all little-endian. Invalid pixels are written as
/// the unknown-flow sentinel.
pub fn write_flo(field: &FlowField, path: &Path) -> Result<(), VisionError> {
    let bytes = encode_flo(field);
    let mut file = std::fs::File::create(path).map_err(|e| VisionError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| VisionError::io(path, e))
}

pub fn encode_flo(field: &FlowField) -> Vec<u8> {
    let n = field.width * field.height;
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width as i32).to_le_bytes());
    out.extend_from_slice(&(field.height as i32).to_le_bytes());
    for i in 0..n {
        let (u, v) = if field.is_valid(i) { (field.u[i], field.v[i]) } else { (UNKNOWN_FLOW, UNKNOWN_FLOW) };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_flo(path: &Path) -> Result<FlowField, VisionError> {
    let bytes = std::fs::read(path).map_err(|e| VisionError::io(path, e))?;
    decode_flo(&bytes).map_err(|(offset, message)| VisionError::Format { path: path.to_path_buf(), offset, message })
}

/// Decodes `.flo` bytes; errors carry the offending byte offset.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, (u64, String)> {
    let word = |off: usize| -> Result<[u8; 4], (u64, String)> {
        bytes
            .get(off..off + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(|| (off as u64, format!("truncated: need 4 bytes, file has {}", bytes.len())))
    };
    let magic = f32::from_le_bytes(word(0)?);
    if magic != FLO_MAGIC {
        return Err((0, format!("bad magic {magic}, expected {FLO_MAGIC}")));
    }
    let width = i32::from_le_bytes(word(4)?);
    let height = i32::from_le_bytes(word(8)?);
    if width <= 0 {
        return Err((4, format!("width must be positive, got {width}")));
    }
    if height <= 0 {
        return Err((8, format!("height must be positive, got {height}")));
    }
    let n = width as usize * height as usize;
    let expected = 12 + 8 * n;
    if bytes.len() < expected {
        return Err((bytes.len() as u64, format!("truncated: {width}x{height} field needs {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err((expected as u64, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let a = f32::from_le_bytes(word(12 + 8 * i)?);
        let b = f32::from_le_bytes(word(16 + 8 * i)?);
        valid.push(a.abs() <= UNKNOWN_FLOW_THRESHOLD && b.abs() <= UNKNOWN_FLOW_THRESHOLD);
        u.push(a);
        v.push(b);
    }
    let valid = if valid.iter().all(|&b| b) { None } else { Some(valid) };
    Ok(FlowField { width: width as usize, height: height as usize, u, v, valid })
}

/// Anything that maps an image pair to a dense flow `src -> dst`.
pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, src: &Image, dst: &Image) -> Result<FlowField, VisionError>;
}

/// Pyramidal Lucas-Kanade with box windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct LucasKanade {
    pub levels: usize,
    /// Odd window side length.
    pub window: usize,
    pub iterations: usize,
    /// Smallest eigenvalue of the window's mean structure tensor below which
    /// a pixel is treated as untextured at that level.
    pub min_eigenvalue: f64,
}

impl Default for LucasKanade {
    fn default() -> Self {
        Self { levels: 4, window: 15, iterations: 5, min_eigenvalue: 1e-6 }
    }
}

pub fn estimate_flow(src: &Image, dst: &Image) -> Result<FlowField, VisionError> {
    LucasKanade::default().estimate(src, dst)
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// 5-tap binomial blur, then every second sample.
    fn downsample(&self) -> Plane {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = (0..5).map(|k| K[k] * self.at(x as isize + k as isize - 2, y as isize)).sum();
            }
        }
        let tmp = Plane { w: self.w, h: self.h, data: tmp };
        let (w2, h2) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = vec![0.0; w2 * h2];
        for y in 0..h2 {
            for x in 0..w2 {
                data[y * w2 + x] =
                    (0..5).map(|k| K[k] * tmp.at(2 * x as isize, 2 * y as isize + k as isize - 2)).sum();
            }
        }
        Plane { w: w2, h: h2, data }
    }
}

/// Summed-area table with clipped box queries.
struct Integral {
    w: usize,
    h: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut s = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, s }
    }

    fn box_sum(&self, x: usize, y: usize, r: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.w);
        let y1 = (y + r + 1).min(self.h);
        let w = self.w + 1;
        self.s[y1 * w + x1] - self.s[y0 * w + x1] - self.s[y1 * w + x0] + self.s[y0 * w + x0]
    }

    fn box_count(&self, x: usize, y: usize, r: usize) -> f64 {
        let nx = (x + r + 1).min(self.w) - x.saturating_sub(r);
        let ny = (y + r + 1).min(self.h) - y.saturating_sub(r);
        (nx * ny) as f64
    }
}

impl LucasKanade {
    fn validate(&self) -> Result<(), VisionError> {
        if self.levels == 0 || self.iterations == 0 {
            return Err(VisionError::InvalidArgument("levels and iterations must be positive".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(VisionError::InvalidArgument(format!("window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.min_eigenvalue >= 0.0) {
            return Err(VisionError::InvalidArgument("min_eigenvalue must be nonnegative".into()));
        }
        Ok(())
    }
}

impl FlowEstimator for LucasKanade {
    fn estimate(&self, src: &Image, dst: &Image) -> Result<FlowField, VisionError> {
        self.validate()?;
        src.check_same_shape(dst)?;
        let (w, h) = (src.width(), src.height());
        let mut pa = vec![Plane { w, h, data: src.to_gray() }];
        let mut pb = vec![Plane { w, h, data: dst.to_gray() }];
        // stop before a level gets smaller than one window
        while pa.len() < self.levels && pa.last().unwrap().w.min(pa.last().unwrap().h) / 2 >= self.window {
            let (a, b) = (pa.last().unwrap().downsample(), pb.last().unwrap().downsample());
            pa.push(a);
            pb.push(b);
        }
        let top = pa.len() - 1;
        let mut u = vec![0.0; pa[top].w * pa[top].h];
        let mut v = u.clone();
        let mut conditioned: Vec<Vec<bool>> = vec![Vec::new(); pa.len()];
        for level in (0..=top).rev() {
            let (a, b) = (&pa[level], &pb[level]);
            if level < top {
                let (uc, vc) = (u, v);
                let coarse = &pa[level + 1];
                (u, v) = upsample(&uc, &vc, coarse.w, coarse.h, a.w, a.h);
            }
            conditioned[level] = self.refine(a, b, &mut u, &mut v);
        }
        let mut valid = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let any = (0..=top).any(|l| {
                    let pl = &pa[l];
                    conditioned[l][(y >> l).min(pl.h - 1) * pl.w + (x >> l).min(pl.w - 1)]
                });
                let (tx, ty) = (x as f64 + u[i], y as f64 + v[i]);
                let inside = tx >= -0.5 && ty >= -0.5 && tx <= w as f64 - 0.5 && ty <= h as f64 - 0.5;
                valid[i] = any && inside && u[i].is_finite() && v[i].is_finite();
            }
        }
        let to32 = |a: &[f64], m: &[bool]| a.iter().zip(m).map(|(&x, &ok)| if ok { x as f32 } else { 0.0 }).collect();
        Ok(FlowField { width: w, height: h, u: to32(&u, &valid), v: to32(&v, &valid), valid: Some(valid) })
    }
}

impl LucasKanade {
    /// Gauss-Newton refinement at one level; returns which pixels had a
    /// well-conditioned structure tensor.
    fn refine(&self, a: &Plane, b: &Plane, u: &mut [f64], v: &mut [f64]) -> Vec<bool> {
        let (w, h) = (a.w, a.h);
        let r = self.window / 2;
        let mut ix = vec![0.0; w * h];
        let mut iy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                ix[y * w + x] = 0.5 * (a.at(xi + 1, yi) - a.at(xi - 1, yi));
                iy[y * w + x] = 0.5 * (a.at(xi, yi + 1) - a.at(xi, yi - 1));
            }
        }
        let sxx = Integral::new(w, h, |i| ix[i] * ix[i]);
        let sxy = Integral::new(w, h, |i| ix[i] * iy[i]);
        let syy = Integral::new(w, h, |i| iy[i] * iy[i]);
        let mut ok = vec![false; w * h];
        let mut inv = vec![[0.0; 3]; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let n = sxx.box_count(x, y, r);
                let (gxx, gxy, gyy) = (sxx.box_sum(x, y, r), sxy.box_sum(x, y, r), syy.box_sum(x, y, r));
                let tr = 0.5 * (gxx + gyy);
                let det = gxx * gyy - gxy * gxy;
                let lmin = tr - (tr * tr - det).max(0.0).sqrt();
                if lmin / n > self.min_eigenvalue && det > 0.0 {
                    ok[i] = true;
                    inv[i] = [gyy / det, -gxy / det, gxx / det];
                }
            }
        }
        let res: Vec<(f64, f64)> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (mut du, mut dv) = (u[i], v[i]);
                if !ok[i] {
                    return (du, dv);
                }
                let (x, y) = (i % w, i / w);
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
                let m = inv[i];
                for _ in 0..self.iterations {
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            let j = yy * w + xx;
                            let it = bilinear(&b.data, w, h, xx as f64 + du, yy as f64 + dv) - a.data[j];
                            gx += ix[j] * it;
                            gy += iy[j] * it;
                        }
                    }
                    let (su, sv) = (m[0] * gx + m[1] * gy, m[1] * gx + m[2] * gy);
                    du -= su;
                    dv -= sv;
                    if su * su + sv * sv < 1e-6 {
                        break;
                    }
                }
                (du, dv)
            })
            .collect();
        for (i, (du, dv)) in res.into_iter().enumerate() {
            u[i] = du;
            v[i] = dv;
        }
        ok
    }
}

/// Bilinear upsampling of a coarse flow, doubling the vectors. Coarse sample
/// `i` sits at fine coordinate `2i`.
fn upsample(u: &[f64], v: &[f64], wc: usize, hc: usize, w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut uf = vec![0.0; w * h];
    let mut vf = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as f64 / 2.0, y as f64 / 2.0);
            uf[y * w + x] = 2.0 * bilinear(u, wc, hc, cx, cy);
            vf[y * w + x] = 2.0 * bilinear(v, wc, hc, cx, cy);
        }
    }
    (uf, vf)
}
