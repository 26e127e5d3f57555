//! Image-quality metrics and pair-set evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::{FlowEstimator, FlowField, LucasKanade};
use crate::image::{Image, Mask};
use crate::VisionError;

pub const DEFAULT_PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// PSNR in dB; identical images give [`DEFAULT_PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, VisionError> {
    psnr_with_cap(a, b, peak, DEFAULT_PSNR_CAP)
}

pub fn psnr_with_cap(a: &Image, b: &Image, peak: f64, cap: f64) -> Result<f64, VisionError> {
    a.check_same_shape(b)?;
    if !(peak > 0.0) {
        return Err(VisionError::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let n = a.as_slice().len() as f64;
    let mse = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Mean local SSIM over all fully contained 11x11 Gaussian windows,
/// averaged over channels. Data range is taken to be 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, VisionError> {
    a.check_same_shape(b)?;
    let [c, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(VisionError::InvalidArgument(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let k = gaussian_window();
    let total: f64 = (0..c).map(|ch| ssim_plane(a.plane(ch), b.plane(ch), w, h, &k)).sum();
    Ok(total / c as f64)
}

/// Separable "valid" filtering of a plane.
fn filter_valid(p: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (wo, ho) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; wo * h];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|j| k[j] * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|j| k[j] * rows[(y + j) * wo + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64]) -> f64 {
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, w, h, k);
    let mu_b = filter_valid(b, w, h, k);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), w, h, k);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), w, h, k);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), w, h, k);
    let n = mu_a.len();
    let mut sum = 0.0;
    for i in 0..n {
        sum += ssim_local(mu_a[i], mu_b[i], aa[i], bb[i], ab[i]);
    }
    sum / n as f64
}

pub(crate) fn ssim_local(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))
}

/// What the estimated flow is compared against.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum FlowReference {
    /// A perfect rendering has zero displacement to the ground truth.
    #[default]
    Zero,
    /// Deviation from a given flow field, e.g. another estimator's output.
    Field(FlowField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForConfig {
    pub estimator: LucasKanade,
    /// Central-difference gray gradient magnitude above which a pixel counts
    /// as textured when no mask is given.
    pub gradient_threshold: f64,
    pub reference: FlowReference,
}

impl Default for ForConfig {
    fn default() -> Self {
        Self { estimator: LucasKanade::default(), gradient_threshold: 1e-3, reference: FlowReference::Zero }
    }
}

/// Flow outlier ratio with the default configuration.
pub fn for_k(generated: &Image, ground_truth: &Image, k: f64, mask: Option<&Mask>) -> Result<f64, VisionError> {
    Ok(for_thresholds(generated, ground_truth, &[k], mask, &ForConfig::default())?[0])
}

/// Outlier ratios for several thresholds from a single flow estimate
/// `generated -> ground_truth`. Pixels with invalid flow count as outliers.
pub fn for_thresholds(
    generated: &Image,
    ground_truth: &Image,
    ks: &[f64],
    mask: Option<&Mask>,
    cfg: &ForConfig,
) -> Result<Vec<f64>, VisionError> {
    generated.check_same_shape(ground_truth)?;
    if let Some(&k) = ks.iter().find(|&&k| !(k > 0.0)) {
        return Err(VisionError::InvalidArgument(format!("threshold must be positive, got {k}")));
    }
    let [_, h, w] = generated.shape();
    let region = evaluation_region(generated, ground_truth, mask, cfg.gradient_threshold)?;
    let flow = cfg.estimator.estimate(generated, ground_truth)?;
    let deviation = |i: usize| -> Option<f64> {
        if !flow.is_valid(i) {
            return None;
        }
        match &cfg.reference {
            FlowReference::Zero => Some(flow.magnitude(i)),
            FlowReference::Field(r) => {
                Some(((flow.u()[i] - r.u()[i]) as f64).hypot((flow.v()[i] - r.v()[i]) as f64))
            }
        }
    };
    let mut pixels: Vec<usize> = (0..h * w).filter(|&i| region[i]).collect();
    if let FlowReference::Field(r) = &cfg.reference {
        if r.width() != w || r.height() != h {
            return Err(VisionError::InvalidArgument("reference flow has the wrong size".into()));
        }
        pixels.retain(|&i| r.is_valid(i));
    }
    if pixels.is_empty() {
        return Err(VisionError::InvalidArgument("empty evaluation region".into()));
    }
    let devs: Vec<Option<f64>> = pixels.iter().map(|&i| deviation(i)).collect();
    Ok(ks
        .iter()
        .map(|&k| devs.iter().filter(|d| d.is_none_or(|m| m > k)).count() as f64 / devs.len() as f64)
        .collect())
}

fn evaluation_region(a: &Image, b: &Image, mask: Option<&Mask>, threshold: f64) -> Result<Vec<bool>, VisionError> {
    let [_, h, w] = a.shape();
    if let Some(m) = mask {
        if m.height() != h || m.width() != w {
            return Err(VisionError::InvalidArgument(format!(
                "mask is {}x{}, images are {h}x{w}",
                m.height(),
                m.width()
            )));
        }
        return Ok(m.as_slice().to_vec());
    }
    let (ga, gb) = (a.to_gray(), b.to_gray());
    let active = |g: &[f64], x: usize, y: usize| {
        let at = |x: usize, y: usize| g[y * w + x];
        let gx = 0.5 * (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y));
        let gy = 0.5 * (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1)));
        gx.hypot(gy) > threshold
    };
    Ok((0..h * w).map(|i| active(&ga, i % w, i / w) || active(&gb, i % w, i / w)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub for_8: f64,
    pub for_16: f64,
    pub pixel_count: usize,
}

impl MetricReport {
    pub fn compute(name: &str, generated: &Image, ground_truth: &Image, mask: Option<&Mask>, cfg: &ForConfig) -> Result<Self, VisionError> {
        let f = for_thresholds(generated, ground_truth, &[8.0, 16.0], mask, cfg)?;
        let pixel_count = match mask {
            Some(m) => m.count(),
            None => generated.height() * generated.width(),
        };
        Ok(Self {
            name: name.to_string(),
            psnr: psnr(generated, ground_truth, 1.0)?,
            ssim: ssim(generated, ground_truth)?,
            for_8: f[0],
            for_16: f[1],
            pixel_count,
        })
    }
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>, VisionError> {
    let entries = std::fs::read_dir(dir).map_err(|e| VisionError::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| VisionError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

/// Compares same-named PNGs of `gen_dir` and `gt_dir`. Masks, if given, are
/// paired with the ground-truth images in sorted filename order.
pub fn evaluate_pair_set(gen_dir: &Path, gt_dir: &Path, masks_dir: Option<&Path>, cfg: &ForConfig) -> Result<Vec<MetricReport>, VisionError> {
    let gen = png_names(gen_dir)?;
    let gt = png_names(gt_dir)?;
    let unmatched: Vec<String> = gen.symmetric_difference(&gt).cloned().collect();
    if !unmatched.is_empty() {
        return Err(VisionError::InvalidArgument(format!("unmatched files: {}", unmatched.join(", "))));
    }
    if gen.is_empty() {
        return Err(VisionError::InvalidArgument(format!("no PNG files in {}", gen_dir.display())));
    }
    let names: Vec<String> = gen.into_iter().collect();
    let masks: Vec<Option<PathBuf>> = match masks_dir {
        None => vec![None; names.len()],
        Some(dir) => {
            let m = png_names(dir)?;
            if m.len() != names.len() {
                return Err(VisionError::InvalidArgument(format!(
                    "{} masks for {} image pairs in {}",
                    m.len(),
                    names.len(),
                    dir.display()
                )));
            }
            m.into_iter().map(|n| Some(dir.join(n))).collect()
        }
    };
    names
        .par_iter()
        .zip(masks.par_iter())
        .map(|(name, mask)| {
            let a = Image::read_png(&gen_dir.join(name))?;
            let b = Image::read_png(&gt_dir.join(name))?;
            let mask = mask.as_deref().map(Mask::read_png).transpose()?;
            MetricReport::compute(name, &a, &b, mask.as_ref(), cfg)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 5] = ["name", "psnr", "ssim", "for_8", "for_16"];

/// Per-pair rows followed by a `mean` row.
pub fn write_metrics_csv(path: &Path, reports: &[MetricReport]) -> Result<(), VisionError> {
    let err = |e: csv::Error| VisionError::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        w.write_record([r.name.clone(), r.psnr.to_string(), r.ssim.to_string(), r.for_8.to_string(), r.for_16.to_string()])
            .map_err(err)?;
    }
    let m = mean_report(reports);
    w.write_record(["mean".to_string(), m[0].to_string(), m[1].to_string(), m[2].to_string(), m[3].to_string()])
        .map_err(err)?;
    w.flush().map_err(|e| VisionError::io(path, e))
}

/// Means of psnr, ssim, for_8, for_16.
pub fn mean_report(reports: &[MetricReport]) -> [f64; 4] {
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    [mean(|r| r.psnr), mean(|r| r.ssim), mean(|r| r.for_8), mean(|r| r.for_16)]
}

/// Parses a metrics CSV back into `(name, [psnr, ssim, for_8, for_16])` rows,
/// including the mean row.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, [f64; 4])>, VisionError> {
    let fail = |message: String| VisionError::Csv { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let header = r.headers().map_err(|e| fail(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(fail(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = rec[k + 1].parse().map_err(|e| fail(format!("row {}: {e}", rows.len() + 1)))?;
        }
        rows.push((rec[0].to_string(), vals));
    }
    Ok(rows)
}
