//! Analytic denoisers with exact noise predictions.
//!
//! Data distributions are pushed through the forward process
//! `z_t = sqrt(abar) x + sqrt(1 - abar) n`, and the exact noise prediction is
//! `eps*(z) = -sqrt(1 - abar) * grad log p_t(z)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{LatentFrames, NoiseLevel};
use crate::geometry::CameraPose;
use crate::guidance::{DenoiserError, FrameCondition, Prompt, VideoDenoiser, ViewDenoiser};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

fn check_dim(expected: usize, got: usize) -> Result<(), PriorError> {
    if expected != got {
        return Err(PriorError::Dimension { expected, got });
    }
    Ok(())
}

/// Exact noise prediction for data `N(mean, diag(var))`.
pub fn exact_eps_gaussian(z: &[f64], level: NoiseLevel, mean: &[f64], var: &[f64]) -> Result<Vec<f64>, PriorError> {
    check_dim(z.len(), mean.len())?;
    check_dim(z.len(), var.len())?;
    if var.iter().any(|&v| !(v > 0.0)) {
        return Err(PriorError::InvalidArgument("variances must be positive".into()));
    }
    let (ab, s) = (level.alpha_bar, level.sigma());
    let sq = level.alpha();
    Ok(z.iter()
        .zip(mean.iter().zip(var))
        .map(|(&zi, (&m, &v))| s * (zi - sq * m) / (ab * v + 1.0 - ab))
        .collect())
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct GmmPrior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self, PriorError> {
        let prior = Self { weights, means, variances };
        prior.validate()?;
        Ok(prior)
    }

    /// Single isotropic component.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self, PriorError> {
        let d = mean.len();
        Self::new(vec![1.0], vec![mean], vec![vec![var; d]])
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let k = self.weights.len();
        if k == 0 {
            return Err(PriorError::InvalidArgument("mixture needs at least one component".into()));
        }
        check_dim(k, self.means.len())?;
        check_dim(k, self.variances.len())?;
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(PriorError::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PriorError::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        let d = self.means[0].len();
        for (m, v) in self.means.iter().zip(&self.variances) {
            check_dim(d, m.len())?;
            check_dim(d, v.len())?;
            if v.iter().any(|&x| !(x > 0.0)) {
                return Err(PriorError::InvalidArgument("variances must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Posterior component responsibilities under the diffused mixture.
    pub fn responsibilities(&self, z: &[f64], level: NoiseLevel) -> Result<Vec<f64>, PriorError> {
        check_dim(self.dim(), z.len())?;
        let (ab, sq) = (level.alpha_bar, level.alpha());
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(&w, (m, v))| {
                let mut lp = w.ln();
                for ((&zi, &mi), &vi) in z.iter().zip(m).zip(v) {
                    let s2 = ab * vi + 1.0 - ab;
                    let r = zi - sq * mi;
                    lp -= 0.5 * (r * r / s2 + (2.0 * PI * s2).ln());
                }
                lp
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(unnorm.into_iter().map(|u| u / total).collect())
    }
}

/// Exact noise prediction for a Gaussian mixture: the
/// responsibility-weighted per-component predictions.
pub fn exact_eps_gmm(z: &[f64], level: NoiseLevel, prior: &GmmPrior) -> Result<Vec<f64>, PriorError> {
    let resp = prior.responsibilities(z, level)?;
    let mut out = vec![0.0; z.len()];
    for ((r, m), v) in resp.iter().zip(&prior.means).zip(&prior.variances) {
        if *r == 0.0 {
            continue;
        }
        let eps = exact_eps_gaussian(z, level, m, v)?;
        for (o, e) in out.iter_mut().zip(eps) {
            *o += r * e;
        }
    }
    Ok(out)
}

/// Zero-mean joint Gaussian over `F` frames of dimension `d` with precision
/// `coupling * L + anchor * I`, `L` the path-graph Laplacian over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothVideoPrior {
    coupling: f64,
    anchor: f64,
    frame_dim: usize,
    frame_count: usize,
    laplacian_eigenvalues: Vec<f64>,
    // row k holds the k-th orthonormal eigenvector
    basis: Vec<f64>,
}

impl SmoothVideoPrior {
    pub fn new(coupling: f64, anchor: f64, frame_dim: usize, frame_count: usize) -> Result<Self, PriorError> {
        if !(coupling >= 0.0 && coupling.is_finite()) || !(anchor > 0.0 && anchor.is_finite()) {
            return Err(PriorError::InvalidArgument(format!(
                "precision not positive definite: coupling {coupling}, anchor {anchor}"
            )));
        }
        if frame_dim == 0 || frame_count == 0 {
            return Err(PriorError::InvalidArgument("frame_dim and frame_count must be positive".into()));
        }
        let n = frame_count as f64;
        let laplacian_eigenvalues = (0..frame_count).map(|k| 2.0 - 2.0 * (PI * k as f64 / n).cos()).collect();
        let mut basis = vec![0.0; frame_count * frame_count];
        for k in 0..frame_count {
            let c = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for f in 0..frame_count {
                basis[k * frame_count + f] = c * (PI * k as f64 * (f as f64 + 0.5) / n).cos();
            }
        }
        Ok(Self { coupling, anchor, frame_dim, frame_count, laplacian_eigenvalues, basis })
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    /// Eigenvalues of the precision matrix, one per frame mode.
    pub fn precision_eigenvalues(&self) -> Vec<f64> {
        self.laplacian_eigenvalues.iter().map(|l| self.coupling * l + self.anchor).collect()
    }
}

/// Exact noise prediction for [`SmoothVideoPrior`]; `z` is frame-major with
/// `F * d` entries.
pub fn exact_eps_video(z: &[f64], level: NoiseLevel, prior: &SmoothVideoPrior) -> Result<Vec<f64>, PriorError> {
    let (nf, d) = (prior.frame_count, prior.frame_dim);
    check_dim(nf * d, z.len())?;
    let (ab, s) = (level.alpha_bar, level.sigma());
    let gains: Vec<f64> = prior
        .precision_eigenvalues()
        .iter()
        .map(|p| s / (ab / p + 1.0 - ab))
        .collect();
    let mut out = vec![0.0; z.len()];
    for j in 0..d {
        for k in 0..nf {
            let row = &prior.basis[k * nf..(k + 1) * nf];
            let coeff: f64 = row.iter().enumerate().map(|(f, u)| u * z[f * d + j]).sum::<f64>() * gains[k];
            for (f, u) in row.iter().enumerate() {
                out[f * d + j] += u * coeff;
            }
        }
    }
    Ok(out)
}

/// Pose-dependent target mean: a circle of `radius` traced by azimuth in the
/// first two coordinates, `radius * sin(elevation)` in the third.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseTargetMap {
    pub radius: f64,
}

impl Default for PoseTargetMap {
    fn default() -> Self {
        Self { radius: 1.0 }
    }
}

impl PoseTargetMap {
    pub fn target(&self, pose: &CameraPose, dim: usize) -> Vec<f64> {
        let mut mu = vec![0.0; dim];
        let (s, c) = pose.azimuth().sin_cos();
        if dim >= 1 {
            mu[0] = self.radius * c;
        }
        if dim >= 2 {
            mu[1] = self.radius * s;
        }
        if dim >= 3 {
            mu[2] = self.radius * pose.elevation().sin();
        }
        mu
    }
}

/// Per-frame view prior `N(mu(v^f), sigma^2 I)`; unconditional queries use a
/// pose-agnostic mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyViewPrior {
    pub reference: CameraPose,
    pub target_map: PoseTargetMap,
    pub sigma: f64,
    pub unconditional: GmmPrior,
}

impl ToyViewPrior {
    pub fn new(reference: CameraPose, target_map: PoseTargetMap, sigma: f64, unconditional: GmmPrior) -> Result<Self, PriorError> {
        if !(sigma > 0.0) {
            return Err(PriorError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        unconditional.validate()?;
        Ok(Self { reference, target_map, sigma, unconditional })
    }

    pub fn frame_dim(&self) -> usize {
        self.unconditional.dim()
    }
}

impl ViewDenoiser for ToyViewPrior {
    fn id(&self) -> String {
        format!("toy-view(sigma={}, radius={})", self.sigma, self.target_map.radius)
    }

    fn eps(&self, z: &[f64], _frame_shape: [usize; 3], level: NoiseLevel, cond: Option<&FrameCondition<'_>>) -> Result<Vec<f64>, DenoiserError> {
        let out = match cond {
            Some(c) => {
                let pose = c
                    .relative_pose
                    .apply(&self.reference)
                    .map_err(|e| DenoiserError::Evaluation(e.to_string()))?;
                let mean = self.target_map.target(&pose, z.len());
                exact_eps_gaussian(z, level, &mean, &vec![self.sigma * self.sigma; z.len()])
            }
            None => exact_eps_gmm(z, level, &self.unconditional),
        };
        out.map_err(|e| DenoiserError::Evaluation(e.to_string()))
    }
}

/// Video denoiser backed by [`SmoothVideoPrior`]. The prompt is ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyVideoPrior {
    pub coupling: f64,
    pub anchor: f64,
}

impl VideoDenoiser for ToyVideoPrior {
    fn id(&self) -> String {
        format!("toy-video(coupling={}, anchor={})", self.coupling, self.anchor)
    }

    fn eps(&self, z: &LatentFrames, level: NoiseLevel, _prompt: &Prompt) -> Result<LatentFrames, DenoiserError> {
        let prior = SmoothVideoPrior::new(self.coupling, self.anchor, z.frame_len(), z.frame_count())
            .map_err(|e| DenoiserError::Evaluation(e.to_string()))?;
        let eps = exact_eps_video(z.as_slice(), level, &prior).map_err(|e| DenoiserError::Evaluation(e.to_string()))?;
        LatentFrames::new(z.shape(), eps).map_err(|e| DenoiserError::Evaluation(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{NoiseSchedule, ScheduleConfig};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn level(t: usize) -> NoiseLevel {
        NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap().level(Some(t))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    /// Central-difference estimate of `-sqrt(1 - abar) grad log p`.
    fn fd_eps(log_p: impl Fn(&[f64]) -> f64, z: &[f64], lvl: NoiseLevel) -> Vec<f64> {
        let h = 1e-4;
        (0..z.len())
            .map(|i| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                -lvl.sigma() * (log_p(&zp) - log_p(&zm)) / (2.0 * h)
            })
            .collect()
    }

    fn gaussian_log_density(z: &[f64], lvl: NoiseLevel, mean: &[f64], var: &[f64]) -> f64 {
        z.iter()
            .zip(mean.iter().zip(var))
            .map(|(&zi, (&m, &v))| {
                let s2 = lvl.alpha_bar * v + 1.0 - lvl.alpha_bar;
                -0.5 * ((zi - lvl.alpha() * m).powi(2) / s2 + (2.0 * PI * s2).ln())
            })
            .sum()
    }

    #[test]
    fn standard_normal_data_gives_scaled_identity() {
        let lvl = level(400);
        let z = [0.4, -1.1, 2.0];
        let eps = exact_eps_gaussian(&z, lvl, &[0.0; 3], &[1.0; 3]).unwrap();
        for (e, zi) in eps.iter().zip(z) {
            assert!((e - lvl.sigma() * zi).abs() < 1e-15);
        }
    }

    #[test]
    fn eps_vanishes_at_scaled_mean() {
        let lvl = level(250);
        let mean = [0.3, -0.7];
        let z: Vec<f64> = mean.iter().map(|m| lvl.alpha() * m).collect();
        let eps = exact_eps_gaussian(&z, lvl, &mean, &[0.2, 0.5]).unwrap();
        assert!(eps.iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn gaussian_matches_finite_difference_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let lvl = level(rng.random_range(0..1000));
            let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..2.0)).collect();
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let eps = exact_eps_gaussian(&z, lvl, &mean, &var).unwrap();
            let fd = fd_eps(|x| gaussian_log_density(x, lvl, &mean, &var), &z, lvl);
            assert!(rel_err(&eps, &fd) < 1e-5);
        }
    }

    #[test]
    fn gaussian_rejects_bad_variance() {
        assert!(exact_eps_gaussian(&[0.0], level(1), &[0.0], &[0.0]).is_err());
        assert!(exact_eps_gaussian(&[0.0, 1.0], level(1), &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn single_component_mixture_is_gaussian() {
        let lvl = level(600);
        let prior = GmmPrior::new(vec![1.0], vec![vec![0.5, -0.2]], vec![vec![0.3, 0.9]]).unwrap();
        let z = [0.1, 0.8];
        let a = exact_eps_gmm(&z, lvl, &prior).unwrap();
        let b = exact_eps_gaussian(&z, lvl, &prior.means[0], &prior.variances[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separated_mixture_picks_nearest_component() {
        let lvl = level(100);
        let prior = GmmPrior::new(
            vec![0.5, 0.5],
            vec![vec![-10.0, 0.0], vec![10.0, 0.0]],
            vec![vec![0.01, 0.01], vec![0.01, 0.01]],
        )
        .unwrap();
        let z = [-10.0 * lvl.alpha() + 0.01, 0.02];
        let resp = prior.responsibilities(&z, lvl).unwrap();
        // log-odds oracle: difference of quadratic forms between the two components
        let s2 = lvl.alpha_bar * 0.01 + 1.0 - lvl.alpha_bar;
        let d0 = (z[0] + 10.0 * lvl.alpha()).powi(2);
        let d1 = (z[0] - 10.0 * lvl.alpha()).powi(2);
        let log_odds = 0.5 * (d1 - d0) / s2;
        assert!((resp[0] - 1.0 / (1.0 + (-log_odds).exp())).abs() < 1e-15);
        assert!(resp[0] > 1.0 - 1e-12);
        let eps = exact_eps_gmm(&z, lvl, &prior).unwrap();
        let single = exact_eps_gaussian(&z, lvl, &prior.means[0], &prior.variances[0]).unwrap();
        assert!(rel_err(&eps, &single) < 1e-8);
    }

    #[test]
    fn mixture_matches_finite_difference_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let lvl = level(rng.random_range(0..1000));
            let w = rng.random_range(0.1..0.9);
            let prior = GmmPrior::new(
                vec![w, 1.0 - w],
                (0..2).map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
                (0..2).map(|_| (0..2).map(|_| rng.random_range(0.05..1.0)).collect()).collect(),
            )
            .unwrap();
            let z: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let log_p = |x: &[f64]| {
                let terms: Vec<f64> = (0..2)
                    .map(|k| prior.weights[k].ln() + gaussian_log_density(x, lvl, &prior.means[k], &prior.variances[k]))
                    .collect();
                let m = terms[0].max(terms[1]);
                m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
            };
            let eps = exact_eps_gmm(&z, lvl, &prior).unwrap();
            assert!(rel_err(&eps, &fd_eps(log_p, &z, lvl)) < 1e-5);
        }
    }

    #[test]
    fn mixture_validation() {
        assert!(GmmPrior::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(GmmPrior::new(vec![1.0], vec![vec![0.0]], vec![vec![-1.0]]).is_err());
        assert!(GmmPrior::new(vec![], vec![], vec![]).is_err());
    }

    fn dense_precision(prior: &SmoothVideoPrior) -> DMatrix<f64> {
        let (nf, d) = (prior.frame_count(), prior.frame_dim());
        let mut lap = DMatrix::<f64>::zeros(nf, nf);
        for f in 0..nf.saturating_sub(1) {
            lap[(f, f)] += 1.0;
            lap[(f + 1, f + 1)] += 1.0;
            lap[(f, f + 1)] -= 1.0;
            lap[(f + 1, f)] -= 1.0;
        }
        let mut p = DMatrix::<f64>::zeros(nf * d, nf * d);
        for a in 0..nf {
            for b in 0..nf {
                for j in 0..d {
                    p[(a * d + j, b * d + j)] = prior.coupling() * lap[(a, b)];
                }
            }
        }
        p + DMatrix::identity(nf * d, nf * d) * prior.anchor()
    }

    fn dense_eps(prior: &SmoothVideoPrior, z: &[f64], lvl: NoiseLevel) -> Vec<f64> {
        let n = z.len();
        let cov = dense_precision(prior).try_inverse().unwrap() * lvl.alpha_bar
            + DMatrix::identity(n, n) * (1.0 - lvl.alpha_bar);
        let sol = cov.lu().solve(&DVector::from_column_slice(z)).unwrap();
        sol.iter().map(|v| lvl.sigma() * v).collect()
    }

    #[test]
    fn video_prior_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let prior = SmoothVideoPrior::new(rng.random_range(0.5..20.0), rng.random_range(0.01..1.0), 1, 4).unwrap();
            let lvl = level(rng.random_range(0..1000));
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eps = exact_eps_video(&z, lvl, &prior).unwrap();
            assert!(rel_err(&eps, &dense_eps(&prior, &z, lvl)) < 1e-10);
        }
    }

    #[test]
    fn video_prior_decoupled_is_gaussian() {
        let prior = SmoothVideoPrior::new(0.0, 0.25, 2, 3).unwrap();
        let lvl = level(300);
        let z = [0.3, -0.2, 1.0, 0.5, -0.9, 0.1];
        let eps = exact_eps_video(&z, lvl, &prior).unwrap();
        let expected = exact_eps_gaussian(&z, lvl, &[0.0; 6], &[4.0; 6]).unwrap();
        assert!(rel_err(&eps, &expected) < 1e-13);
    }

    #[test]
    fn video_prior_constant_frames_see_anchor_only() {
        let prior = SmoothVideoPrior::new(10.0, 0.5, 2, 5).unwrap();
        let lvl = level(200);
        let z: Vec<f64> = (0..5).flat_map(|_| [0.7, -0.3]).collect();
        let eps = exact_eps_video(&z, lvl, &prior).unwrap();
        let expected = exact_eps_gaussian(&z, lvl, &[0.0; 10], &[2.0; 10]).unwrap();
        assert!(rel_err(&eps, &expected) < 1e-13);
    }

    #[test]
    fn video_prior_matches_finite_difference_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prior = SmoothVideoPrior::new(10.0, 0.01, 2, 4).unwrap();
        for _ in 0..10 {
            let lvl = level(rng.random_range(0..1000));
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let n = z.len();
            let cov = dense_precision(&prior).try_inverse().unwrap() * lvl.alpha_bar
                + DMatrix::identity(n, n) * (1.0 - lvl.alpha_bar);
            let prec = cov.try_inverse().unwrap();
            let log_p = |x: &[f64]| {
                let v = DVector::from_column_slice(x);
                -0.5 * (v.transpose() * &prec * &v)[(0, 0)]
            };
            let eps = exact_eps_video(&z, lvl, &prior).unwrap();
            assert!(rel_err(&eps, &fd_eps(log_p, &z, lvl)) < 1e-5);
        }
    }

    #[test]
    fn video_prior_is_reversal_equivariant() {
        let prior = SmoothVideoPrior::new(3.0, 0.2, 2, 6).unwrap();
        let lvl = level(500);
        let z: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let rev = |v: &[f64]| -> Vec<f64> { v.chunks(2).rev().flatten().copied().collect() };
        let a = rev(&exact_eps_video(&z, lvl, &prior).unwrap());
        let b = exact_eps_video(&rev(&z), lvl, &prior).unwrap();
        assert!(rel_err(&a, &b) < 1e-13);
    }

    #[test]
    fn video_prior_rejects_non_pd() {
        assert!(SmoothVideoPrior::new(1.0, 0.0, 1, 3).is_err());
        assert!(SmoothVideoPrior::new(-1.0, 0.5, 1, 3).is_err());
    }

    #[test]
    fn target_map_traces_circle() {
        let m = PoseTargetMap { radius: 2.0 };
        let p = CameraPose::from_degrees(90.0, 0.0, 1.0).unwrap();
        let mu = m.target(&p, 2);
        assert!(mu[0].abs() < 1e-12 && (mu[1] - 2.0).abs() < 1e-12);
    }
}
