//! Summary statistics for low-dimensional trajectory runs.

use crate::diffusion::LatentFrames;

/// Temporal roughness `sum_f |z^{f+1} - z^f|^2`.
pub fn roughness(frames: &LatentFrames) -> f64 {
    let rows: Vec<&[f64]> = frames.frames().collect();
    // fold from +0.0: an empty f64 sum is -0.0
    rows.windows(2).map(|w| sq_dist(w[0], w[1])).fold(0.0, |a, b| a + b)
}

/// Mean squared step along `anchor, z^1, ..., z^F`, where `anchor` stands in
/// for the input view. Defined for a single frame, so runs with different
/// frame counts over the same path are comparable.
pub fn anchored_step_roughness(anchor: &[f64], frames: &LatentFrames) -> f64 {
    let mut prev = anchor;
    let mut total = 0.0;
    for row in frames.frames() {
        total += sq_dist(prev, row);
        prev = row;
    }
    total / frames.frame_count() as f64
}

/// Mean Euclidean distance of each frame to its target.
pub fn mean_target_distance(frames: &LatentFrames, targets: &[Vec<f64>]) -> f64 {
    let n = frames.frame_count();
    frames.frames().zip(targets).map(|(z, mu)| sq_dist(z, mu).sqrt()).sum::<f64>() / n as f64
}

/// Distance of the last frame to its target.
pub fn final_target_distance(frames: &LatentFrames, targets: &[Vec<f64>]) -> f64 {
    let last = frames.frame_count() - 1;
    sq_dist(frames.frame(last), &targets[last]).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
