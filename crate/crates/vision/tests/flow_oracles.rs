use vivid_core::geometry::CameraPose;
use vivid_vision::image::checkerboard;
use vivid_vision::metrics::{for_thresholds, ForConfig};
use vivid_vision::scene::{render, RenderConfig, SceneObject, ShapeKind};
use vivid_vision::{estimate_flow, for_k, gt_flow, FlowField, Image};

fn pose(az: f64) -> CameraPose {
    CameraPose::from_degrees(az, 15.0, 3.0).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn synthetic_shift_is_recovered() {
    let a = checkerboard(128, 128, 16.0, 0.4, 0.0, 0.0);
    let b = checkerboard(128, 128, 16.0, 0.4, 5.0, -3.0);
    let f = estimate_flow(&a, &b).unwrap();
    let idx: Vec<usize> = (0..128 * 128).filter(|&i| f.is_valid(i)).collect();
    assert!(idx.len() > 128 * 128 / 2);
    let mu = median(idx.iter().map(|&i| f.u()[i] as f64).collect());
    let mv = median(idx.iter().map(|&i| f.v()[i] as f64).collect());
    assert!((mu - 5.0).abs() < 0.5 && (mv + 3.0).abs() < 0.5, "median flow ({mu}, {mv})");
}

#[test]
fn twelve_pixel_shift_separates_thresholds() {
    let gt = checkerboard(256, 256, 32.0, 0.4, 0.0, 0.0);
    let gen = checkerboard(256, 256, 32.0, 0.4, 12.0, 0.0);
    let r = for_thresholds(&gen, &gt, &[8.0, 16.0], None, &ForConfig::default()).unwrap();
    assert!(r[0] >= 0.9, "FOR_8 = {}", r[0]);
    assert!(r[1] <= 0.1, "FOR_16 = {}", r[1]);
}

#[test]
fn common_shift_leaves_for_unchanged() {
    let gt = checkerboard(128, 128, 16.0, 0.4, 0.0, 0.0);
    let gen = checkerboard(128, 128, 16.0, 0.4, 3.0, 2.0);
    let gt_s = checkerboard(128, 128, 16.0, 0.4, 7.0, 4.0);
    let gen_s = checkerboard(128, 128, 16.0, 0.4, 10.0, 6.0);
    for k in [2.0, 8.0] {
        let a = for_k(&gen, &gt, k, None).unwrap();
        let b = for_k(&gen_s, &gt_s, k, None).unwrap();
        assert!((a - b).abs() <= 0.05, "k={k}: {a} vs {b}");
    }
}

fn render_pair(obj: &SceneObject, a: f64, b: f64, cfg: &RenderConfig) -> (Image, Image, FlowField) {
    let ra = render(obj, &pose(a), cfg).unwrap();
    let rb = render(obj, &pose(b), cfg).unwrap();
    let f = gt_flow(obj, &pose(a), &pose(b), cfg).unwrap();
    (ra.image, rb.image, f)
}

#[test]
fn estimated_flow_matches_ground_truth_at_two_degrees() {
    let cfg = RenderConfig::default();
    for kind in [ShapeKind::Sphere, ShapeKind::Cuboid] {
        let obj = SceneObject { kind, ..Default::default() };
        let (a, b, gt) = render_pair(&obj, 0.0, 2.0, &cfg);
        let est = estimate_flow(&a, &b).unwrap();
        let epe = est.endpoint_errors(&gt);
        assert!(epe.len() > 1000);
        let m = median(epe);
        assert!(m < 1.5, "{kind:?}: median EPE {m}");
    }
}

/// Samples `b` at `x + flow(x)` and compares with `a` on valid pixels.
fn backward_warp_error(a: &Image, b: &Image, f: &FlowField) -> f64 {
    let w = a.width();
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..w * a.height() {
        if !f.is_valid(i) {
            continue;
        }
        let (x, y) = ((i % w) as f64 + f.u()[i] as f64, (i / w) as f64 + f.v()[i] as f64);
        for c in 0..3 {
            total += (b.sample(c, x, y) - a.get(c, i / w, i % w)).abs();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn backward_warp_reproduces_source() {
    let cfg = RenderConfig::default();
    for kind in [ShapeKind::Sphere, ShapeKind::Cuboid] {
        let obj = SceneObject { kind, ..Default::default() };
        for gap in [1.0, 5.0, 10.0, -10.0] {
            let (a, b, f) = render_pair(&obj, 20.0, 20.0 + gap, &cfg);
            assert!(f.valid_count() > 5000);
            let e = backward_warp_error(&a, &b, &f);
            assert!(e < 2.0 / 255.0, "{kind:?} gap {gap}: {e}");
        }
    }
}

#[test]
fn flow_magnitude_grows_with_azimuth_gap() {
    let cfg = RenderConfig { width: 128, height: 128, ..Default::default() };
    let obj = SceneObject::default();
    let mean_mag = |d: f64| {
        let f = gt_flow(&obj, &pose(0.0), &pose(d), &cfg).unwrap();
        let v: Vec<f64> = (0..128 * 128).filter(|&i| f.is_valid(i)).map(|i| f.magnitude(i)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let m: Vec<f64> = [1.0, 2.0, 4.0].into_iter().map(mean_mag).collect();
    assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
    // direct computation: a point at the sphere's front centre moves by
    // about focal * R * sin(delta) / (d - R) pixels
    let focal = 64.0 / (20f64.to_radians()).tan();
    let centre = focal * 0.8 * 2f64.to_radians().sin() / (3.0 - 0.8);
    assert!(m[1] < centre && m[1] > 0.3 * centre, "{} vs {centre}", m[1]);
}

#[test]
fn forward_then_backward_returns_home() {
    let cfg = RenderConfig::default();
    let obj = SceneObject::default();
    let fab = gt_flow(&obj, &pose(10.0), &pose(16.0), &cfg).unwrap();
    let fba = gt_flow(&obj, &pose(16.0), &pose(10.0), &cfg).unwrap();
    let w = cfg.width;
    let (mut worst, mut checked) = (0.0f64, 0);
    for i in 0..w * cfg.height {
        if !fab.is_valid(i) {
            continue;
        }
        let (x, y) = ((i % w) as f64 + fab.u()[i] as f64, (i / w) as f64 + fab.v()[i] as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
        if corners.iter().any(|&(cx, cy)| cx >= w || cy >= cfg.height || !fba.is_valid(cy * w + cx)) {
            continue;
        }
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let interp = |a: &[f32]| {
            let g = |cx: usize, cy: usize| a[cy * w + cx] as f64;
            (g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx) * (1.0 - fy) + (g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx) * fy
        };
        let (rx, ry) = (x + interp(fba.u()), y + interp(fba.v()));
        worst = worst.max((rx - (i % w) as f64).hypot(ry - (i / w) as f64));
        checked += 1;
    }
    assert!(checked > 5000);
    assert!(worst < 0.5, "{worst}");
}
