use std::path::Path;

use proptest::prelude::*;
use vivid_core::geometry::CameraPose;
use vivid_vision::flow::{decode_flo, encode_flo};
use vivid_vision::image::checkerboard;
use vivid_vision::metrics::{read_metrics_csv, write_metrics_csv, ForConfig};
use vivid_vision::scene::{DatasetProtocol, RenderConfig, SceneObject, ViewRecord};
use vivid_vision::{evaluate_pair_set, for_k, generate_dataset, read_flo, write_flo, FlowField, VisionError};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn flo_round_trip_is_bitwise(
        w in 1usize..12,
        h in 1usize..12,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = w * h;
        let u: Vec<f32> = (0..n).map(|_| rng.random_range(-500.0f32..500.0)).collect();
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-500.0f32..500.0)).collect();
        let field = FlowField::new(w, h, u, v, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        write_flo(&field, &path).unwrap();
        let back = read_flo(&path).unwrap();
        prop_assert_eq!(back.width(), w);
        prop_assert!(back.u().iter().zip(field.u()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(back.v().iter().zip(field.v()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(std::fs::read(&path).unwrap(), encode_flo(&field));
    }

    #[test]
    fn corrupt_flo_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_flo(&bytes);
    }
}

#[test]
fn read_flo_reports_path_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.flo");
    std::fs::write(&path, [0u8; 20]).unwrap();
    match read_flo(&path) {
        Err(VisionError::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("{other:?}"),
    }
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_layout_and_determinism() {
    let cfg = RenderConfig { width: 64, height: 64, ..Default::default() };
    let obj = SceneObject::default();
    let base = CameraPose::from_degrees(0.0, 30.0, 3.0).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let records = generate_dataset(&obj, &base, &cfg, &DatasetProtocol::default(), a.path()).unwrap();
    generate_dataset(&obj, &base, &cfg, &DatasetProtocol::default(), b.path()).unwrap();
    assert_eq!(records.len(), 25);
    assert_eq!(records[12].relative_azimuth_deg, 0.0);
    assert!((records[12].pose.elevation().to_degrees() - 15.0).abs() < 1e-12);
    let files = dir_bytes(a.path());
    assert_eq!(files, dir_bytes(b.path()));
    let count = |prefix: &str| files.iter().filter(|(n, _)| n.starts_with(prefix)).count();
    assert_eq!(count("views/view_"), 25);
    assert_eq!(count("masks/mask_"), 25);
    assert_eq!(count("flows/flow_00_to_"), 25);
    assert!(a.path().join("views/view_24.png").exists());
    let parsed: Vec<ViewRecord> = serde_json::from_slice(&std::fs::read(a.path().join("poses.json")).unwrap()).unwrap();
    let rel: Vec<f64> = parsed.iter().map(|r| r.relative_azimuth_deg).collect();
    assert_eq!(&rel[..3], &[-45.0, -41.25, -37.5]);
    assert_eq!(rel[24], 45.0);
    let self_flow = read_flo(&a.path().join("flows/flow_00_to_00.flo")).unwrap();
    assert!((0..64 * 64).filter(|&i| self_flow.is_valid(i)).all(|i| self_flow.magnitude(i) < 1e-6));
}

#[test]
fn pair_set_identity_composition_and_csv() {
    let gt = tempfile::tempdir().unwrap();
    let gen = tempfile::tempdir().unwrap();
    for i in 0..3 {
        let name = format!("view_{i:02}.png");
        checkerboard(96, 96, 12.0, 0.4, 0.0, 0.0).write_png(&gt.path().join(&name)).unwrap();
        checkerboard(96, 96, 12.0, 0.4, 4.0 * i as f64, 0.0).write_png(&gen.path().join(&name)).unwrap();
    }
    let same = evaluate_pair_set(gt.path(), gt.path(), None, &ForConfig::default()).unwrap();
    assert!(same.iter().all(|r| r.for_8 == 0.0 && r.for_16 == 0.0 && r.ssim == 1.0 && r.psnr == 99.0));

    let reports = evaluate_pair_set(gen.path(), gt.path(), None, &ForConfig::default()).unwrap();
    for r in &reports {
        let a = vivid_vision::Image::read_png(&gen.path().join(&r.name)).unwrap();
        let b = vivid_vision::Image::read_png(&gt.path().join(&r.name)).unwrap();
        assert_eq!(r.for_8, for_k(&a, &b, 8.0, None).unwrap());
        assert_eq!(r.for_16, for_k(&a, &b, 16.0, None).unwrap());
        assert!(r.for_16 <= r.for_8);
    }

    let csv = gen.path().join("metrics.csv");
    write_metrics_csv(&csv, &reports).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("name,psnr,ssim,for_8,for_16\n"));
    let rows = read_metrics_csv(&csv).unwrap();
    assert_eq!(rows.len(), reports.len() + 1);
    for (r, (name, vals)) in reports.iter().zip(&rows) {
        assert_eq!(&r.name, name);
        assert_eq!(vals, &[r.psnr, r.ssim, r.for_8, r.for_16]);
    }
    assert_eq!(rows.last().unwrap().0, "mean");
}

#[test]
fn pair_set_lists_unmatched_names() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let img = checkerboard(32, 32, 8.0, 0.4, 0.0, 0.0);
    img.write_png(&a.path().join("x.png")).unwrap();
    img.write_png(&b.path().join("y.png")).unwrap();
    let err = evaluate_pair_set(a.path(), b.path(), None, &ForConfig::default()).unwrap_err().to_string();
    assert!(err.contains("x.png") && err.contains("y.png"), "{err}");
}
