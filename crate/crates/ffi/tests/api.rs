use std::ffi::{c_char, CStr, CString};
use std::process::Command;
use std::ptr;

use refpose::bench::shapes::{generate_shape, ShapeSpec};
use refpose::bench::{rotation_error, translation_error};
use refpose::RigidTransform;
use refpose_ffi::*;

fn cloud_from(points: &[[f64; 3]]) -> *mut RpCloud {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rp_cloud_new(flat.as_ptr(), points.len(), &mut out) }, RpStatus::Ok);
    out
}

fn last_error() -> String {
    let p = rp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn recovers_a_full_overlap_pose() {
    let model = generate_shape(&ShapeSpec {
        points: 800,
        ..ShapeSpec::default()
    })
    .unwrap();
    let truth = RigidTransform::from_axis_angle(&nalgebra::Vector3::new(0.3, -1.0, 0.5).normalize(), 0.7, nalgebra::Vector3::new(0.2, 0.1, -0.3));
    let q: Vec<[f64; 3]> = model.points().iter().map(|p| [p.x, p.y, p.z]).collect();
    let p: Vec<[f64; 3]> = model
        .points()
        .iter()
        .map(|x| {
            let y = truth.apply_point(x);
            [y.x, y.y, y.z]
        })
        .collect();
    let (qc, pc) = (cloud_from(&q), cloud_from(&p));
    assert_eq!(unsafe { rp_cloud_len(qc) }, 800);

    let cfg = CString::new(r#"{"n_fine": 800, "seed": 3}"#).unwrap();
    let mut pipeline = ptr::null_mut();
    assert_eq!(unsafe { rp_pipeline_new(cfg.as_ptr(), &mut pipeline) }, RpStatus::Ok);
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { rp_pipeline_estimate(pipeline, qc, pc, &mut est) }, RpStatus::Ok);

    let (mut r, mut t) = ([0.0; 9], [0.0; 3]);
    assert_eq!(unsafe { rp_estimate_pose(est, r.as_mut_ptr(), t.as_mut_ptr()) }, RpStatus::Ok);
    let got = RigidTransform::new(nalgebra::Matrix3::from_row_slice(&r), t.into()).unwrap();
    assert!(rotation_error(&got, &truth) < 0.5);
    assert!(translation_error(&got, &truth) < 0.01);
    assert!(unsafe { rp_estimate_correspondences(est) } >= 3);
    assert!(unsafe { rp_estimate_residual(est) }.is_finite());

    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { rp_estimate_to_json(est, &mut json) }, RpStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(parsed.get("rotation").is_some());

    unsafe {
        rp_string_free(json);
        rp_estimate_free(est);
        rp_pipeline_free(pipeline);
        rp_cloud_free(qc);
        rp_cloud_free(pc);
    }
}

#[test]
fn reports_errors_with_codes_and_messages() {
    let mut cloud = ptr::null_mut();
    assert_eq!(unsafe { rp_cloud_new(ptr::null(), 3, &mut cloud) }, RpStatus::NullPointer);
    assert!(last_error().contains("xyz"));
    assert!(cloud.is_null());

    let empty: [f64; 0] = [];
    assert_eq!(unsafe { rp_cloud_new(empty.as_ptr(), 0, &mut cloud) }, RpStatus::InvalidArgument);
    assert!(last_error().contains("empty"));

    let bad = CString::new(r#"{"n_fine": "many"}"#).unwrap();
    let mut pipeline = ptr::null_mut();
    assert_eq!(unsafe { rp_pipeline_new(bad.as_ptr(), &mut pipeline) }, RpStatus::Parse);

    let missing = CString::new("/nonexistent/cloud.ply").unwrap();
    assert_eq!(unsafe { rp_cloud_load_ply(missing.as_ptr(), &mut cloud) }, RpStatus::Io);

    let line: Vec<[f64; 3]> = (0..50).map(|i| [i as f64, 0.0, 0.0]).collect();
    let c = cloud_from(&line);
    assert_eq!(unsafe { rp_pipeline_new(ptr::null(), &mut pipeline) }, RpStatus::Ok);
    assert!(rp_last_error().is_null());
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { rp_pipeline_estimate(pipeline, c, c, &mut est) }, RpStatus::DegenerateGeometry);
    assert_eq!(unsafe { rp_pipeline_estimate(pipeline, ptr::null(), c, &mut est) }, RpStatus::NullPointer);
    assert!(est.is_null());

    assert_eq!(unsafe { rp_estimate_correspondences(ptr::null()) }, 0);
    assert!(unsafe { rp_estimate_residual(ptr::null()) }.is_nan());
    unsafe {
        rp_pipeline_free(pipeline);
        rp_cloud_free(c);
        rp_cloud_free(ptr::null_mut());
        rp_estimate_free(ptr::null_mut());
    }
}

#[test]
fn status_strings_are_static() {
    let s = unsafe { CStr::from_ptr(rp_status_string(RpStatus::NoPose)) };
    assert_eq!(s.to_str().unwrap(), "no pose found");
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"refpose.h\"\n\
         int probe(void) {\n\
           RpCloud *c = NULL; RpPipeline *p = NULL; RpEstimate *e = NULL;\n\
           double xyz[9] = {0}; double r[9], t[3];\n\
           if (rp_cloud_new(xyz, 3, &c) != RP_STATUS_OK) return 1;\n\
           if (rp_pipeline_new(NULL, &p) != RP_STATUS_OK) return 2;\n\
           if (rp_pipeline_estimate(p, c, c, &e) == RP_STATUS_OK) rp_estimate_pose(e, r, t);\n\
           rp_estimate_free(e); rp_pipeline_free(p); rp_cloud_free(c);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .status()
        {
            Ok(s) => s,
            Err(_) => {
                eprintln!("{compiler} not found, skipping");
                continue;
            }
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
