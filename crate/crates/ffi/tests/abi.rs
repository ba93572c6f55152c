use std::ffi::{c_char, CString};
use std::ptr;

use oodlab::checkpoint::save_model;
use oodlab::data::{save_data, DataFile};
use oodlab::{Activation, LabeledDataset, Matrix, Model, ModelSpec};
use oodlab_ffi::*;

fn fixture() -> (tempfile::TempDir, CString, CString, Model) {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(2, vec![4], 3, Activation::Relu).unwrap();
    let model = Model::init(spec, 11);
    let mpath = dir.path().join("m.ckpt");
    save_model(&model, &mpath).unwrap();
    let features = Matrix::from_vec(3, 2, vec![0.0, 1.0, -2.0, 0.5, 3.0, 3.0]).unwrap();
    let ds = LabeledDataset::new(features, vec![0, 2, 1], 3, "t").unwrap();
    let dpath = dir.path().join("d.data");
    save_data(&DataFile::Labeled(ds), &dpath).unwrap();
    let m = CString::new(mpath.to_str().unwrap()).unwrap();
    let d = CString::new(dpath.to_str().unwrap()).unwrap();
    (dir, m, d, model)
}

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { ood_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn model_round_trip_matches_library() {
    let (dir, mpath, dpath, model) = fixture();
    unsafe {
        let mut h: *mut OodModel = ptr::null_mut();
        assert_eq!(ood_model_load(mpath.as_ptr(), &mut h), OodStatus::OodOk);
        let (mut d, mut k) = (0usize, 0usize);
        assert_eq!(ood_model_input_dim(h, &mut d), OodStatus::OodOk);
        assert_eq!(ood_model_num_classes(h, &mut k), OodStatus::OodOk);
        assert_eq!((d, k), (2, 3));

        let x = [0.3, -1.0, 2.0, 2.0];
        let mut probs = [0.0; 6];
        assert_eq!(
            ood_model_predict(h, x.as_ptr(), 2, 2, probs.as_mut_ptr(), 6),
            OodStatus::OodOk
        );
        let expected = model
            .predict(&Matrix::from_vec(2, 2, x.to_vec()).unwrap())
            .unwrap();
        assert_eq!(&probs[..], expected.as_slice());

        let mut scores = [0.0; 2];
        assert_eq!(
            ood_model_max_prob(h, x.as_ptr(), 2, 2, scores.as_mut_ptr(), 2),
            OodStatus::OodOk
        );
        assert_eq!(scores[0], probs[..3].iter().cloned().fold(0.0, f64::max));

        let mut betas = [0.0; 2];
        let st = ood_model_betas(
            h,
            x.as_ptr(),
            2,
            2,
            3.0,
            OodSquash::OodSquashShifted,
            betas.as_mut_ptr(),
            2,
        );
        assert_eq!(st, OodStatus::OodOk);
        assert!(betas.iter().all(|b| (0.0..=1.0).contains(b)));

        let mut data: *mut OodDataset = ptr::null_mut();
        assert_eq!(
            ood_dataset_load(dpath.as_ptr(), &mut data),
            OodStatus::OodOk
        );
        let (mut rows, mut cols, mut labeled) = (0usize, 0usize, 0i32);
        assert_eq!(
            ood_dataset_shape(data, &mut rows, &mut cols, &mut labeled),
            OodStatus::OodOk
        );
        assert_eq!((rows, cols, labeled), (3, 2, 1));
        let mut labels = [0usize; 3];
        assert_eq!(
            ood_dataset_labels(data, labels.as_mut_ptr(), 3),
            OodStatus::OodOk
        );
        assert_eq!(labels, [0, 2, 1]);
        let mut feats = [0.0; 6];
        assert_eq!(
            ood_dataset_features(data, feats.as_mut_ptr(), 6),
            OodStatus::OodOk
        );
        assert_eq!(feats[2], -2.0);
        let mut ds_scores = [0.0; 3];
        assert_eq!(
            ood_model_score_dataset(h, data, ds_scores.as_mut_ptr(), 3),
            OodStatus::OodOk
        );

        let saved = CString::new(dir.path().join("copy.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(ood_model_save(h, saved.as_ptr()), OodStatus::OodOk);
        assert_eq!(
            std::fs::read_to_string(dir.path().join("copy.ckpt")).unwrap(),
            std::fs::read_to_string(dir.path().join("m.ckpt")).unwrap()
        );

        ood_dataset_free(data);
        ood_model_free(h);
        ood_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let (_dir, mpath, dpath, _) = fixture();
    unsafe {
        let mut h: *mut OodModel = ptr::null_mut();
        let missing = CString::new("/nonexistent/m.ckpt").unwrap();
        assert_eq!(
            ood_model_load(missing.as_ptr(), &mut h),
            OodStatus::OodErrIo
        );
        assert!(h.is_null());
        assert!(last_error().contains("nonexistent"));

        assert_eq!(
            ood_model_load(dpath.as_ptr(), &mut h),
            OodStatus::OodErrParse
        );
        assert_eq!(
            ood_model_load(ptr::null(), &mut h),
            OodStatus::OodErrNullPointer
        );
        assert_eq!(
            ood_model_load(mpath.as_ptr(), ptr::null_mut()),
            OodStatus::OodErrNullPointer
        );

        assert_eq!(ood_model_load(mpath.as_ptr(), &mut h), OodStatus::OodOk);
        assert_eq!(last_error(), "");
        let x = [0.0; 4];
        let mut probs = [0.0; 5];
        assert_eq!(
            ood_model_predict(h, x.as_ptr(), 2, 2, probs.as_mut_ptr(), 5),
            OodStatus::OodErrBufferTooSmall
        );
        assert_eq!(
            ood_model_predict(h, x.as_ptr(), 1, 4, probs.as_mut_ptr(), 5),
            OodStatus::OodErrInvalidInput
        );
        ood_model_free(h);

        let mut v = 0.0;
        assert_eq!(
            ood_squash(1.5, 10.0, OodSquash::OodSquashCentered, 0, &mut v),
            OodStatus::OodErrInvalidInput
        );
        assert_eq!(
            ood_kl_uniform(ptr::null(), 0, &mut v),
            OodStatus::OodErrInvalidInput
        );
        assert_eq!(
            ood_detection_accuracy(ptr::null(), 0, ptr::null(), 0, &mut v),
            OodStatus::OodErrInvalidInput
        );
    }
}

#[test]
fn scalar_functions() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(
            ood_squash(0.1, 10.0, OodSquash::OodSquashCentered, 0, &mut v),
            OodStatus::OodOk
        );
        assert!((v - 0.964028).abs() < 1e-6);
        assert_eq!(
            ood_squash(0.1, 10.0, OodSquash::OodSquashShifted, 0, &mut v),
            OodStatus::OodOk
        );
        assert!((v - 0.537883).abs() < 1e-6);

        let u = [0.25; 4];
        assert_eq!(ood_kl_uniform(u.as_ptr(), 4, &mut v), OodStatus::OodOk);
        assert!(v.abs() < 1e-12);

        let a = [0.9, 0.8];
        let b = [0.1, 0.85];
        assert_eq!(
            ood_detection_accuracy(a.as_ptr(), 2, b.as_ptr(), 2, &mut v),
            OodStatus::OodOk
        );
        assert_eq!(v, 0.75);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"oodlab.h\"\nint main(void) { double v; return ood_squash(0.5, 1.0, OOD_SQUASH_SHIFTED, 0, &v) == OOD_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
