use std::ffi::{CStr, CString};
use std::ptr;

use neuropipe::geometry::euler_to_transform;
use neuropipe_ffi::*;

fn msg() -> String {
    let p = np_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn cube(dims: [usize; 3], lo: [usize; 3], hi: [usize; 3], value: f64) -> Vec<f64> {
    let mut v = vec![0.0; dims.iter().product()];
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                v[i + dims[0] * (j + dims[1] * k)] = value;
            }
        }
    }
    v
}

unsafe fn volume(dims: [usize; 3], spacing: [f64; 3], data: &[f64]) -> *mut NpVolume {
    let mut v = ptr::null_mut();
    let st = np_volume_from_data(dims.as_ptr(), spacing.as_ptr(), [0.0; 3].as_ptr(), data.as_ptr(), data.len(), &mut v);
    assert_eq!(st, NpStatus::Ok);
    v
}

#[test]
fn transforms_match_core() {
    unsafe {
        let (a, b) = (
            euler_to_transform([0.2, -0.1, 0.3], [1.0, 2.0, 3.0], [5.0, 0.0, 0.0]),
            euler_to_transform([0.0, 0.4, 0.0], [-3.0, 0.0, 1.0], [0.0; 3]),
        );
        let flat = |t: &neuropipe::RigidTransform| t.rows().concat();
        let (mut ta, mut tb, mut tc, mut ti) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(np_transform_from_matrix(flat(&a).as_ptr(), &mut ta), NpStatus::Ok);
        assert_eq!(np_transform_euler([0.0, 0.4, 0.0].as_ptr(), [-3.0, 0.0, 1.0].as_ptr(), [0.0; 3].as_ptr(), &mut tb), NpStatus::Ok);
        assert_eq!(np_transform_compose(ta, tb, &mut tc), NpStatus::Ok);
        assert_eq!(np_transform_invert(tc, &mut ti), NpStatus::Ok);

        let mut m = [0.0; 16];
        assert_eq!(np_transform_matrix(tc, m.as_mut_ptr()), NpStatus::Ok);
        assert_eq!(m.to_vec(), flat(&neuropipe::compose(&a, &b)));

        let p = [10.0, -4.0, 7.5];
        let (mut q, mut back) = ([0.0; 3], [0.0; 3]);
        assert_eq!(np_transform_apply_point(tc, p.as_ptr(), q.as_mut_ptr()), NpStatus::Ok);
        assert_eq!(np_transform_apply_point(ti, q.as_ptr(), back.as_mut_ptr()), NpStatus::Ok);
        assert_eq!(q, neuropipe::compose(&a, &b).apply_point(p));
        assert!((0..3).all(|i| (back[i] - p[i]).abs() < 1e-9));

        let dir = tempfile::tempdir().unwrap();
        let path = cstr(&dir.path().join("t.toml"));
        let mut tr = ptr::null_mut();
        assert_eq!(np_transform_write(tc, path.as_ptr()), NpStatus::Ok);
        assert_eq!(np_transform_read(path.as_ptr(), &mut tr), NpStatus::Ok);
        let mut m2 = [0.0; 16];
        np_transform_matrix(tr, m2.as_mut_ptr());
        assert_eq!(m, m2);

        for t in [ta, tb, tc, ti, tr] {
            np_transform_free(t);
        }
    }
}

#[test]
fn non_rigid_matrix_is_rejected() {
    unsafe {
        let mut m = [0.0; 16];
        for i in 0..4 {
            m[5 * i] = 1.0;
        }
        m[0] = 2.0;
        let mut t = ptr::null_mut();
        assert_eq!(np_transform_from_matrix(m.as_ptr(), &mut t), NpStatus::Geometry);
        assert!(t.is_null());
        assert!(!msg().is_empty());
    }
}

#[test]
fn masks_and_metrics() {
    unsafe {
        let dims = [8, 8, 8];
        // 2x2x2 cube against a 2x2x4 box sharing it: dice = 2*8/(8+16).
        let a = volume(dims, [1.0; 3], &cube(dims, [2; 3], [4; 3], 1.0));
        let b = volume(dims, [1.0; 3], &cube(dims, [2; 3], [4, 4, 6], 1.0));
        let (mut ma, mut mb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(np_mask_extract(a, 0.5, &mut ma), NpStatus::Ok);
        assert_eq!(np_mask_extract(b, 0.5, &mut mb), NpStatus::Ok);
        let mut n = 0;
        np_mask_count(mb, &mut n);
        assert_eq!(n, 16);

        let (mut d, mut h) = (0.0, 0.0);
        assert_eq!(np_dice(ma, mb, &mut d), NpStatus::Ok);
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(np_hausdorff95(ma, mb, &mut h), NpStatus::Ok);
        assert_eq!(h, 2.0);
        assert_eq!(np_hausdorff95(ma, ma, &mut h), NpStatus::Ok);
        assert_eq!(h, 0.0);

        let (mut r, mut psnr) = (0.0, 0.0);
        assert_eq!(np_pearson(a, a, mb, &mut r), NpStatus::Ok);
        assert_eq!(r, 1.0);
        assert_eq!(np_psnr(a, a, mb, &mut psnr), NpStatus::Ok);
        assert_eq!(psnr, 200.0);

        // Grid mismatch surfaces as an error with a message.
        let c = volume([4, 4, 4], [1.0; 3], &[1.0; 64]);
        let mut mc = ptr::null_mut();
        np_mask_extract(c, 0.5, &mut mc);
        assert_ne!(np_dice(ma, mc, &mut d), NpStatus::Ok);
        assert!(!msg().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = cstr(&dir.path().join("m.nii.gz"));
        let mut back = ptr::null_mut();
        assert_eq!(np_mask_write(mb, path.as_ptr()), NpStatus::Ok);
        assert_eq!(np_mask_read(path.as_ptr(), &mut back), NpStatus::Ok);
        np_dice(mb, back, &mut d);
        assert_eq!(d, 1.0);

        for m in [ma, mb, mc, back] {
            np_mask_free(m);
        }
        for v in [a, b, c] {
            np_volume_free(v);
        }
    }
}

#[test]
fn volume_io_and_resampling() {
    unsafe {
        let dims = [5, 4, 3];
        let data: Vec<f64> = (0..60).map(|i| i as f64 * 0.5 - 7.0).collect();
        let v = volume(dims, [1.0, 1.5, 2.0], &data);
        let dir = tempfile::tempdir().unwrap();
        let path = cstr(&dir.path().join("v.nii"));
        assert_eq!(np_volume_write(v, path.as_ptr(), false), NpStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(np_volume_read(path.as_ptr(), &mut r), NpStatus::Ok);
        let mut d = [0usize; 3];
        np_volume_dims(r, d.as_mut_ptr());
        assert_eq!(d, dims);
        let mut len = 0;
        let p = np_volume_data(r, &mut len);
        assert_eq!(std::slice::from_raw_parts(p, len), &data[..]);

        let mut same = ptr::null_mut();
        assert_eq!(np_resample(v, ptr::null(), v, NpInterpolation::Trilinear, 0.0, &mut same), NpStatus::Ok);
        let p = np_volume_data(same, &mut len);
        assert_eq!(std::slice::from_raw_parts(p, len), &data[..]);

        // One voxel shift along x with nearest interpolation.
        let mut t = ptr::null_mut();
        np_transform_euler([0.0; 3].as_ptr(), [1.0, 0.0, 0.0].as_ptr(), [0.0; 3].as_ptr(), &mut t);
        let mut moved = ptr::null_mut();
        assert_eq!(np_resample(v, t, v, NpInterpolation::Nearest, -1.0, &mut moved), NpStatus::Ok);
        let out = std::slice::from_raw_parts(np_volume_data(moved, &mut len), len);
        assert_eq!(out[0], -1.0);
        assert_eq!(out[1], data[0]);

        let missing = CString::new("/nonexistent/x.nii").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(np_volume_read(missing.as_ptr(), &mut none), NpStatus::Io);
        assert!(msg().contains("/nonexistent/x.nii"));

        np_transform_free(t);
        for v in [v, r, same, moved] {
            np_volume_free(v);
        }
    }
}

#[test]
fn registration_of_identical_images() {
    unsafe {
        let dims = [24, 24, 24];
        let mut data = cube(dims, [6, 7, 8], [18, 16, 17], 100.0);
        for (n, x) in data.iter_mut().enumerate() {
            *x += (n % 7) as f64;
        }
        let v = volume(dims, [2.0; 3], &data);
        let (mut t, mut metric) = (ptr::null_mut(), 0.0);
        assert_eq!(np_register_rigid(v, v, NpMetric::Ncc, 3, &mut t, &mut metric), NpStatus::Ok);
        let mut m = [0.0; 16];
        np_transform_matrix(t, m.as_mut_ptr());
        let id = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert!(m.iter().zip(id).all(|(a, b)| (a - b).abs() < 1e-2), "{m:?}");
        assert!(metric > 0.99);
        np_transform_free(t);
        np_volume_free(v);
    }
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        let mut d = 0.0;
        assert_eq!(np_dice(ptr::null(), ptr::null(), &mut d), NpStatus::NullPointer);
        assert!(msg().contains("null"));
        let mut v = ptr::null_mut();
        assert_eq!(np_volume_read(ptr::null(), &mut v), NpStatus::NullPointer);
        assert_eq!(np_volume_read(c"x.nii".as_ptr(), ptr::null_mut()), NpStatus::NullPointer);
        np_volume_free(ptr::null_mut());
        np_mask_free(ptr::null_mut());
        np_transform_free(ptr::null_mut());

        let mut t = ptr::null_mut();
        np_transform_euler([0.0; 3].as_ptr(), [0.0; 3].as_ptr(), [0.0; 3].as_ptr(), &mut t);
        assert!(np_last_error_message().is_null());
        np_transform_free(t);
    }
}
