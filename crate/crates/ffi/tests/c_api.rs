use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use lidar_codec::predictor::{save_weights, LstmWeights};
use lidar_codec::synthetic::{generate, SceneConfig};
use lidar_codec_ffi::*;

fn scene_xyz() -> Vec<f64> {
    let cfg = SceneConfig { lasers: 4, phi_ar_deg: 2.0, seed: 8, ..SceneConfig::default() };
    generate(&cfg).unwrap().cloud.iter().flat_map(|p| p.to_array()).collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(lc_last_error_message()) }.to_string_lossy().into_owned()
}

unsafe fn make_cloud(xyz: &[f64]) -> *mut LcCloud {
    let mut cloud = ptr::null_mut();
    assert_eq!(lc_cloud_new(xyz.as_ptr(), xyz.len() / 3, &mut cloud), LcStatus::Ok);
    cloud
}

unsafe fn bytes_of(buf: *const LcBuffer) -> Vec<u8> {
    std::slice::from_raw_parts(lc_buffer_data(buf), lc_buffer_len(buf)).to_vec()
}

#[test]
fn encode_decode_round_trip() {
    let xyz = scene_xyz();
    unsafe {
        let cloud = make_cloud(&xyz);
        assert_eq!(lc_cloud_len(cloud), xyz.len() / 3);
        for rp in 1..=7 {
            let mut buf = ptr::null_mut();
            assert_eq!(lc_encode_rate_point(cloud, rp, ptr::null(), &mut buf), LcStatus::Ok, "{}", last_error());
            assert!(last_error().is_empty());
            let bytes = bytes_of(buf);
            let mut decoded = ptr::null_mut();
            assert_eq!(lc_decode(bytes.as_ptr(), bytes.len(), ptr::null(), &mut decoded), LcStatus::Ok);
            let n = lc_cloud_len(decoded);
            assert_eq!(n, xyz.len() / 3);
            let mut out = vec![0.0; 3 * n];
            assert_eq!(lc_cloud_copy_xyz(decoded, out.as_mut_ptr(), out.len()), LcStatus::Ok);
            assert!(out.iter().all(|v| v.is_finite()));
            lc_cloud_free(decoded);
            lc_buffer_free(buf);
        }

        let mut buf = ptr::null_mut();
        assert_eq!(lc_encode_qp(cloud, LC_MODE_LOW, 1, 1, 4, 0, 0.1, ptr::null(), &mut buf), LcStatus::Ok);
        lc_buffer_free(buf);
        assert_eq!(lc_encode_qp(cloud, LC_MODE_HIGH, 1, 2, 32, 64, 0.0, ptr::null(), &mut buf), LcStatus::Ok);
        lc_buffer_free(buf);
        lc_cloud_free(cloud);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let xyz = scene_xyz();
    unsafe {
        let cloud = make_cloud(&xyz);
        let mut buf = ptr::null_mut();
        assert_eq!(lc_encode_rate_point(cloud, 0, ptr::null(), &mut buf), LcStatus::InvalidArgument);
        assert_eq!(lc_encode_rate_point(cloud, 8, ptr::null(), &mut buf), LcStatus::InvalidArgument);
        assert_eq!(lc_encode_rate_point(ptr::null(), 3, ptr::null(), &mut buf), LcStatus::InvalidArgument);
        assert_eq!(lc_encode_qp(cloud, 7, 1, 1, 1, 1, 0.0, ptr::null(), &mut buf), LcStatus::InvalidArgument);
        assert_eq!(lc_encode_qp(cloud, LC_MODE_HIGH, 1, 99, 1, 1, 0.0, ptr::null(), &mut buf), LcStatus::Config);
        assert!(!last_error().is_empty());

        assert_eq!(lc_encode_rate_point(cloud, 4, ptr::null(), &mut buf), LcStatus::Ok);
        let bytes = bytes_of(buf);
        let mut decoded = ptr::null_mut();
        assert_eq!(lc_decode(bytes.as_ptr(), bytes.len() / 2, ptr::null(), &mut decoded), LcStatus::Corrupt);
        assert!(last_error().contains("truncated"), "{}", last_error());
        assert_eq!(lc_decode(b"nope".as_ptr(), 4, ptr::null(), &mut decoded), LcStatus::Format);
        assert_eq!(lc_decode(ptr::null(), 10, ptr::null(), &mut decoded), LcStatus::InvalidArgument);

        let mut small = [0.0; 3];
        assert_eq!(lc_cloud_copy_xyz(cloud, small.as_mut_ptr(), 3), LcStatus::BufferTooSmall);

        let missing = CString::new("/nonexistent/cloud.bin").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(lc_cloud_read(missing.as_ptr(), &mut other), LcStatus::Io);
        assert_eq!(lc_cloud_read(ptr::null(), &mut other), LcStatus::InvalidArgument);

        assert_eq!(lc_cloud_len(ptr::null()), 0);
        lc_cloud_free(ptr::null_mut());
        lc_buffer_free(buf);
        lc_cloud_free(cloud);
    }
}

#[test]
fn weights_gate_decoding() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<CString> = [1u64, 2]
        .iter()
        .map(|&seed| {
            let p = dir.path().join(format!("w{seed}.lpcw"));
            save_weights(&LstmWeights::random(4, 3, seed), &p).unwrap();
            CString::new(p.to_str().unwrap()).unwrap()
        })
        .collect();
    let xyz = scene_xyz();
    unsafe {
        let (mut w1, mut w2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(lc_weights_load(paths[0].as_ptr(), &mut w1), LcStatus::Ok);
        assert_eq!(lc_weights_load(paths[1].as_ptr(), &mut w2), LcStatus::Ok);
        assert_ne!(lc_weights_checksum(w1), lc_weights_checksum(w2));

        let cloud = make_cloud(&xyz);
        let mut buf = ptr::null_mut();
        assert_eq!(lc_encode_rate_point(cloud, 5, w1, &mut buf), LcStatus::Ok);
        let bytes = bytes_of(buf);
        let mut decoded = ptr::null_mut();
        assert_eq!(lc_decode(bytes.as_ptr(), bytes.len(), ptr::null(), &mut decoded), LcStatus::Config);
        assert_eq!(lc_decode(bytes.as_ptr(), bytes.len(), w2, &mut decoded), LcStatus::Corrupt);
        assert!(last_error().contains("checksum"));
        assert_eq!(lc_decode(bytes.as_ptr(), bytes.len(), w1, &mut decoded), LcStatus::Ok);
        assert_eq!(lc_cloud_len(decoded), xyz.len() / 3);
        assert_eq!(lc_encode_rate_point(cloud, 1, w1, &mut buf), LcStatus::Config);

        lc_cloud_free(decoded);
        lc_buffer_free(buf);
        lc_cloud_free(cloud);
        lc_weights_free(w1);
        lc_weights_free(w2);
    }
}

#[test]
fn files_round_trip_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.ply").to_str().unwrap()).unwrap();
    let xyz = [1.0, 2.0, 3.0, -4.5, 0.25, 7.0];
    unsafe {
        let cloud = make_cloud(&xyz);
        assert_eq!(lc_cloud_write(cloud, path.as_ptr()), LcStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(lc_cloud_read(path.as_ptr(), &mut back), LcStatus::Ok);
        let mut out = [0.0; 6];
        assert_eq!(lc_cloud_copy_xyz(back, out.as_mut_ptr(), 6), LcStatus::Ok);
        assert_eq!(out, xyz);
        lc_cloud_free(back);
        lc_cloud_free(cloud);
    }
    assert!(!unsafe { CStr::from_ptr(lc_version()) }.to_bytes().is_empty());
}

#[test]
fn header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"lidar_codec.h\"\n\
         int main(void) {\n\
           LcCloud *c = 0; LcBuffer *b = 0;\n\
           double xyz[3] = {1.0, 2.0, 3.0};\n\
           if (lc_cloud_new(xyz, 1, &c) != LC_STATUS_OK) return 1;\n\
           if (lc_encode_qp(c, LC_MODE_HIGH, 1, 1, 1, 1, 0.0, 0, &b) != LC_STATUS_OK) return 2;\n\
           lc_buffer_free(b); lc_cloud_free(c);\n\
           return lc_last_error_message() == 0;\n\
         }\n",
    )
    .unwrap();
    let compiler = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&compiler)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .expect("C compiler available");
    assert!(status.success());
}
