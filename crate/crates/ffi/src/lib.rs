//! C ABI for the lidar codec.
//!
//! Every fallible call returns an [`LcStatus`]; on failure the message is
//! available from [`lc_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lidar_codec::codec::{self, EncodeOptions};
use lidar_codec::container::Bitstream;
use lidar_codec::geometry::{CartesianPoint, PointCloud};
use lidar_codec::highrate::QpVector;
use lidar_codec::io::{read_cloud, write_cloud};
use lidar_codec::lowrate::RdConfig;
use lidar_codec::predictor::{load_weights, DeltaPredictor, ElevationPredictor, LstmPredictor};
use lidar_codec::qpselect::{default_qp, RatePoint};
use lidar_codec::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    /// Null pointer, bad length or out-of-range enum value.
    InvalidArgument = 1,
    InvalidInput = 2,
    Format = 3,
    Config = 4,
    Corrupt = 5,
    Infeasible = 6,
    Io = 7,
    Numeric = 8,
    /// The output buffer passed in is too small.
    BufferTooSmall = 9,
    Panic = 10,
}

/// Value of the `mode` argument of [`lc_encode_qp`].
pub const LC_MODE_LOW: u32 = 0;
pub const LC_MODE_HIGH: u32 = 1;

/// A point cloud.
pub struct LcCloud {
    cloud: PointCloud,
}

/// An encoded bitstream.
pub struct LcBuffer {
    bytes: Vec<u8>,
}

/// LSTM elevation-predictor weights.
pub struct LcWeights {
    predictor: LstmPredictor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(err: &Error) -> LcStatus {
    match err.kind() {
        ErrorKind::InvalidInput => LcStatus::InvalidInput,
        ErrorKind::Format => LcStatus::Format,
        ErrorKind::Config => LcStatus::Config,
        ErrorKind::Corrupt => LcStatus::Corrupt,
        ErrorKind::Infeasible => LcStatus::Infeasible,
        ErrorKind::Io => LcStatus::Io,
        ErrorKind::Numeric => LcStatus::Numeric,
    }
}

struct Fail(LcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn bad_arg(msg: &str) -> Fail {
    Fail(LcStatus::InvalidArgument, msg.to_owned())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LcStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Fail> {
    if path.is_null() {
        return Err(bad_arg("path is null"));
    }
    CStr::from_ptr(path).to_str().map_err(|_| bad_arg("path is not UTF-8"))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn predictor_arg<'a>(weights: *const LcWeights) -> &'a dyn ElevationPredictor {
    match weights.as_ref() {
        Some(w) => &w.predictor,
        None => &DeltaPredictor,
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a cloud from `count` interleaved x, y, z doubles.
///
/// # Safety
/// `xyz` must point to `3 * count` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_cloud_new(xyz: *const f64, count: usize, out: *mut *mut LcCloud) -> LcStatus {
    guard(|| {
        if out.is_null() || (xyz.is_null() && count > 0) {
            return Err(bad_arg("null pointer"));
        }
        let len = count.checked_mul(3).ok_or_else(|| bad_arg("count overflows"))?;
        let coords = if count == 0 { &[][..] } else { std::slice::from_raw_parts(xyz, len) };
        let points = coords.chunks_exact(3).map(|c| CartesianPoint::new(c[0], c[1], c[2])).collect();
        store(out, LcCloud { cloud: PointCloud::new(points) });
        Ok(())
    })
}

/// Reads a `.bin` (KITTI) or `.ply` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_cloud_read(path: *const c_char, out: *mut *mut LcCloud) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("out is null"));
        }
        let cloud = read_cloud(path_arg(path)?)?;
        store(out, LcCloud { cloud });
        Ok(())
    })
}

/// Writes the cloud as `.bin` or `.ply` by extension.
///
/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lc_cloud_write(cloud: *const LcCloud, path: *const c_char) -> LcStatus {
    guard(|| {
        let c = cloud.as_ref().ok_or_else(|| bad_arg("cloud is null"))?;
        write_cloud(&c.cloud, path_arg(path)?)?;
        Ok(())
    })
}

/// Point count, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_cloud_len(cloud: *const LcCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.cloud.len())
}

/// Copies the coordinates as interleaved x, y, z into `xyz`, which holds
/// `capacity` doubles.
///
/// # Safety
/// `cloud` must be a live handle and `xyz` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_cloud_copy_xyz(cloud: *const LcCloud, xyz: *mut f64, capacity: usize) -> LcStatus {
    guard(|| {
        let c = cloud.as_ref().ok_or_else(|| bad_arg("cloud is null"))?;
        let need = c.cloud.len() * 3;
        if need > capacity {
            return Err(Fail(LcStatus::BufferTooSmall, format!("need {need} doubles, have {capacity}")));
        }
        if need == 0 {
            return Ok(());
        }
        if xyz.is_null() {
            return Err(bad_arg("xyz is null"));
        }
        let dst = std::slice::from_raw_parts_mut(xyz, need);
        for (d, p) in dst.chunks_exact_mut(3).zip(c.cloud.iter()) {
            d.copy_from_slice(&p.to_array());
        }
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_cloud_free(cloud: *mut LcCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Loads an LSTM weight file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_weights_load(path: *const c_char, out: *mut *mut LcWeights) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("out is null"));
        }
        let predictor = LstmPredictor::new(load_weights(path_arg(path)?)?)?;
        store(out, LcWeights { predictor });
        Ok(())
    })
}

/// Checksum stored in bitstreams coded with these weights; 0 for null.
///
/// # Safety
/// `weights` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_weights_checksum(weights: *const LcWeights) -> u64 {
    weights.as_ref().map_or(0, |w| w.predictor.weights().checksum())
}

/// # Safety
/// `weights` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_weights_free(weights: *mut LcWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

unsafe fn encode_with(
    cloud: *const LcCloud,
    opts: EncodeOptions,
    weights: *const LcWeights,
    out: *mut *mut LcBuffer,
) -> Result<(), Fail> {
    let c = cloud.as_ref().ok_or_else(|| bad_arg("cloud is null"))?;
    if out.is_null() {
        return Err(bad_arg("out is null"));
    }
    let enc = codec::encode(&c.cloud, None, &opts, predictor_arg(weights))?;
    store(out, LcBuffer { bytes: enc.bitstream.to_bytes() });
    Ok(())
}

/// Encodes at one of the seven table rate points (1 = r01 ... 7 = r07).
/// `weights` may be null; rate points 1 and 2 use low mode and reject weights.
///
/// # Safety
/// `cloud` must be a live handle, `weights` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lc_encode_rate_point(
    cloud: *const LcCloud,
    rate_point: u32,
    weights: *const LcWeights,
    out: *mut *mut LcBuffer,
) -> LcStatus {
    guard(|| {
        let rp = usize::try_from(rate_point)
            .ok()
            .and_then(|i| i.checked_sub(1))
            .and_then(|i| RatePoint::ALL.get(i).copied())
            .ok_or_else(|| bad_arg("rate point must be 1..7"))?;
        encode_with(cloud, default_qp(rp).options(), weights, out)
    })
}

/// Encodes with explicit QPs; `mode` is `LC_MODE_LOW` or `LC_MODE_HIGH`. Low mode needs `q_r = 0` and a positive
/// `step` in metres; `step` is ignored in high mode.
///
/// # Safety
/// `cloud` must be a live handle, `weights` null or live, `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lc_encode_qp(
    cloud: *const LcCloud,
    mode: u32,
    q_delta: u16,
    q_phi: u16,
    q_theta: u16,
    q_r: u16,
    step: f64,
    weights: *const LcWeights,
    out: *mut *mut LcBuffer,
) -> LcStatus {
    guard(|| {
        let qp = QpVector::new(q_delta, q_phi, q_theta, q_r);
        let opts = match mode {
            LC_MODE_HIGH => EncodeOptions::high(qp),
            LC_MODE_LOW => EncodeOptions::low(qp, RdConfig { lambda: 1.0, step }),
            _ => return Err(bad_arg("mode must be LC_MODE_LOW or LC_MODE_HIGH")),
        };
        encode_with(cloud, opts, weights, out)
    })
}

/// Decodes `len` bytes. `weights` is required for streams coded with them.
///
/// # Safety
/// `data` must hold `len` bytes, `weights` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lc_decode(
    data: *const u8,
    len: usize,
    weights: *const LcWeights,
    out: *mut *mut LcCloud,
) -> LcStatus {
    guard(|| {
        if out.is_null() || (data.is_null() && len > 0) {
            return Err(bad_arg("null pointer"));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let bs = Bitstream::from_bytes(bytes)?;
        let cloud = codec::decode(&bs, predictor_arg(weights))?;
        store(out, LcCloud { cloud });
        Ok(())
    })
}

/// Start of the encoded bytes, or null for a null handle.
///
/// # Safety
/// `buffer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_buffer_data(buffer: *const LcBuffer) -> *const u8 {
    buffer.as_ref().map_or(ptr::null(), |b| b.bytes.as_ptr())
}

/// # Safety
/// `buffer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_buffer_len(buffer: *const LcBuffer) -> usize {
    buffer.as_ref().map_or(0, |b| b.bytes.len())
}

/// # Safety
/// `buffer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_buffer_free(buffer: *mut LcBuffer) {
    if !buffer.is_null() {
        drop(Box::from_raw(buffer));
    }
}
