//! C ABI for the rmbp filter and registration.
//!
//! Clouds and filter results are opaque handles created and destroyed by
//! this library. Every fallible call returns an [`RmbpStatus`]; on failure
//! [`rmbp_last_error`] describes the cause until the next call on the same
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rmbp::geometry::{Point3, PointCloud};
use rmbp::inference::LbpOptions;
use rmbp::matchgraph::{select_lambda, GraphConfig};
use rmbp::matching::Correspondence;
use rmbp::pipeline::{self, FilterConfig, FilterOutcome};
use rmbp::registration::{ransac_register, RansacConfig};
use rmbp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmbpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    Io = 4,
    Parse = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque point cloud.
pub struct RmbpCloud(PointCloud);

/// Opaque filter outcome.
pub struct RmbpFilterResult(FilterOutcome);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RmbpFilterParams {
    pub k: usize,
    pub l: usize,
    pub lambda_safety: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    pub threshold: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RmbpRansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

/// Registration output. `rotation` is row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RmbpTransform {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub consensus: usize,
    pub found: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RmbpStatus {
    match e {
        Error::Degenerate(_) | Error::EmptyCloud => RmbpStatus::Degenerate,
        Error::Io(_) | Error::FileIo { .. } => RmbpStatus::Io,
        Error::Parse { .. } | Error::Ply { .. } | Error::Json(_) => RmbpStatus::Parse,
        _ => RmbpStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (RmbpStatus, String)>) -> RmbpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RmbpStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RmbpStatus::Panic
        }
    }
}

fn lift<T>(r: rmbp::Result<T>) -> Result<T, (RmbpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RmbpStatus, String) {
    (RmbpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (RmbpStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `p` points to `n` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn matches_from(p: *const usize, q: *const usize, n: usize) -> Result<Vec<Correspondence>, (RmbpStatus, String)> {
    let (ps, qs) = unsafe { (slice(p, n, "match_p")?, slice(q, n, "match_q")?) };
    Ok(ps.iter().zip(qs).map(|(&a, &b)| Correspondence::new(a, b, 0.0)).collect())
}

/// Message describing the last failed call on this thread, or NULL. The
/// pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn rmbp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmbp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a cloud from `n` packed xyz triples.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmbp_cloud_new(xyz: *const f64, n: usize, out: *mut *mut RmbpCloud) -> RmbpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let coords = unsafe { slice(xyz, n.checked_mul(3).ok_or_else(|| (RmbpStatus::InvalidArgument, "n overflows".into()))?, "xyz")? };
        let points = coords.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let cloud = lift(PointCloud::new("ffi", points))?;
        unsafe { *out = Box::into_raw(Box::new(RmbpCloud(cloud))) };
        Ok(())
    })
}

/// Reads an ASCII or binary little-endian PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmbp_cloud_read_ply(path: *const c_char, out: *mut *mut RmbpCloud) -> RmbpStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let s = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| (RmbpStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let cloud = lift(rmbp::io::read_ply(Path::new(s)))?;
        unsafe { *out = Box::into_raw(Box::new(RmbpCloud(cloud))) };
        Ok(())
    })
}

/// Number of points; 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmbp_cloud_len(cloud: *const RmbpCloud) -> usize {
    unsafe { cloud.as_ref() }.map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmbp_cloud_free(cloud: *mut RmbpCloud) {
    if !cloud.is_null() {
        drop(unsafe { Box::from_raw(cloud) });
    }
}

#[no_mangle]
pub extern "C" fn rmbp_filter_params_default() -> RmbpFilterParams {
    let d = FilterConfig::default();
    RmbpFilterParams {
        k: d.graph.k,
        l: d.graph.l,
        lambda_safety: d.graph.lambda_safety,
        max_iters: d.lbp.max_iters,
        tol: d.lbp.tol,
        damping: d.lbp.damping,
        threshold: d.threshold,
    }
}

#[no_mangle]
pub extern "C" fn rmbp_ransac_params_default() -> RmbpRansacParams {
    let d = RansacConfig::default();
    RmbpRansacParams {
        iterations: d.iterations,
        inlier_threshold: d.inlier_threshold,
        seed: d.seed,
    }
}

/// λ for a graph of the given maximum degree.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmbp_select_lambda(max_degree: usize, safety: f64, out: *mut f64) -> RmbpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = lift(select_lambda(max_degree, safety))?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Runs the outlier filter on `n` matches `(match_p[i], match_q[i])`.
/// `params` may be NULL for defaults.
///
/// # Safety
/// Handles must be live; `match_p` and `match_q` must hold `n` entries;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter(
    cloud_p: *const RmbpCloud,
    cloud_q: *const RmbpCloud,
    match_p: *const usize,
    match_q: *const usize,
    n: usize,
    params: *const RmbpFilterParams,
    out: *mut *mut RmbpFilterResult,
) -> RmbpStatus {
    guard(|| {
        let p = unsafe { cloud_p.as_ref() }.ok_or_else(|| null("cloud_p"))?;
        let q = unsafe { cloud_q.as_ref() }.ok_or_else(|| null("cloud_q"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = unsafe { params.as_ref() }.copied().unwrap_or_else(|| rmbp_filter_params_default());
        let cfg = FilterConfig {
            graph: GraphConfig {
                k: params.k,
                l: params.l,
                lambda_safety: params.lambda_safety,
                ..Default::default()
            },
            lbp: LbpOptions {
                max_iters: params.max_iters,
                tol: params.tol,
                damping: params.damping,
            },
            threshold: params.threshold,
        };
        let matches = unsafe { matches_from(match_p, match_q, n)? };
        let outcome = lift(pipeline::rmbp_filter(&p.0, &q.0, &matches, &cfg))?;
        unsafe { *out = Box::into_raw(Box::new(RmbpFilterResult(outcome))) };
        Ok(())
    })
}

/// Number of matches the result covers; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_len(result: *const RmbpFilterResult) -> usize {
    unsafe { result.as_ref() }.map_or(0, |r| r.0.marginals.len())
}

/// Number of kept matches; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_kept_len(result: *const RmbpFilterResult) -> usize {
    unsafe { result.as_ref() }.map_or(0, |r| r.0.kept.len())
}

/// The λ used; NaN for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_lambda(result: *const RmbpFilterResult) -> f64 {
    unsafe { result.as_ref() }.map_or(f64::NAN, |r| r.0.graph.lambda())
}

/// Iterations run and whether the tolerance was reached.
///
/// # Safety
/// `result` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_convergence(
    result: *const RmbpFilterResult,
    iterations: *mut usize,
    converged: *mut bool,
) -> RmbpStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        if iterations.is_null() || converged.is_null() {
            return Err(null("output"));
        }
        unsafe {
            *iterations = r.0.report.iterations;
            *converged = r.0.report.converged;
        }
        Ok(())
    })
}

/// Copies the inlier marginal of every match into `buf`.
///
/// # Safety
/// `result` must be a live handle; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_marginals(result: *const RmbpFilterResult, buf: *mut f64, cap: usize) -> RmbpStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        let n = r.0.marginals.len();
        copy_out(buf, cap, n, |i| r.0.marginals.inlier(i))
    })
}

/// Copies the positions of kept matches, ascending, into `buf`.
///
/// # Safety
/// `result` must be a live handle; `buf` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_kept(result: *const RmbpFilterResult, buf: *mut usize, cap: usize) -> RmbpStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        copy_out(buf, cap, r.0.kept.len(), |i| r.0.kept[i])
    })
}

fn copy_out<T>(buf: *mut T, cap: usize, n: usize, value: impl Fn(usize) -> T) -> Result<(), (RmbpStatus, String)> {
    if cap < n {
        return Err((RmbpStatus::BufferTooSmall, format!("buffer holds {cap}, need {n}")));
    }
    if n > 0 && buf.is_null() {
        return Err(null("buf"));
    }
    for i in 0..n {
        // SAFETY: `buf` holds at least `cap ≥ n` elements.
        unsafe { buf.add(i).write(value(i)) };
    }
    Ok(())
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmbp_filter_result_free(result: *mut RmbpFilterResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// RANSAC + Kabsch over `n` matches. `params` may be NULL for defaults.
/// When no hypothesis gathers support, `out->found` is false and the
/// identity is returned.
///
/// # Safety
/// Handles must be live; `match_p` and `match_q` must hold `n` entries;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmbp_register(
    cloud_p: *const RmbpCloud,
    cloud_q: *const RmbpCloud,
    match_p: *const usize,
    match_q: *const usize,
    n: usize,
    params: *const RmbpRansacParams,
    out: *mut RmbpTransform,
) -> RmbpStatus {
    guard(|| {
        let p = unsafe { cloud_p.as_ref() }.ok_or_else(|| null("cloud_p"))?;
        let q = unsafe { cloud_q.as_ref() }.ok_or_else(|| null("cloud_q"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = unsafe { params.as_ref() }.copied().unwrap_or_else(|| rmbp_ransac_params_default());
        let cfg = RansacConfig {
            iterations: params.iterations,
            inlier_threshold: params.inlier_threshold,
            seed: params.seed,
        };
        let matches = unsafe { matches_from(match_p, match_q, n)? };
        let r = lift(ransac_register(&matches, &p.0, &q.0, &cfg))?;
        let rows = r.transform.rotation_rows();
        let t = r.transform.translation();
        let mut rotation = [0.0; 9];
        for (i, v) in rows.iter().flatten().enumerate() {
            rotation[i] = *v;
        }
        unsafe {
            *out = RmbpTransform {
                rotation,
                translation: [t.x, t.y, t.z],
                consensus: r.consensus.len(),
                found: r.found,
            }
        };
        Ok(())
    })
}
