//! C ABI for `gramlimit`.
//!
//! Every fallible function returns a [`GlStatus`]; on failure a message is
//! kept per thread and can be read with [`gl_last_error_message`]. Objects
//! are opaque handles created by `*_new`/`*_compute`/`*_generate` and
//! released with the matching `*_free`. Output pointers are written only on
//! success. Panics never cross the boundary; they surface as
//! [`GlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gramlimit::ensemble::{DataMatrix, EnsembleConfig, InnovationLaw, RowSource};
use gramlimit::limit::{self, LimitDistribution, LimitError, SolverSettings, DEFAULT_EPS_LADDER};
use gramlimit::matrixops;
use gramlimit::metrics::{self, Cdf};
use gramlimit::spectral::SpectralDensity;
use num_complex::Complex64;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotConverged = 3,
    Numerical = 4,
    Panic = 99,
}

/// Innovation codes accepted by [`gl_matrix_generate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlInnovation {
    Gaussian = 0,
    Rademacher = 1,
    Uniform = 2,
    MartingaleSign = 3,
}

/// Spectral density handle.
pub struct GlDensity(SpectralDensity);

/// Inverted limit distribution handle.
pub struct GlLimit(LimitDistribution);

/// N×p data matrix handle.
pub struct GlMatrix(DataMatrix);

type Failure = (GlStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GlStatus::Panic
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    (GlStatus::InvalidArgument, e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    (GlStatus::Numerical, e.to_string())
}

fn limit_failure(e: LimitError) -> Failure {
    let status = match e {
        LimitError::InvalidArgument(_) | LimitError::Domain(_) => GlStatus::InvalidArgument,
        LimitError::NonConvergence { .. } | LimitError::LostHerglotz { .. } | LimitError::StartDependence { .. } => {
            GlStatus::NotConverged
        }
        _ => GlStatus::Numerical,
    };
    (status, e.to_string())
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| (GlStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((GlStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Boxes `value` into a handle; nothing is allocated when `out` is null.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err((GlStatus::NullPointer, "out is null".into()));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err((GlStatus::NullPointer, format!("{name} is null")));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a density from a family name (`constant`, `ar1`, `ma1`,
/// `fractional`) and its parameter (φ, θ or d; ignored for `constant`).
///
/// # Safety
/// `family` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gl_density_new(
    family: *const c_char,
    param: f64,
    variance: f64,
    out: *mut *mut GlDensity,
) -> GlStatus {
    guard(|| {
        if family.is_null() {
            return Err((GlStatus::NullPointer, "family is null".into()));
        }
        let name = CStr::from_ptr(family).to_str().map_err(invalid)?;
        let f = match name {
            "constant" => SpectralDensity::constant(variance),
            "ar1" => SpectralDensity::ar1(param, variance),
            "ma1" => SpectralDensity::ma1(param, variance),
            "fractional" => SpectralDensity::fractional(param, variance),
            other => return Err(invalid(format!("unknown family `{other}`"))),
        }
        .map_err(invalid)?;
        emit(out, GlDensity(f))
    })
}

/// New density `f ∧ b`.
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gl_density_truncate(f: *const GlDensity, b: f64, out: *mut *mut GlDensity) -> GlStatus {
    guard(|| {
        let t = borrow(f, "f")?.0.truncate(b).map_err(invalid)?;
        emit(out, GlDensity(t))
    })
}

/// f(λ) for λ ∈ [−π, π].
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gl_density_eval(f: *const GlDensity, lambda: f64, out: *mut f64) -> GlStatus {
    guard(|| {
        let v = borrow(f, "f")?.0.eval(lambda).map_err(invalid)?;
        put(out, v, "out")
    })
}

/// # Safety
/// `f` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gl_density_free(f: *mut GlDensity) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Solves the limit equation at z with default settings. Writes the
/// companion transform S̲ and the transform S of the limit law.
///
/// # Safety
/// `f` must be a live handle; the four outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gl_solve(
    f: *const GlDensity,
    c: f64,
    z_re: f64,
    z_im: f64,
    s_under_re: *mut f64,
    s_under_im: *mut f64,
    s_re: *mut f64,
    s_im: *mut f64,
) -> GlStatus {
    guard(|| {
        let f = borrow(f, "f")?;
        if [s_under_re, s_under_im, s_re, s_im].iter().any(|p| p.is_null()) {
            return Err((GlStatus::NullPointer, "output pointer is null".into()));
        }
        let sol = limit::solve_limit_density(&f.0, c, Complex64::new(z_re, z_im), &SolverSettings::default())
            .map_err(limit_failure)?;
        put(s_under_re, sol.s_under.re, "s_under_re")?;
        put(s_under_im, sol.s_under.im, "s_under_im")?;
        put(s_re, sol.s.re, "s_re")?;
        put(s_im, sol.s.im, "s_im")
    })
}

/// Density and CDF of the limit law on the automatic grid.
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gl_limit_compute(f: *const GlDensity, c: f64, out: *mut *mut GlLimit) -> GlStatus {
    guard(|| {
        let f = &borrow(f, "f")?.0;
        let grid = limit::auto_grid(f, c).map_err(limit_failure)?;
        let d = limit::invert_to_distribution(f, c, &grid, &DEFAULT_EPS_LADDER, &SolverSettings::default())
            .map_err(limit_failure)?;
        emit(out, GlLimit(d))
    })
}

/// Number of grid points.
///
/// # Safety
/// `l` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn gl_limit_len(l: *const GlLimit) -> usize {
    l.as_ref().map_or(0, |l| l.0.x_grid.len())
}

/// Copies grid, density and CDF into caller buffers of length `len`, which
/// must equal [`gl_limit_len`]. Any of the three buffers may be null.
///
/// # Safety
/// `l` must be a live handle; non-null buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_limit_copy(
    l: *const GlLimit,
    x: *mut f64,
    density: *mut f64,
    cdf: *mut f64,
    len: usize,
) -> GlStatus {
    guard(|| {
        let d = &borrow(l, "l")?.0;
        if len != d.x_grid.len() {
            return Err(invalid(format!("buffer length {len}, expected {}", d.x_grid.len())));
        }
        for (dst, src) in [(x, &d.x_grid), (density, &d.density), (cdf, &d.cdf)] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
            }
        }
        Ok(())
    })
}

/// Atom at zero and total mass (atom plus integrated density).
///
/// # Safety
/// `l` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn gl_limit_mass(l: *const GlLimit, atom0: *mut f64, total: *mut f64) -> GlStatus {
    guard(|| {
        let d = &borrow(l, "l")?.0;
        if !atom0.is_null() {
            atom0.write(d.atom0);
        }
        if !total.is_null() {
            total.write(d.total_mass());
        }
        Ok(())
    })
}

/// # Safety
/// `l` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gl_limit_free(l: *mut GlLimit) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// Seeded N×p matrix whose rows are the linear process of `f` (two-sided
/// square-root filter, tail tolerance 1e-2) driven by the innovation law
/// with code `innovation` (see [`GlInnovation`]).
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gl_matrix_generate(
    f: *const GlDensity,
    n_rows: usize,
    n_cols: usize,
    seed: u64,
    innovation: u32,
    out: *mut *mut GlMatrix,
) -> GlStatus {
    guard(|| {
        let f = &borrow(f, "f")?.0;
        let law = match innovation {
            x if x == GlInnovation::Gaussian as u32 => InnovationLaw::Gaussian,
            x if x == GlInnovation::Rademacher as u32 => InnovationLaw::Rademacher,
            x if x == GlInnovation::Uniform as u32 => InnovationLaw::Uniform,
            x if x == GlInnovation::MartingaleSign as u32 => InnovationLaw::MartingaleSign,
            other => return Err(invalid(format!("unknown innovation code {other}"))),
        };
        let filter = gramlimit::spectral::filter_with(
            f,
            &gramlimit::spectral::FilterSettings {
                tail_tol: 1e-2,
                ..Default::default()
            },
        )
        .map_err(numerical)?;
        let source = RowSource::Linear {
            filter,
            innovation: law,
        };
        let m = EnsembleConfig::new(n_rows, n_cols, source, seed)
            .and_then(|c| c.generate())
            .map_err(invalid)?;
        emit(out, GlMatrix(m))
    })
}

/// Wraps a row-major copy of `data` (`n_rows·n_cols` doubles).
///
/// # Safety
/// `data` must hold `n_rows·n_cols` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gl_matrix_from_rows(
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut *mut GlMatrix,
) -> GlStatus {
    guard(|| {
        let len = n_rows.checked_mul(n_cols).ok_or_else(|| invalid("size overflow"))?;
        let v = slice(data, len, "data")?.to_vec();
        let m = DataMatrix::from_rows(n_rows, n_cols, v).map_err(invalid)?;
        emit(out, GlMatrix(m))
    })
}

/// Row and column counts.
///
/// # Safety
/// `m` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn gl_matrix_shape(m: *const GlMatrix, n_rows: *mut usize, n_cols: *mut usize) -> GlStatus {
    guard(|| {
        let m = &borrow(m, "m")?.0;
        if !n_rows.is_null() {
            n_rows.write(m.rows());
        }
        if !n_cols.is_null() {
            n_cols.write(m.cols());
        }
        Ok(())
    })
}

/// Row-major entries, valid while the handle lives.
///
/// # Safety
/// `m` must be a live handle or null (returns null).
#[no_mangle]
pub unsafe extern "C" fn gl_matrix_data(m: *const GlMatrix) -> *const f64 {
    m.as_ref().map_or(ptr::null(), |m| m.0.as_slice().as_ptr())
}

/// Ascending eigenvalues of the p×p Gram matrix (1/N)XᵀX into `out`
/// (length p).
///
/// # Safety
/// `m` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_matrix_gram_eigenvalues(m: *const GlMatrix, out: *mut f64, len: usize) -> GlStatus {
    guard(|| {
        let m = &borrow(m, "m")?.0;
        if len != m.cols() {
            return Err(invalid(format!("buffer length {len}, expected {}", m.cols())));
        }
        if out.is_null() {
            return Err((GlStatus::NullPointer, "out is null".into()));
        }
        let esd = matrixops::symmetric_eigenvalues(&matrixops::gram(m)).map_err(numerical)?;
        ptr::copy_nonoverlapping(esd.eigenvalues().as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gl_matrix_free(m: *mut GlMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

unsafe fn sample_pair(a: *const f64, na: usize, b: *const f64, nb: usize) -> Result<(Cdf, Cdf), Failure> {
    let fa = Cdf::from_samples(slice(a, na, "a")?).map_err(invalid)?;
    let fb = Cdf::from_samples(slice(b, nb, "b")?).map_err(invalid)?;
    Ok((fa, fb))
}

/// Lévy distance between the empirical laws of two samples.
///
/// # Safety
/// `a`/`b` must hold `na`/`nb` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gl_levy_distance(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> GlStatus {
    guard(|| {
        let (fa, fb) = sample_pair(a, na, b, nb)?;
        put(out, metrics::levy_distance(&fa, &fb), "out")
    })
}

/// Kolmogorov distance between the empirical laws of two samples.
///
/// # Safety
/// As [`gl_levy_distance`].
#[no_mangle]
pub unsafe extern "C" fn gl_kolmogorov_distance(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> GlStatus {
    guard(|| {
        let (fa, fb) = sample_pair(a, na, b, nb)?;
        put(out, metrics::kolmogorov_distance(&fa, &fb), "out")
    })
}
