use std::ffi::{CStr, CString};
use std::ptr;

use gramlimit::limit::marchenko_pastur_companion;
use gramlimit_ffi::*;
use num_complex::Complex64;

fn last_error() -> String {
    let p = gl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn density(family: &str, param: f64) -> *mut GlDensity {
    let name = CString::new(family).unwrap();
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { gl_density_new(name.as_ptr(), param, 1.0, &mut f) },
        GlStatus::Ok
    );
    f
}

#[test]
fn solve_matches_marchenko_pastur() {
    let f = density("constant", 0.0);
    let (mut ur, mut ui, mut sr, mut si) = (0.0, 0.0, 0.0, 0.0);
    let st = unsafe { gl_solve(f, 0.5, 1.2, 0.3, &mut ur, &mut ui, &mut sr, &mut si) };
    assert_eq!(st, GlStatus::Ok);
    let want = marchenko_pastur_companion(1.0, 0.5, Complex64::new(1.2, 0.3));
    assert!((Complex64::new(ur, ui) - want).norm() < 1e-9);
    assert!(si > 0.0);
    unsafe { gl_density_free(f) };
}

#[test]
fn errors_are_reported_not_thrown() {
    let name = CString::new("fractional").unwrap();
    let mut f = ptr::null_mut();
    let st = unsafe { gl_density_new(name.as_ptr(), 0.7, 1.0, &mut f) };
    assert_eq!(st, GlStatus::InvalidArgument);
    assert!(f.is_null(), "out untouched on failure");
    assert!(last_error().contains("d"), "{}", last_error());

    let st = unsafe { gl_density_new(ptr::null(), 0.3, 1.0, &mut f) };
    assert_eq!(st, GlStatus::NullPointer);

    let g = density("ar1", 0.5);
    let mut x = 0.0;
    assert_eq!(
        unsafe { gl_solve(g, 0.5, 1.0, -0.1, &mut x, &mut x, &mut x, &mut x) },
        GlStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { gl_solve(g, 0.5, 1.0, 0.1, &mut x, ptr::null_mut(), &mut x, &mut x) },
        GlStatus::NullPointer
    );
    assert_eq!(unsafe { gl_density_eval(g, 4.0, &mut x) }, GlStatus::InvalidArgument);
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { gl_matrix_generate(g, 10, 5, 1, 17, &mut m) },
        GlStatus::InvalidArgument
    );
    assert!(last_error().contains("innovation"));
    unsafe {
        gl_density_free(g);
        gl_density_free(ptr::null_mut());
    }
}

#[test]
fn limit_mass_and_copy() {
    let f = density("ar1", 0.5);
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { gl_limit_compute(f, 2.0, &mut l) }, GlStatus::Ok);
    let n = unsafe { gl_limit_len(l) };
    assert!(n > 100);
    let (mut atom, mut total) = (0.0, 0.0);
    assert_eq!(unsafe { gl_limit_mass(l, &mut atom, &mut total) }, GlStatus::Ok);
    assert_eq!(atom, 0.5);
    assert!((total - 1.0).abs() < 2e-3, "{total}");
    let (mut x, mut cdf) = (vec![0.0; n], vec![0.0; n]);
    assert_eq!(
        unsafe { gl_limit_copy(l, x.as_mut_ptr(), ptr::null_mut(), cdf.as_mut_ptr(), n) },
        GlStatus::Ok
    );
    assert!(x.windows(2).all(|w| w[0] < w[1]));
    assert!(cdf.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    assert_eq!(
        unsafe { gl_limit_copy(l, x.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), n - 1) },
        GlStatus::InvalidArgument
    );
    unsafe {
        gl_limit_free(l);
        gl_density_free(f);
    }
}

#[test]
fn matrices_are_seeded_and_spectra_agree() {
    let f = density("ma1", 0.4);
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(
            gl_matrix_generate(f, 60, 30, 9, GlInnovation::Rademacher as u32, &mut a),
            GlStatus::Ok
        );
        assert_eq!(
            gl_matrix_generate(f, 60, 30, 9, GlInnovation::Rademacher as u32, &mut b),
            GlStatus::Ok
        );
        let (mut n, mut p) = (0, 0);
        assert_eq!(gl_matrix_shape(a, &mut n, &mut p), GlStatus::Ok);
        assert_eq!((n, p), (60, 30));
        let da = std::slice::from_raw_parts(gl_matrix_data(a), n * p);
        let db = std::slice::from_raw_parts(gl_matrix_data(b), n * p);
        assert_eq!(da, db);

        let mut copy = ptr::null_mut();
        assert_eq!(gl_matrix_from_rows(da.as_ptr(), n, p, &mut copy), GlStatus::Ok);
        let (mut ea, mut ec) = (vec![0.0; p], vec![0.0; p]);
        assert_eq!(gl_matrix_gram_eigenvalues(a, ea.as_mut_ptr(), p), GlStatus::Ok);
        assert_eq!(gl_matrix_gram_eigenvalues(copy, ec.as_mut_ptr(), p), GlStatus::Ok);
        assert_eq!(ea, ec);
        // Trace of (1/N)XᵀX.
        let tr: f64 = da.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((ea.iter().sum::<f64>() - tr).abs() < 1e-9 * tr);

        let mut d = -1.0;
        assert_eq!(gl_levy_distance(ea.as_ptr(), p, ec.as_ptr(), p, &mut d), GlStatus::Ok);
        assert_eq!(d, 0.0);
        let shifted: Vec<f64> = ea.iter().map(|v| v + 0.25).collect();
        assert_eq!(
            gl_kolmogorov_distance(ea.as_ptr(), p, shifted.as_ptr(), p, &mut d),
            GlStatus::Ok
        );
        assert!(d > 0.0 && d <= 1.0);
        assert_eq!(
            gl_levy_distance(ptr::null(), 3, ec.as_ptr(), p, &mut d),
            GlStatus::NullPointer
        );

        gl_matrix_free(a);
        gl_matrix_free(b);
        gl_matrix_free(copy);
        gl_density_free(f);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(gl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
