use mflab_ffi::*;
use std::ffi::CStr;
use std::ptr;

fn last_error() -> String {
    let p = mflab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn kernel_round_trip() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(mflab_kernel_log(2, &mut k), MflabStatus::Ok);
        let mut g = 0.0;
        assert_eq!(mflab_kernel_eval(k, 0.5, &mut g), MflabStatus::Ok);
        assert!((g - 2f64.ln()).abs() < 1e-15);
        let mut c = 0.0;
        assert_eq!(mflab_kernel_constant(k, &mut c), MflabStatus::Ok);
        assert!((c - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(mflab_kernel_eval(k, 0.0, &mut g), MflabStatus::Singularity);
        mflab_kernel_free(k);
    }
}

#[test]
fn invalid_arguments_report_status_and_message() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(mflab_kernel_riesz(2, 2.5, &mut k), MflabStatus::InvalidSpec);
        assert!(k.is_null());
        assert!(last_error().contains("Riesz exponent"));
        assert_eq!(mflab_kernel_log(2, ptr::null_mut()), MflabStatus::NullPointer);
        assert_eq!(mflab_particles_len(ptr::null()), 0);
        let mut e = 0.0;
        assert_eq!(mflab_interaction_energy(ptr::null(), ptr::null(), &mut e), MflabStatus::NullPointer);
        mflab_kernel_free(ptr::null_mut());
        mflab_particles_free(ptr::null_mut());
        mflab_measure_free(ptr::null_mut());
        let v = CStr::from_ptr(mflab_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn modulated_energy_of_one_particle() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(mflab_kernel_riesz(1, 0.5, &mut k), MflabStatus::Ok);
        let mut m = ptr::null_mut();
        let c = [0.5];
        assert_eq!(mflab_uniform_ball(k, c.as_ptr(), 0.5, &mut m), MflabStatus::Ok);
        let mut p = ptr::null_mut();
        let x = [0.5];
        assert_eq!(mflab_particles_new(1, 1, x.as_ptr(), ptr::null(), &mut p), MflabStatus::Ok);
        let mut f = 0.0;
        assert_eq!(mflab_modulated_energy(p, m, &mut f), MflabStatus::Ok);
        assert!((f - (8.0 / 3.0 - 4.0 * 2f64.sqrt())).abs() < 1e-12);
        mflab_particles_free(p);
        mflab_measure_free(m);
        mflab_kernel_free(k);
    }
}

#[test]
fn two_body_separation_through_the_api() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(mflab_kernel_log(2, &mut k), MflabStatus::Ok);
        let x = [-0.5, 0.0, 0.5, 0.0];
        let mut p = ptr::null_mut();
        assert_eq!(mflab_particles_new(2, 2, x.as_ptr(), ptr::null(), &mut p), MflabStatus::Ok);
        assert_eq!(mflab_particles_advance(p, k, MflabFlow::Gradient, 1e-3, 1000), MflabStatus::Ok);
        let mut out = [0.0; 4];
        assert_eq!(mflab_particles_positions(p, out.as_mut_ptr(), 4), MflabStatus::Ok);
        let r2 = (out[2] - out[0]).powi(2) + (out[3] - out[1]).powi(2);
        // r^2 = r0^2 + 4t
        assert!((r2 - 5.0).abs() < 1e-6 * 5.0, "{r2}");
        assert_eq!(mflab_particles_positions(p, out.as_mut_ptr(), 3), MflabStatus::InvalidSpec);
        mflab_particles_free(p);
        mflab_kernel_free(k);
    }
}

#[test]
fn truncated_energy_and_exact_families() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(mflab_kernel_log(2, &mut k), MflabStatus::Ok);
        let mut m = ptr::null_mut();
        assert_eq!(mflab_exact_solution(k, MflabFamily::ExpandingBall, 0.5, 0.0, 1.0, 0.375, &mut m), MflabStatus::Ok);
        let mut r = 0.0;
        assert_eq!(mflab_measure_radius(m, &mut r), MflabStatus::Ok);
        // R^2 = R0^2 + 2t
        assert!((r * r - 1.0).abs() < 1e-12);
        let x = [0.1, 0.0, -0.2, 0.3, 0.0, -0.4];
        let mut p = ptr::null_mut();
        assert_eq!(mflab_particles_new(2, 3, x.as_ptr(), ptr::null(), &mut p), MflabStatus::Ok);
        let mut te = f64::NAN;
        assert_eq!(mflab_truncated_energy(p, m, &mut te, ptr::null_mut(), ptr::null_mut()), MflabStatus::Ok);
        assert!(te >= 0.0);
        let origin = [0.0, 0.0];
        let mut h = 0.0;
        assert_eq!(mflab_measure_potential(m, origin.as_ptr(), &mut h), MflabStatus::Ok);
        // unit disk: h(0) = 1/2
        assert!((h - 0.5).abs() < 1e-9, "{h}");
        mflab_particles_free(p);
        mflab_measure_free(m);
        mflab_kernel_free(k);
    }
}
