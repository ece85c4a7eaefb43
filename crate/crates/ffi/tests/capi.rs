use std::ffi::{CStr, CString};
use std::ptr;

use fracnet_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let len = unsafe { fracnet_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(len > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

fn payoff(name: &str, strike: f64, dim: usize) -> *mut FracnetPayoff {
    let name = CString::new(name).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { fracnet_payoff_new(name.as_ptr(), strike, dim, &mut out) };
    assert_eq!(status, FracnetStatus::Ok);
    assert!(!out.is_null());
    out
}

#[test]
fn quadratic_g_matches_closed_form() {
    let p = payoff("quadratic", 0.0, 1);
    let y = [0.7];
    let mut g = 0.0;
    let status = unsafe {
        fracnet_conditional_expectation(p, FracnetModel::Brownian, 0.25, y.as_ptr(), 1, &mut g)
    };
    assert_eq!(status, FracnetStatus::Ok);
    assert!((g - (0.49 + 0.75)).abs() < 1e-10, "{g}");

    let mut h = 0.0;
    let status = unsafe { fracnet_h_value(p, FracnetModel::Brownian, 0.25, y.as_ptr(), 1, &mut h) };
    assert_eq!(status, FracnetStatus::Ok);
    assert!((h - 2.0).abs() < 1e-6, "{h}");
    unsafe { fracnet_payoff_free(p) };
}

#[test]
fn binary_h_blows_up_toward_maturity() {
    let p = payoff("binary", 0.0, 1);
    // G(t, y) = Φ(y/√s) with s = 1 - t, so |G_yy| = y s^{-3/2} φ(y/√s).
    let y = [0.05];
    let mut near = 0.0;
    let mut far = 0.0;
    unsafe {
        assert_eq!(
            fracnet_h_value(p, FracnetModel::Brownian, 0.5, y.as_ptr(), 1, &mut far),
            FracnetStatus::Ok
        );
        assert_eq!(
            fracnet_h_value(p, FracnetModel::Brownian, 0.99, y.as_ptr(), 1, &mut near),
            FracnetStatus::Ok
        );
        fracnet_payoff_free(p);
    }
    let oracle = |s: f64| {
        let z = 0.05 / s.sqrt();
        0.05 * s.powf(-1.5) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    };
    assert!((far - oracle(0.5)).abs() < 1e-6 * oracle(0.5), "{far}");
    assert!((near - oracle(0.01)).abs() < 1e-6 * oracle(0.01), "{near}");
    assert!(near > far);
}

#[test]
fn unknown_payoff_is_invalid_input() {
    let name = CString::new("digital_rainbow").unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { fracnet_payoff_new(name.as_ptr(), 0.0, 1, &mut out) };
    assert_eq!(status, FracnetStatus::InvalidInput);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let mut out = ptr::null_mut();
    let status = unsafe { fracnet_payoff_new(ptr::null(), 0.0, 1, &mut out) };
    assert_eq!(status, FracnetStatus::NullPointer);
    assert!(last_error().contains("name"));

    let mut g = 0.0;
    let y = [0.0];
    let status = unsafe {
        fracnet_conditional_expectation(
            ptr::null(),
            FracnetModel::Brownian,
            0.5,
            y.as_ptr(),
            1,
            &mut g,
        )
    };
    assert_eq!(status, FracnetStatus::NullPointer);

    unsafe {
        fracnet_payoff_free(ptr::null_mut());
        fracnet_net_free(ptr::null_mut());
    }
}

#[test]
fn time_outside_unit_interval_is_rejected() {
    let p = payoff("call", 1.0, 1);
    let y = [1.0];
    let mut g = 0.0;
    let status = unsafe {
        fracnet_conditional_expectation(p, FracnetModel::Geometric, 1.5, y.as_ptr(), 1, &mut g)
    };
    assert_ne!(status, FracnetStatus::Ok);
    unsafe { fracnet_payoff_free(p) };
}

#[test]
fn theta_net_knots_and_mesh() {
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { fracnet_net_theta(8, 0.5, &mut net) },
        FracnetStatus::Ok
    );

    let mut len = 0;
    assert_eq!(unsafe { fracnet_net_len(net, &mut len) }, FracnetStatus::Ok);
    assert_eq!(len, 9);

    let mut small = [0.0; 4];
    assert_eq!(
        unsafe { fracnet_net_knots(net, small.as_mut_ptr(), small.len()) },
        FracnetStatus::BufferTooSmall
    );
    assert_eq!(small, [0.0; 4]);

    let mut knots = vec![0.0; len];
    assert_eq!(
        unsafe { fracnet_net_knots(net, knots.as_mut_ptr(), len) },
        FracnetStatus::Ok
    );
    for (i, &t) in knots.iter().enumerate() {
        let expected = 1.0 - (1.0 - i as f64 / 8.0).powi(2);
        assert!((t - expected).abs() < 1e-14, "knot {i}: {t} vs {expected}");
    }

    let mut mesh = 0.0;
    assert_eq!(
        unsafe { fracnet_net_mesh_theta(net, 0.5, &mut mesh) },
        FracnetStatus::Ok
    );
    assert!(mesh <= 1.0 / (0.5 * 8.0) + 1e-15, "{mesh}");
    assert_eq!(
        unsafe { fracnet_net_mesh_theta(net, 0.0, &mut mesh) },
        FracnetStatus::InvalidInput
    );
    unsafe { fracnet_net_free(net) };
}

#[test]
fn equidistant_net_and_bad_sizes() {
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { fracnet_net_equidistant(4, &mut net) },
        FracnetStatus::Ok
    );
    let mut knots = [0.0; 5];
    assert_eq!(
        unsafe { fracnet_net_knots(net, knots.as_mut_ptr(), 5) },
        FracnetStatus::Ok
    );
    assert_eq!(knots, [0.0, 0.25, 0.5, 0.75, 1.0]);
    unsafe { fracnet_net_free(net) };

    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { fracnet_net_equidistant(0, &mut bad) },
        FracnetStatus::InvalidInput
    );
    assert!(bad.is_null());
    assert_eq!(
        unsafe { fracnet_net_theta(4, 1.5, &mut bad) },
        FracnetStatus::InvalidInput
    );
}

#[test]
fn error_message_truncates() {
    let mut bad = ptr::null_mut();
    unsafe { fracnet_net_theta(4, -1.0, &mut bad) };
    let mut buf = [1 as std::ffi::c_char; 4];
    let len = unsafe { fracnet_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(len > 3);
    assert_eq!(buf[3], 0);
    assert_eq!(
        unsafe { fracnet_last_error_message(ptr::null_mut(), 0) },
        len
    );
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(fracnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_generated() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fracnet.h")).unwrap();
    for sym in [
        "fracnet_payoff_new",
        "fracnet_net_knots",
        "FRACNET_STATUS_BUFFER_TOO_SMALL",
        "typedef struct FracnetNet",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}
