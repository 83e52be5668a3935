use std::ffi::{CStr, CString};
use std::ptr;

use bilstm::cells::{HeadSpec, Model, ModelConfig, SequenceInput};
use bilstm::Tensor;
use bilstm_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bilstm_last_error()) }.to_string_lossy().into_owned()
}

fn new_model(cell: BilstmCell, n: usize, m: usize, c: usize, out_dim: usize, seed: u64) -> *mut BilstmModel {
    let mut h = ptr::null_mut();
    let s = unsafe { bilstm_model_new(cell, n, m, c, out_dim, seed, &mut h) };
    assert_eq!(s, BilstmStatus::Ok, "{}", last_error());
    assert!(!h.is_null());
    h
}

fn inputs(steps: usize, n: usize) -> Vec<f64> {
    (0..steps * n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(bilstm_version()) };
    assert_eq!(v.to_str().unwrap(), bilstm::VERSION);
}

#[test]
fn forward_matches_rust_model() {
    let (n, m, c, k, steps) = (4, 6, 2, 3, 5);
    let h = new_model(BilstmCell::Bilinear, n, m, c, k, 11);
    let mut dims = BilstmDims::default();
    assert_eq!(unsafe { bilstm_model_dims(h, &mut dims) }, BilstmStatus::Ok);
    assert_eq!(dims, BilstmDims { n, m, c, layers: 1, out_dim: k });

    let reference = Model::init(ModelConfig::bilinear(n, m, c, HeadSpec::Regression { out_dim: k }), 11).unwrap();
    assert_eq!(unsafe { bilstm_model_param_count(h) }, reference.parameter_count() as u64);

    let x = inputs(steps, n);
    let mut y = vec![0.0; steps * k];
    assert_eq!(unsafe { bilstm_model_forward(h, x.as_ptr(), steps, y.as_mut_ptr(), y.len()) }, BilstmStatus::Ok);
    let xs: Vec<Tensor> = x.chunks(n).map(|r| Tensor::vector(r.to_vec())).collect();
    let want: Vec<f64> = reference
        .sequence_forward(SequenceInput::Vectors(&xs))
        .unwrap()
        .outputs
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    assert_eq!(y, want);

    let mut short = vec![0.0; steps * k - 1];
    let s = unsafe { bilstm_model_forward(h, x.as_ptr(), steps, short.as_mut_ptr(), short.len()) };
    assert_eq!(s, BilstmStatus::ShapeMismatch);
    assert!(last_error().contains("outputs needs"));
    unsafe { bilstm_model_free(h) };
}

#[test]
fn activation_ratios_per_step() {
    let (n, steps) = (3, 4);
    let h = new_model(BilstmCell::Bilinear, n, 5, 2, 0, 2);
    let x = inputs(steps, n);
    let mut r = vec![-1.0; steps];
    assert_eq!(unsafe { bilstm_model_activation_ratios(h, x.as_ptr(), steps, r.as_mut_ptr()) }, BilstmStatus::Ok);
    // zero initial state: no bilinear contribution at t = 0
    assert_eq!(r[0], 0.0);
    assert!(r[1..].iter().all(|v| v.is_finite() && *v > 0.0), "{r:?}");
    unsafe { bilstm_model_free(h) };

    let h = new_model(BilstmCell::Linear, n, 5, 0, 0, 2);
    assert_eq!(unsafe { bilstm_model_activation_ratios(h, x.as_ptr(), steps, r.as_mut_ptr()) }, BilstmStatus::Ok);
    assert!(r.iter().all(|v| *v == 0.0));
    unsafe { bilstm_model_free(h) };
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let h = new_model(BilstmCell::Shared, 3, 4, 0, 2, 9);
    assert_eq!(unsafe { bilstm_model_save(h, path.as_ptr()) }, BilstmStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { bilstm_model_load(path.as_ptr(), &mut back) }, BilstmStatus::Ok);

    let x = inputs(3, 3);
    let (mut a, mut b) = (vec![0.0; 6], vec![0.0; 6]);
    unsafe {
        assert_eq!(bilstm_model_forward(h, x.as_ptr(), 3, a.as_mut_ptr(), 6), BilstmStatus::Ok);
        assert_eq!(bilstm_model_forward(back, x.as_ptr(), 3, b.as_mut_ptr(), 6), BilstmStatus::Ok);
        bilstm_model_free(h);
        bilstm_model_free(back);
    }
    assert_eq!(a, b);

    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bilstm_model_load(missing.as_ptr(), &mut out) }, BilstmStatus::Io);
    assert!(out.is_null());
    std::fs::write(dir.path().join("bad.json"), "{").unwrap();
    let bad = CString::new(dir.path().join("bad.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bilstm_model_load(bad.as_ptr(), &mut out) }, BilstmStatus::Format);
}

#[test]
fn invalid_arguments() {
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(bilstm_model_new(BilstmCell::Linear, 0, 4, 0, 0, 0, &mut h), BilstmStatus::InvalidArgument);
        assert_eq!(bilstm_model_new(BilstmCell::Linear, 3, 4, 2, 0, 0, &mut h), BilstmStatus::InvalidArgument);
        assert!(last_error().contains("no bilinear pool"));
        assert_eq!(bilstm_model_new(BilstmCell::Linear, 3, 4, 0, 0, 0, ptr::null_mut()), BilstmStatus::NullPointer);
        assert_eq!(bilstm_model_save(ptr::null(), c"x".as_ptr()), BilstmStatus::NullPointer);
        assert_eq!(bilstm_model_param_count(ptr::null()), 0);
        bilstm_model_free(ptr::null_mut());
    }
    let h = new_model(BilstmCell::Linear, 2, 3, 0, 0, 0);
    let mut y = [0.0; 3];
    unsafe {
        assert_eq!(bilstm_model_forward(h, [0.0; 2].as_ptr(), 0, y.as_mut_ptr(), 3), BilstmStatus::InvalidArgument);
        assert_eq!(bilstm_model_forward(h, ptr::null(), 1, y.as_mut_ptr(), 3), BilstmStatus::NullPointer);
        bilstm_model_free(h);
    }
}

#[test]
fn parity() {
    let mut p = BilstmParity::default();
    assert_eq!(unsafe { bilstm_parity_solve(30, 250, 50, 0, &mut p) }, BilstmStatus::Ok);
    // 4 (30 * 250 + 250^2 + 250)
    assert_eq!(p.reference_count, 281_000);
    assert_eq!(p.hidden, 221);
    assert_eq!(p.reference_count - p.count, p.slack);
    let bilinear = |m: u64, c: u64| 4 * (30 * m + m * m + m) + 30 * c + c * m + 4 * m * c;
    assert_eq!(bilinear(221, 50), p.count);
    assert!(bilinear(222, 50) > p.reference_count);

    assert_eq!(unsafe { bilstm_parity_solve(30, 250, 100_000, 0, &mut p) }, BilstmStatus::Infeasible);
    assert_eq!(unsafe { bilstm_parity_solve(0, 250, 5, 0, &mut p) }, BilstmStatus::InvalidArgument);
}

#[test]
fn relation_matches_set_algebra() {
    let full = u64::MAX;
    let oracle = |a: u64, b: u64| -> u32 {
        if a == b {
            0
        } else if a & !b == 0 {
            1
        } else if b & !a == 0 {
            2
        } else if a & b == 0 && a | b == full {
            3
        } else if a & b == 0 {
            4
        } else if a | b == full {
            5
        } else {
            6
        }
    };
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for _ in 0..2000 {
        let (a, b) = (next(), next());
        for (x, y) in [(a, b), (a, a), (a, !a), (a & b, a), (a, a | b), (a & !b, b & !a), (a | b, !a | !b)] {
            assert_eq!(bilstm_classify_relation(x, y), oracle(x, y), "{x:#x} {y:#x}");
        }
    }
}

#[test]
fn conditional_expectation_closed_form() {
    // 3 variables, observe the first two: E[y | x] = S_yx S_xx^-1 x
    let sigma = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0];
    let x = [1.5, -2.0];
    let det = 4.0 * 3.0 - 1.0 * 1.0;
    let inv = [3.0 / det, -1.0 / det, -1.0 / det, 4.0 / det];
    let w = [2.0 * inv[0] + 0.5 * inv[2], 2.0 * inv[1] + 0.5 * inv[3]];
    let want = w[0] * x[0] + w[1] * x[1];
    let mut out = [0.0];
    let s = unsafe { bilstm_conditional_expectation(sigma.as_ptr(), 3, x.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(s, BilstmStatus::Ok, "{}", last_error());
    assert!((out[0] - want).abs() < 1e-12, "{} vs {want}", out[0]);

    let mut none = [9.0; 3];
    let s = unsafe { bilstm_conditional_expectation(sigma.as_ptr(), 3, ptr::null(), 0, none.as_mut_ptr()) };
    assert_eq!(s, BilstmStatus::Ok);
    assert_eq!(none, [0.0; 3]);

    let s = unsafe { bilstm_conditional_expectation(sigma.as_ptr(), 3, x.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(s, BilstmStatus::InvalidArgument);
    let singular = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let s = unsafe { bilstm_conditional_expectation(singular.as_ptr(), 3, x.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(s, BilstmStatus::Numeric);
}

#[test]
fn header_declares_every_export() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = std::fs::read_to_string(format!("{dir}/include/bilstm.h")).unwrap();
    let src = std::fs::read_to_string(format!("{dir}/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}
