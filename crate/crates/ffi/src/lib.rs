//! C ABI over `bilstm`: opaque model handles, the parity solver, the logic
//! relation classifier and Gaussian conditional expectation.
//!
//! Every fallible call returns a [`BilstmStatus`]; on failure the message is
//! available from [`bilstm_last_error`] until the next failing call on the
//! same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bilstm::analysis::{activation_ratios, Reduction};
use bilstm::cells::{solve_parity, CellError, CellKind, Checkpoint, CheckpointError, HeadSpec, Model, ModelConfig, SequenceInput};
use bilstm::gauss::{conditional_expectation, GaussError};
use bilstm::logic::classify_relation;
use bilstm::Tensor;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BilstmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    Infeasible = 6,
    Numeric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BilstmCell {
    Linear = 0,
    Bilinear = 1,
    Shared = 2,
}

impl From<BilstmCell> for CellKind {
    fn from(c: BilstmCell) -> Self {
        match c {
            BilstmCell::Linear => CellKind::Linear,
            BilstmCell::Bilinear => CellKind::Bilinear,
            BilstmCell::Shared => CellKind::Shared,
        }
    }
}

/// Opaque model handle.
pub struct BilstmModel {
    inner: Model,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BilstmDims {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub layers: usize,
    /// Width of each per-step output: the regression width, or `m` without a head.
    pub out_dim: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BilstmParity {
    pub reference_count: u64,
    pub hidden: usize,
    pub count: u64,
    pub slack: u64,
    pub next_step: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: BilstmStatus, message: impl std::fmt::Display) -> BilstmStatus {
    let text = CString::new(message.to_string().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

fn cell_status(e: &CellError) -> BilstmStatus {
    match e {
        CellError::Shape { .. } | CellError::Token { .. } | CellError::Label { .. } | CellError::EmptySequence => BilstmStatus::ShapeMismatch,
        CellError::Numeric(_) | CellError::NonFiniteLoss(_) => BilstmStatus::Numeric,
        CellError::Infeasible { .. } => BilstmStatus::Infeasible,
        _ => BilstmStatus::InvalidArgument,
    }
}

fn checkpoint_status(e: &CheckpointError) -> BilstmStatus {
    match e {
        CheckpointError::Io { .. } => BilstmStatus::Io,
        CheckpointError::Model(c) => cell_status(c),
        _ => BilstmStatus::Format,
    }
}

/// Runs `f`, converting panics into [`BilstmStatus::Panic`].
fn guard(f: impl FnOnce() -> BilstmStatus) -> BilstmStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(BilstmStatus::Panic, "internal panic"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, BilstmStatus> {
    if path.is_null() {
        return Err(fail(BilstmStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(BilstmStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn model_ref<'a>(model: *const BilstmModel) -> Result<&'a Model, BilstmStatus> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| fail(BilstmStatus::NullPointer, "model is null"))
}

fn out_width(m: &Model) -> usize {
    m.config.head.out_dim().unwrap_or(m.config.hidden)
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn bilstm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bilstm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an initialized model over dense inputs. `out_dim = 0` means no
/// head (outputs are hidden states); `c` must be 0 unless `cell` is bilinear.
#[no_mangle]
pub unsafe extern "C" fn bilstm_model_new(
    cell: BilstmCell,
    n: usize,
    m: usize,
    c: usize,
    out_dim: usize,
    seed: u64,
    out: *mut *mut BilstmModel,
) -> BilstmStatus {
    guard(|| {
        if out.is_null() {
            return fail(BilstmStatus::NullPointer, "out is null");
        }
        let head = if out_dim == 0 { HeadSpec::None } else { HeadSpec::Regression { out_dim } };
        match Model::init(ModelConfig::new(cell.into(), n, m, c, head), seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BilstmModel { inner }));
                BilstmStatus::Ok
            }
            Err(e) => fail(cell_status(&e), e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn bilstm_model_load(path: *const c_char, out: *mut *mut BilstmModel) -> BilstmStatus {
    guard(|| {
        if out.is_null() {
            return fail(BilstmStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(&path).and_then(|ck| ck.to_model()) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BilstmModel { inner }));
                BilstmStatus::Ok
            }
            Err(e) => fail(checkpoint_status(&e), e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn bilstm_model_save(model: *const BilstmModel, path: *const c_char) -> BilstmStatus {
    guard(|| {
        let (model, path) = match (model_ref(model), path_arg(path)) {
            (Ok(m), Ok(p)) => (m, p),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match Checkpoint::from_model(model).save(&path) {
            Ok(()) => BilstmStatus::Ok,
            Err(e) => fail(checkpoint_status(&e), e),
        }
    })
}

/// Releases a handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bilstm_model_free(model: *mut BilstmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable scalars; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn bilstm_model_param_count(model: *const BilstmModel) -> u64 {
    model.as_ref().map_or(0, |m| m.inner.parameter_count() as u64)
}

#[no_mangle]
pub unsafe extern "C" fn bilstm_model_dims(model: *const BilstmModel, out: *mut BilstmDims) -> BilstmStatus {
    guard(|| {
        let model = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(BilstmStatus::NullPointer, "out is null");
        }
        let cfg = model.config;
        *out = BilstmDims {
            n: cfg.input_dim,
            m: cfg.hidden,
            c: cfg.pool,
            layers: cfg.layers,
            out_dim: out_width(model),
        };
        BilstmStatus::Ok
    })
}

unsafe fn input_steps(model: &Model, inputs: *const f64, steps: usize) -> Result<Vec<Tensor>, BilstmStatus> {
    if inputs.is_null() {
        return Err(fail(BilstmStatus::NullPointer, "inputs is null"));
    }
    if steps == 0 {
        return Err(fail(BilstmStatus::InvalidArgument, "sequence is empty"));
    }
    let n = model.config.input_dim;
    let data = std::slice::from_raw_parts(inputs, steps * n);
    Ok(data.chunks_exact(n).map(|x| Tensor::vector(x.to_vec())).collect())
}

/// Runs one sequence from a zero state. `inputs` holds `steps x n` values
/// row-major; `outputs` receives `steps x out_dim` and has room for
/// `outputs_len` values.
#[no_mangle]
pub unsafe extern "C" fn bilstm_model_forward(
    model: *const BilstmModel,
    inputs: *const f64,
    steps: usize,
    outputs: *mut f64,
    outputs_len: usize,
) -> BilstmStatus {
    guard(|| {
        let model = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if outputs.is_null() {
            return fail(BilstmStatus::NullPointer, "outputs is null");
        }
        let need = steps * out_width(model);
        if outputs_len < need {
            return fail(BilstmStatus::ShapeMismatch, format!("outputs needs {need} values, got {outputs_len}"));
        }
        let xs = match input_steps(model, inputs, steps) {
            Ok(x) => x,
            Err(s) => return s,
        };
        match model.sequence_forward(SequenceInput::Vectors(&xs)) {
            Ok(fwd) => {
                let dst = std::slice::from_raw_parts_mut(outputs, need);
                for (chunk, y) in dst.chunks_exact_mut(out_width(model)).zip(&fwd.outputs) {
                    chunk.copy_from_slice(y.data());
                }
                BilstmStatus::Ok
            }
            Err(e) => fail(cell_status(&e), e),
        }
    })
}

/// Bilinear:linear activation ratio per timestep (mean absolute entry,
/// averaged over gates and layers). Undefined ratios are written as NaN.
#[no_mangle]
pub unsafe extern "C" fn bilstm_model_activation_ratios(
    model: *const BilstmModel,
    inputs: *const f64,
    steps: usize,
    ratios: *mut f64,
) -> BilstmStatus {
    guard(|| {
        let model = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if ratios.is_null() {
            return fail(BilstmStatus::NullPointer, "ratios is null");
        }
        let xs = match input_steps(model, inputs, steps) {
            Ok(x) => x,
            Err(s) => return s,
        };
        match activation_ratios(model, SequenceInput::Vectors(&xs), Reduction::Mean) {
            Ok(traces) => {
                let dst = std::slice::from_raw_parts_mut(ratios, steps);
                for (d, s) in dst.iter_mut().zip(&traces[0].steps) {
                    *d = s.ratio.unwrap_or(f64::NAN);
                }
                BilstmStatus::Ok
            }
            Err(e) => fail(BilstmStatus::InvalidArgument, e),
        }
    })
}

/// Largest bilinear hidden size with pool `c` whose parameter count does not
/// exceed a linear reference of width `ref_n`, hidden `ref_m` and a
/// regression head of `out_dim` (0 for none).
#[no_mangle]
pub unsafe extern "C" fn bilstm_parity_solve(ref_n: usize, ref_m: usize, c: usize, out_dim: usize, out: *mut BilstmParity) -> BilstmStatus {
    guard(|| {
        if out.is_null() {
            return fail(BilstmStatus::NullPointer, "out is null");
        }
        let head = if out_dim == 0 { HeadSpec::None } else { HeadSpec::Regression { out_dim } };
        let reference = ModelConfig::linear(ref_n, ref_m, head);
        if let Err(e) = reference.validate() {
            return fail(cell_status(&e), e);
        }
        match solve_parity(&reference, c) {
            Ok(p) => {
                let narrow = |v: u128| u64::try_from(v).unwrap_or(u64::MAX);
                *out = BilstmParity {
                    reference_count: narrow(p.reference_count),
                    hidden: p.hidden,
                    count: narrow(p.count),
                    slack: narrow(p.slack),
                    next_step: narrow(p.next_step),
                };
                BilstmStatus::Ok
            }
            Err(e) => fail(cell_status(&e), e),
        }
    })
}

/// Relation between two satisfying sets over the 64 assignments of six
/// variables: 0 equivalence, 1 forward entailment, 2 reverse entailment,
/// 3 negation, 4 alternation, 5 cover, 6 independence.
#[no_mangle]
pub extern "C" fn bilstm_classify_relation(a: u64, b: u64) -> u32 {
    classify_relation(a, b).index() as u32
}

/// `E[y | x]` for a zero-mean Gaussian with covariance `sigma` (`d x d`,
/// row-major) where `x` is the first `k` variables. Writes `d - k` values;
/// with `k = 0` that is the prior mean, all zeros.
#[no_mangle]
pub unsafe extern "C" fn bilstm_conditional_expectation(sigma: *const f64, d: usize, x: *const f64, k: usize, out: *mut f64) -> BilstmStatus {
    guard(|| {
        if sigma.is_null() || out.is_null() || (x.is_null() && k > 0) {
            return fail(BilstmStatus::NullPointer, "null argument");
        }
        if k > d {
            return fail(BilstmStatus::InvalidArgument, format!("k = {k} exceeds d = {d}"));
        }
        if k == 0 {
            std::slice::from_raw_parts_mut(out, d).fill(0.0);
            return BilstmStatus::Ok;
        }
        let s = Tensor::matrix(d, d, std::slice::from_raw_parts(sigma, d * d).to_vec());
        let xs = std::slice::from_raw_parts(x, k);
        let unobserved: Vec<usize> = (k..d).collect();
        match conditional_expectation(&s, xs, &unobserved) {
            Ok(y) => {
                ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
                BilstmStatus::Ok
            }
            Err(e @ GaussError::Spec(_)) => fail(BilstmStatus::InvalidArgument, e),
            Err(e) => fail(BilstmStatus::Numeric, e),
        }
    })
}
