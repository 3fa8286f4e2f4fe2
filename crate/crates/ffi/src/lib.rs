//! C interface to `mfequil`.
//!
//! Objects are opaque handles returned through `out` parameters and released
//! with the matching `mfe_*_free`. Every fallible
//! function returns an [`MfeStatus`]; on failure a description is available
//! from [`mfe_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use mfequil::exact::sinkhorn_knopp;
use mfequil::linops::{mm, CsrMatrix, DenseMatrix, ExplicitMatrix, LinearOperator};
use mfequil::metrics::rms_error;
use mfequil::solvers::{lsqr, lsqr_preconditioned, LsqrRun};
use mfequil::{sgd_equilibrate, EquilibrationParams, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfeStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    NotEquilibratable = 6,
    Singular = 7,
    NoConvergence = 8,
    TooLarge = 9,
    CallbackFailed = 10,
    Panic = 11,
}

/// Equilibration settings. A zero `alpha` or `beta` selects the default
/// targets `(n/m)^(1/4)` and `(m/n)^(1/4)`; `max_log_scale` may be infinite.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub max_log_scale: f64,
    pub iterations: usize,
    pub seed: u64,
}

/// Summary of a computed scaling.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfeScalingInfo {
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    /// Products with the operator and with its transpose.
    pub applies: usize,
    pub adjoint_applies: usize,
    /// Every iterate stayed inside the box and below its ceiling.
    pub bounds_held: bool,
}

/// Summary of an LSQR solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfeSolveInfo {
    pub iterations: usize,
    /// Equilibration iterations spent before the first LSQR iteration.
    pub equilibration_iterations: usize,
    /// `|A x - b| / |b|` at the returned `x`.
    pub relative_residual: f64,
    pub converged: bool,
    /// Products charged to the solve, equilibration included.
    pub applies: usize,
    pub adjoint_applies: usize,
}

/// Computes `y = A x` (`transpose` false) or `y = A^T x` (`transpose` true)
/// for the user's operator. `x` has `x_len` entries and `y` has `y_len`.
/// Returns zero on success. Must be safe to call from several threads.
pub type MfeMatvecFn =
    Option<unsafe extern "C" fn(ctx: *mut c_void, transpose: bool, x: *const f64, x_len: usize, y: *mut f64, y_len: usize) -> c_int>;

/// Explicit dense or sparse matrix.
pub struct MfeMatrix {
    inner: ExplicitMatrix,
}

/// Matrix-free operator: either an explicit matrix or user callbacks.
pub struct MfeOperator {
    inner: Box<dyn LinearOperator>,
    failed: Arc<AtomicBool>,
}

/// Row and column scalings `d`, `e`.
pub struct MfeScaling {
    d: Vec<f64>,
    e: Vec<f64>,
    info: MfeScalingInfo,
}

struct CallbackOperator {
    rows: usize,
    cols: usize,
    matvec: unsafe extern "C" fn(*mut c_void, bool, *const f64, usize, *mut f64, usize) -> c_int,
    ctx: *mut c_void,
    failed: Arc<AtomicBool>,
}

// The caller promises thread-safe callbacks when creating the operator.
unsafe impl Send for CallbackOperator {}
unsafe impl Sync for CallbackOperator {}

impl CallbackOperator {
    fn call(&self, transpose: bool, x: &[f64], y: &mut [f64]) {
        let code = unsafe { (self.matvec)(self.ctx, transpose, x.as_ptr(), x.len(), y.as_mut_ptr(), y.len()) };
        if code != 0 {
            self.failed.store(true, Ordering::Relaxed);
            y.fill(0.0);
        }
    }
}

impl LinearOperator for CallbackOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.call(false, x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        self.call(true, y, x)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> MfeStatus {
    match e {
        Error::DimensionMismatch { .. } => MfeStatus::DimensionMismatch,
        Error::NonPositiveScaling { .. }
        | Error::InvalidParameter(_)
        | Error::Asymmetric { .. }
        | Error::InconsistentTargets(_) => MfeStatus::InvalidArgument,
        Error::Parse { .. } => MfeStatus::Parse,
        Error::Io { .. } => MfeStatus::Io,
        Error::NotEquilibratable(_) => MfeStatus::NotEquilibratable,
        Error::Singular => MfeStatus::Singular,
        Error::NoConvergence { .. } => MfeStatus::NoConvergence,
        Error::TooLarge { .. } => MfeStatus::TooLarge,
    }
}

struct Failure(MfeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MfeStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, recording any failure or panic for [`mfe_last_error_message`].
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MfeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MfeStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal error: {message}"));
            MfeStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        Ok(&mut [])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(p, len))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<(), Failure> {
    if expected == actual {
        Ok(())
    } else {
        Err(Failure(
            MfeStatus::DimensionMismatch,
            format!("{what}: expected length {expected}, got {actual}"),
        ))
    }
}

impl MfeParams {
    fn to_params(self) -> EquilibrationParams {
        let target = |x: f64| (x != 0.0).then_some(x);
        EquilibrationParams {
            alpha: target(self.alpha),
            beta: target(self.beta),
            gamma: self.gamma,
            max_log_scale: self.max_log_scale,
            iterations: self.iterations,
            seed: self.seed,
        }
    }
}

impl MfeOperator {
    fn check_callbacks(&self) -> Result<(), Failure> {
        if self.failed.swap(false, Ordering::Relaxed) {
            Err(Failure(MfeStatus::CallbackFailed, "operator callback returned an error".into()))
        } else {
            Ok(())
        }
    }
}

/// Description of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code, or "unknown status".
#[no_mangle]
pub extern "C" fn mfe_status_name(status: c_int) -> *const c_char {
    let name: &'static CStr = match status {
        0 => c"ok",
        1 => c"null pointer",
        2 => c"dimension mismatch",
        3 => c"invalid argument",
        4 => c"parse error",
        5 => c"I/O error",
        6 => c"not equilibratable",
        7 => c"singular",
        8 => c"no convergence",
        9 => c"too large",
        10 => c"callback failed",
        11 => c"internal error",
        _ => c"unknown status",
    };
    name.as_ptr()
}

/// Default settings: automatic targets, `gamma = 0.1`, `max_log_scale =
/// ln 10^4`, 100 iterations, seed 0.
#[no_mangle]
pub extern "C" fn mfe_params_default() -> MfeParams {
    let p = EquilibrationParams::default();
    MfeParams {
        alpha: p.alpha.unwrap_or(0.0),
        beta: p.beta.unwrap_or(0.0),
        gamma: p.gamma,
        max_log_scale: p.max_log_scale,
        iterations: p.iterations,
        seed: p.seed,
    }
}

/// Dense matrix from `rows * cols` row-major entries.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_matrix_from_dense(rows: usize, cols: usize, data: *const f64, out: *mut *mut MfeMatrix) -> MfeStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| Failure(MfeStatus::InvalidArgument, "size overflows".into()))?;
        let values = slice(data, len, "data")?.to_vec();
        let inner = DenseMatrix::from_row_major(rows, cols, values).into();
        store(out, MfeMatrix { inner })
    })
}

/// Sparse matrix from `nnz` zero-based `(row, col, value)` triplets.
/// Out-of-range or repeated positions are rejected.
///
/// # Safety
/// The three arrays must hold `nnz` entries each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_matrix_from_triplets(
    rows: usize,
    cols: usize,
    nnz: usize,
    row_idx: *const usize,
    col_idx: *const usize,
    values: *const f64,
    out: *mut *mut MfeMatrix,
) -> MfeStatus {
    guard(|| {
        let vals = slice(values, nnz, "values")?;
        let (ri, ci) = if nnz == 0 {
            (&[][..], &[][..])
        } else if row_idx.is_null() || col_idx.is_null() {
            return Err(null("index array"));
        } else {
            (std::slice::from_raw_parts(row_idx, nnz), std::slice::from_raw_parts(col_idx, nnz))
        };
        let triplets: Vec<(usize, usize, f64)> = ri.iter().zip(ci).zip(vals).map(|((i, j), v)| (*i, *j, *v)).collect();
        let inner = CsrMatrix::from_triplets(rows, cols, &triplets)?.into();
        store(out, MfeMatrix { inner })
    })
}

/// Reads a Matrix Market coordinate file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_matrix_read_matrix_market(path: *const c_char, out: *mut *mut MfeMatrix) -> MfeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(MfeStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let inner = mm::read_matrix_market(Path::new(path))?;
        store(out, MfeMatrix { inner })
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `matrix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfe_matrix_rows(matrix: *const MfeMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.rows())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `matrix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfe_matrix_cols(matrix: *const MfeMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.cols())
}

/// # Safety
/// `matrix` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfe_matrix_free(matrix: *mut MfeMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Operator view of a matrix. The operator holds its own copy, so the
/// matrix may be freed afterwards.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_operator_from_matrix(matrix: *const MfeMatrix, out: *mut *mut MfeOperator) -> MfeStatus {
    guard(|| {
        let m = deref(matrix, "matrix")?;
        store(
            out,
            MfeOperator {
                inner: Box::new(m.inner.clone()),
                failed: Arc::default(),
            },
        )
    })
}

/// Operator given by a user callback. `ctx` is passed back unchanged and
/// must outlive the operator.
///
/// # Safety
/// `matvec` must write `y_len` doubles to `y` and be callable from any
/// thread; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_operator_from_callback(
    rows: usize,
    cols: usize,
    matvec: MfeMatvecFn,
    ctx: *mut c_void,
    out: *mut *mut MfeOperator,
) -> MfeStatus {
    guard(|| {
        let matvec = matvec.ok_or_else(|| null("matvec callback"))?;
        let failed = Arc::new(AtomicBool::new(false));
        let op = CallbackOperator {
            rows,
            cols,
            matvec,
            ctx,
            failed: Arc::clone(&failed),
        };
        store(
            out,
            MfeOperator {
                inner: Box::new(op),
                failed,
            },
        )
    })
}

/// # Safety
/// `op` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfe_operator_free(op: *mut MfeOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Equilibrates `op` by projected stochastic gradient.
///
/// # Safety
/// `op` must be a live handle, `params` null (defaults) or readable, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_equilibrate(op: *const MfeOperator, params: *const MfeParams, out: *mut *mut MfeScaling) -> MfeStatus {
    guard(|| {
        let op = deref(op, "operator")?;
        let params = params.as_ref().copied().unwrap_or_else(|| mfe_params_default()).to_params();
        let r = sgd_equilibrate(&op.inner, &params);
        op.check_callbacks()?;
        let r = r?;
        let info = MfeScalingInfo {
            rows: r.d.len(),
            cols: r.e.len(),
            iterations: r.iterations,
            applies: r.matvecs.apply,
            adjoint_applies: r.matvecs.apply_adjoint,
            bounds_held: r.bounds_held,
        };
        store(out, MfeScaling { d: r.d, e: r.e, info })
    })
}

/// Sinkhorn-Knopp scaling of an explicit matrix to row norms `alpha` and
/// column norms `beta`. `converged` may be null.
///
/// # Safety
/// `matrix` must be a live handle, `out` writable, `converged` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_sinkhorn(
    matrix: *const MfeMatrix,
    alpha: f64,
    beta: f64,
    max_iters: usize,
    tol: f64,
    out: *mut *mut MfeScaling,
    converged: *mut bool,
) -> MfeStatus {
    guard(|| {
        let m = deref(matrix, "matrix")?;
        let r = sinkhorn_knopp(&m.inner, alpha, beta, max_iters, tol)?;
        if let Some(c) = converged.as_mut() {
            *c = r.converged;
        }
        let info = MfeScalingInfo {
            rows: r.d.len(),
            cols: r.e.len(),
            iterations: r.iterations,
            applies: 0,
            adjoint_applies: 0,
            bounds_held: true,
        };
        store(out, MfeScaling { d: r.d, e: r.e, info })
    })
}

/// # Safety
/// `scaling` must be a live handle and `info` writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_scaling_info(scaling: *const MfeScaling, info: *mut MfeScalingInfo) -> MfeStatus {
    guard(|| {
        let s = deref(scaling, "scaling")?;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        *info = s.info;
        Ok(())
    })
}

/// Copies `d` (length rows) and `e` (length cols) into caller buffers.
/// Either buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn mfe_scaling_copy(
    scaling: *const MfeScaling,
    d: *mut f64,
    d_len: usize,
    e: *mut f64,
    e_len: usize,
) -> MfeStatus {
    guard(|| {
        let s = deref(scaling, "scaling")?;
        if !d.is_null() {
            check_len("row scaling buffer", s.d.len(), d_len)?;
            slice_mut(d, d_len, "d")?.copy_from_slice(&s.d);
        }
        if !e.is_null() {
            check_len("column scaling buffer", s.e.len(), e_len)?;
            slice_mut(e, e_len, "e")?.copy_from_slice(&s.e);
        }
        Ok(())
    })
}

/// # Safety
/// `scaling` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfe_scaling_free(scaling: *mut MfeScaling) {
    if !scaling.is_null() {
        drop(Box::from_raw(scaling));
    }
}

/// RMS deviation of the row norms of `diag(d) A diag(e)` from `alpha` and
/// of its column norms from `beta`.
///
/// # Safety
/// `d`, `e` must hold `d_len`, `e_len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfe_rms_error(
    matrix: *const MfeMatrix,
    d: *const f64,
    d_len: usize,
    e: *const f64,
    e_len: usize,
    alpha: f64,
    beta: f64,
    out: *mut f64,
) -> MfeStatus {
    guard(|| {
        let m = deref(matrix, "matrix")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let logs = |x: &[f64], what: &str| -> Result<Vec<f64>, Failure> {
            x.iter()
                .map(|v| {
                    if *v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(Failure(MfeStatus::InvalidArgument, format!("{what} has a non-positive entry {v}")))
                    }
                })
                .collect()
        };
        let u = logs(slice(d, d_len, "d")?, "d")?;
        let v = logs(slice(e, e_len, "e")?, "e")?;
        *out = rms_error(&m.inner, &u, &v, alpha, beta)?;
        Ok(())
    })
}

/// Solves `min |A x - b|` for square `A` by LSQR, preconditioned with
/// equilibration when `params` is non-null. `info` may be null.
///
/// # Safety
/// `b` must hold `b_len` doubles, `x` must hold `x_len` writable doubles,
/// `params` and `info` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn mfe_lsqr(
    op: *const MfeOperator,
    b: *const f64,
    b_len: usize,
    params: *const MfeParams,
    max_iters: usize,
    atol: f64,
    x: *mut f64,
    x_len: usize,
    info: *mut MfeSolveInfo,
) -> MfeStatus {
    guard(|| {
        let op = deref(op, "operator")?;
        let b = slice(b, b_len, "b")?;
        check_len("solution buffer", op.inner.cols(), x_len)?;
        let x = slice_mut(x, x_len, "x")?;
        let run: mfequil::Result<LsqrRun> = match params.as_ref() {
            Some(p) => lsqr_preconditioned(&op.inner, b, &p.to_params(), max_iters, atol),
            None => lsqr(&op.inner, b, max_iters, atol),
        };
        op.check_callbacks()?;
        let run = run?;
        x.copy_from_slice(&run.x);
        if let Some(info) = info.as_mut() {
            *info = MfeSolveInfo {
                iterations: run.iterations,
                equilibration_iterations: run.equilibration_iterations,
                relative_residual: run.residual_history.last().copied().unwrap_or(f64::NAN),
                converged: run.converged,
                applies: run.matvecs.apply,
                adjoint_applies: run.matvecs.apply_adjoint,
            };
        }
        Ok(())
    })
}
