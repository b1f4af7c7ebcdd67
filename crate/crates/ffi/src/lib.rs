//! C interface to the manifold-ddm solver.
//!
//! Objects are opaque handles created by `*_new` functions and released with
//! the matching `*_free`. Every fallible call returns a `DdmStatus`; on
//! failure `ddm_last_error` describes the problem for the calling thread.
//! Optional real parameters take `NAN` to mean "use the default".

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use manifold_ddm::analysis::{error_norms, NormConvention, NormOptions};
use manifold_ddm::atlas::{make_builtin_atlas, Atlas, BuiltinAtlas};
use manifold_ddm::ddm::{DdmConfig, DdmSolver as Solver, DdmState};
use manifold_ddm::quadrature::CoefficientSampling;
use manifold_ddm::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    NumericDomain = 4,
    NotConverged = 5,
    AnalysisUnavailable = 6,
    NotSolved = 7,
    Io = 8,
    Panic = 9,
}

/// Built-in atlas with its problem data.
pub struct DdmAtlas {
    inner: Arc<Atlas>,
}

/// Assembled subproblems plus the latest converged state.
pub struct DdmSolver {
    inner: Solver,
    state: Option<(DdmState, usize)>,
}

/// Solver parameters; fill with `ddm_solver_options_default` first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DdmSolverOptions {
    pub n2: usize,
    pub n1_ratio: f64,
    pub cg_tolerance: f64,
    pub max_outer: usize,
    /// 0 selects the available parallelism capped at the chart count.
    pub workers: usize,
    pub quad_points: usize,
    /// Nonzero samples coefficients once per cell instead of per point.
    pub cell_center_coefficients: i32,
    pub jacobi: i32,
}

/// Error norms, each the maximum over charts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DdmErrorReport {
    pub h: f64,
    pub linf: f64,
    pub l2: f64,
    pub h1_semi: f64,
    pub energy: f64,
    pub n0: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> DdmStatus {
    match e {
        Error::InvalidArgument(_) | Error::OutOfDomain { .. } => DdmStatus::InvalidArgument,
        Error::InvalidConfig(_) => DdmStatus::InvalidConfig,
        Error::NumericDomain(_) | Error::InvalidData(_) | Error::UncoveredPoint { .. } => DdmStatus::NumericDomain,
        Error::CgNotConverged { .. } | Error::OuterNotConverged { .. } => DdmStatus::NotConverged,
        Error::AnalysisUnavailable(_) => DdmStatus::AnalysisUnavailable,
        Error::Io(_) => DdmStatus::Io,
    }
}

struct Failure(DdmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DdmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DdmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DdmStatus::Panic
        }
    }
}

fn optional(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ddm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a built-in atlas (`b4`, `b2xs2`, `cp2`, `flat_square`,
/// `flat_interval`, `flat_single`). Pass `NAN` for defaults.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddm_atlas_new_builtin(
    name: *const c_char,
    s: f64,
    delta: f64,
    r: f64,
    overlap: f64,
    b: f64,
    out: *mut *mut DdmAtlas,
) -> DdmStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Failure(DdmStatus::InvalidArgument, "name is not UTF-8".into()))?;
        let kind = BuiltinAtlas::from_name(name, optional(s), optional(delta), optional(r), optional(overlap))?;
        let atlas = make_builtin_atlas(kind, optional(b))?;
        out.write(Box::into_raw(Box::new(DdmAtlas { inner: Arc::new(atlas) })));
        Ok(())
    })
}

/// # Safety
/// `atlas` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_atlas_chart_count(atlas: *const DdmAtlas, out: *mut usize) -> DdmStatus {
    guard(|| {
        let atlas = atlas.as_ref().ok_or_else(|| null("atlas"))?;
        write_out(out, atlas.inner.chart_count(), "out")
    })
}

/// # Safety
/// `atlas` must come from `ddm_atlas_new_builtin` or be null.
#[no_mangle]
pub unsafe extern "C" fn ddm_atlas_free(atlas: *mut DdmAtlas) {
    if !atlas.is_null() {
        drop(Box::from_raw(atlas));
    }
}

/// Defaults: `n2 = 10`, `n1_ratio = 0.4`, tolerance `1e-8`, 500 outer
/// steps, automatic workers, 2 points per axis, cell-center coefficients.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_options_default(out: *mut DdmSolverOptions) -> DdmStatus {
    guard(|| {
        let d = DdmConfig::default();
        let opts = DdmSolverOptions {
            n2: d.n2,
            n1_ratio: d.n1_ratio,
            cg_tolerance: d.cg.tolerance,
            max_outer: d.max_outer,
            workers: 0,
            quad_points: d.quad_points,
            cell_center_coefficients: i32::from(d.coefficients == CoefficientSampling::CellCenter),
            jacobi: 0,
        };
        write_out(out, opts, "out")
    })
}

fn config_from(opts: &DdmSolverOptions) -> DdmConfig {
    let mut c = DdmConfig::with_n2(opts.n2);
    c.n1_ratio = opts.n1_ratio;
    c.cg.tolerance = opts.cg_tolerance;
    c.cg.jacobi = opts.jacobi != 0;
    c.max_outer = opts.max_outer;
    c.workers = (opts.workers > 0).then_some(opts.workers);
    c.quad_points = opts.quad_points;
    c.coefficients = if opts.cell_center_coefficients != 0 {
        CoefficientSampling::CellCenter
    } else {
        CoefficientSampling::QuadraturePoints
    };
    c
}

/// Builds grids and subproblems. `options` may be null for defaults. The
/// solver keeps its own reference to the atlas.
///
/// # Safety
/// `atlas` must be valid, `options` valid or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_new(
    atlas: *const DdmAtlas,
    options: *const DdmSolverOptions,
    out: *mut *mut DdmSolver,
) -> DdmStatus {
    guard(|| {
        let atlas = atlas.as_ref().ok_or_else(|| null("atlas"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = options.as_ref().map_or_else(DdmConfig::default, config_from);
        let inner = Solver::new(atlas.inner.clone(), config)?;
        out.write(Box::into_raw(Box::new(DdmSolver { inner, state: None })));
        Ok(())
    })
}

/// Runs the outer iteration to its limit and stores the result.
///
/// # Safety
/// `solver` must be valid; `n0` writable or null.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_run(solver: *mut DdmSolver, n0: *mut usize) -> DdmStatus {
    guard(|| {
        let solver = solver.as_mut().ok_or_else(|| null("solver"))?;
        solver.state = None;
        let (state, steps, _) = solver.inner.run()?;
        solver.state = Some((state, steps));
        if !n0.is_null() {
            n0.write(steps);
        }
        Ok(())
    })
}

fn solved(solver: &DdmSolver) -> Result<&(DdmState, usize), Failure> {
    solver
        .state
        .as_ref()
        .ok_or_else(|| Failure(DdmStatus::NotSolved, "ddm_solver_run has not succeeded yet".into()))
}

/// Error norms of the stored limit against the exact solution. Nonzero
/// `metric_norms` weighs L2 and H1 with the chart metric; zero uses plain
/// coordinate integrals.
///
/// # Safety
/// `solver` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_error_norms(
    solver: *const DdmSolver,
    metric_norms: i32,
    out: *mut DdmErrorReport,
) -> DdmStatus {
    guard(|| {
        let solver = solver.as_ref().ok_or_else(|| null("solver"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (state, n0) = solved(solver)?;
        let atlas = solver.inner.atlas();
        let convention = if metric_norms != 0 {
            NormConvention::Metric
        } else {
            NormConvention::Coordinate
        };
        let rule = solver.inner.config().quadrature_rule(atlas.dim())?;
        let r = error_norms(atlas, state, *n0, &NormOptions::new(rule, convention))?;
        out.write(DdmErrorReport {
            h: r.h,
            linf: r.linf,
            l2: r.l2,
            h1_semi: r.h1_semi,
            energy: r.energy,
            n0: r.n0,
        });
        Ok(())
    })
}

/// # Safety
/// `solver` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_chart_count(solver: *const DdmSolver, out: *mut usize) -> DdmStatus {
    guard(|| {
        let solver = solver.as_ref().ok_or_else(|| null("solver"))?;
        write_out(out, solver.inner.subproblems().len(), "out")
    })
}

/// Number of grid nodes of chart `chart`.
///
/// # Safety
/// `solver` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_chart_dofs(solver: *const DdmSolver, chart: usize, out: *mut usize) -> DdmStatus {
    guard(|| {
        let solver = solver.as_ref().ok_or_else(|| null("solver"))?;
        let sub = solver
            .inner
            .subproblems()
            .get(chart)
            .ok_or_else(|| Failure(DdmStatus::InvalidArgument, format!("no chart {chart}")))?;
        write_out(out, sub.grid().node_count(), "out")
    })
}

/// Largest cell edge over all charts.
///
/// # Safety
/// `solver` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_grid_scale(solver: *const DdmSolver, out: *mut f64) -> DdmStatus {
    guard(|| {
        let solver = solver.as_ref().ok_or_else(|| null("solver"))?;
        write_out(out, solver.inner.grid_scale(), "out")
    })
}

/// Copies the nodal values of chart `chart` (axis 0 fastest) into
/// `values`, which must hold `len >= ddm_solver_chart_dofs` entries.
///
/// # Safety
/// `solver` must be valid; `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_copy_solution(
    solver: *const DdmSolver,
    chart: usize,
    values: *mut f64,
    len: usize,
) -> DdmStatus {
    guard(|| {
        let solver = solver.as_ref().ok_or_else(|| null("solver"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        let (state, _) = solved(solver)?;
        let u = state
            .solutions
            .get(chart)
            .ok_or_else(|| Failure(DdmStatus::InvalidArgument, format!("no chart {chart}")))?;
        let dofs = u.dofs();
        if len < dofs.len() {
            return Err(Failure(
                DdmStatus::InvalidArgument,
                format!("buffer holds {len} values, chart {chart} has {}", dofs.len()),
            ));
        }
        ptr::copy_nonoverlapping(dofs.as_ptr(), values, dofs.len());
        Ok(())
    })
}

/// # Safety
/// `solver` must come from `ddm_solver_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn ddm_solver_free(solver: *mut DdmSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}
