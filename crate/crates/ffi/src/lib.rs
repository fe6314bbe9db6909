//! C interface to `reprsim`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns an [`RsStatus`];
//! on failure [`rs_last_error`] describes the problem for the calling thread.
//! Strings returned by the library are released with [`rs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use reprsim::advisor::advise;
use reprsim::dumpio::validate_dump;
use reprsim::heatmap::{self, SimilarityGrid, SvgOptions};
use reprsim::measure::{Direction, Measure};
use reprsim::pipeline::{grid_from_scores, moments_from_files, score_pair, score_sets, MeasureParams, PairSelection};
use reprsim::stats::{read_moments, write_moments, AccumulateOptions, MomentSet, PairMeta};
use reprsim::{Error, ErrorKind};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsStatus {
    Ok = 0,
    /// Bad argument or unsatisfiable request.
    Usage = 1,
    /// Unreadable or malformed input.
    Data = 2,
    /// A numerical routine failed.
    Numerical = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// The library panicked; the handle involved should be discarded.
    Panic = 5,
}

pub const RS_MEASURE_NEU_NEU: c_int = 0;
pub const RS_MEASURE_NEU_LAY: c_int = 1;
pub const RS_MEASURE_SVCCA: c_int = 2;
pub const RS_MEASURE_PWCCA: c_int = 3;
pub const RS_MEASURE_ATTENTION: c_int = 4;

pub const RS_DIRECTION_ROWS: c_int = 0;
pub const RS_DIRECTION_COLUMNS: c_int = 1;

/// Scoring options; fill with [`rs_params_default`] before changing fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RsParams {
    /// Nonzero compares correlation magnitudes (neu-neu, attention).
    pub use_abs: c_int,
    pub ridge_eps: f64,
    pub eig_floor: f64,
    pub svcca_threshold: f64,
    /// `RS_DIRECTION_ROWS` or `RS_DIRECTION_COLUMNS`.
    pub direction: c_int,
}

/// Moment sets of one or more layer pairs.
pub struct RsMoments {
    sets: Vec<MomentSet>,
}

/// A similarity grid.
pub struct RsGrid {
    grid: SimilarityGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> RsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            match e.kind() {
                ErrorKind::Usage => RsStatus::Usage,
                ErrorKind::Data => RsStatus::Data,
                ErrorKind::Numerical => RsStatus::Numerical,
            }
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(&format!("{name} is null"));
            RsStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic");
            RsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{name} is not valid UTF-8"))))
}

fn measure(code: c_int) -> FfiResult<Measure> {
    Ok(match code {
        RS_MEASURE_NEU_NEU => Measure::NeuNeu,
        RS_MEASURE_NEU_LAY => Measure::NeuLay,
        RS_MEASURE_SVCCA => Measure::Svcca,
        RS_MEASURE_PWCCA => Measure::Pwcca,
        RS_MEASURE_ATTENTION => Measure::Attention,
        other => return Err(Error::InvalidArgument(format!("unknown measure code {other}")).into()),
    })
}

unsafe fn params(p: *const RsParams) -> FfiResult<MeasureParams> {
    let Some(p) = p.as_ref() else {
        return Ok(MeasureParams::default());
    };
    let direction = match p.direction {
        RS_DIRECTION_ROWS => Direction::XToY,
        RS_DIRECTION_COLUMNS => Direction::YToX,
        other => return Err(Error::InvalidArgument(format!("unknown direction code {other}")).into()),
    };
    let out = MeasureParams {
        use_abs: p.use_abs != 0,
        ridge_eps: p.ridge_eps,
        eig_floor: p.eig_floor,
        svcca_threshold: p.svcca_threshold,
        direction,
    };
    out.validate()?;
    Ok(out)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message describing the last failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn rs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default scoring options.
///
/// # Safety
/// `out` must be null or point to writable memory for one `RsParams`.
#[no_mangle]
pub unsafe extern "C" fn rs_params_default(out: *mut RsParams) -> RsStatus {
    guard(|| {
        let d = MeasureParams::default();
        *out_ptr(out, "out")? = RsParams {
            use_abs: d.use_abs as c_int,
            ridge_eps: d.ridge_eps,
            eig_floor: d.eig_floor,
            svcca_threshold: d.svcca_threshold,
            direction: RS_DIRECTION_ROWS,
        };
        Ok(())
    })
}

/// Checks a dump file. `is_clean` receives 1 when no violations were found.
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_validate_dump(path: *const c_char, is_clean: *mut c_int, n_violations: *mut u64) -> RsStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        let clean = out_ptr(is_clean, "is_clean")?;
        let count = out_ptr(n_violations, "n_violations")?;
        let file = std::fs::File::open(&path).map_err(Error::at(&path))?;
        let report = validate_dump(std::io::BufReader::with_capacity(1 << 20, file))?;
        *clean = report.is_clean() as c_int;
        *count = report.violations.len() as u64;
        Ok(())
    })
}

/// Moments of one layer pair from row-major frame buffers (`n x dx` and `n x dy`).
///
/// # Safety
/// `x` and `y` must hold `n*dx` and `n*dy` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_from_frames(
    x: *const f64,
    y: *const f64,
    n: usize,
    dx: usize,
    dy: usize,
    out: *mut *mut RsMoments,
) -> RsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let len_x = n.checked_mul(dx).ok_or_else(|| Error::InvalidArgument("n * dx overflows".into()))?;
        let len_y = n.checked_mul(dy).ok_or_else(|| Error::InvalidArgument("n * dy overflows".into()))?;
        let xs = if len_x == 0 { &[][..] } else { std::slice::from_raw_parts(deref(x, "x")?, len_x) };
        let ys = if len_y == 0 { &[][..] } else { std::slice::from_raw_parts(deref(y, "y")?, len_y) };
        let set = MomentSet::from_rows(PairMeta::new("x", 0, "y", 0), xs, ys, n, dx, dy)?;
        *out = Box::into_raw(Box::new(RsMoments { sets: vec![set] }));
        Ok(())
    })
}

/// Streams two activation dumps. `pairs` is `"all"`, `"diagonal"` or a list
/// like `"0:0,1:2"`; `budget_bytes` bounds the memory of each pass.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_from_dumps(
    x_path: *const c_char,
    y_path: *const c_char,
    pairs: *const c_char,
    budget_bytes: u64,
    out: *mut *mut RsMoments,
) -> RsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let x = PathBuf::from(text(x_path, "x_path")?);
        let y = PathBuf::from(text(y_path, "y_path")?);
        let selection: PairSelection = text(pairs, "pairs")?.parse()?;
        let passes = moments_from_files(&x, &y, &selection, budget_bytes, AccumulateOptions::default())?;
        *out = Box::into_raw(Box::new(RsMoments { sets: passes.into_iter().flatten().collect() }));
        Ok(())
    })
}

/// Loads a `.rsm` file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_read(path: *const c_char, out: *mut *mut RsMoments) -> RsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(text(path, "path")?);
        let file = std::fs::File::open(&path).map_err(Error::at(&path))?;
        let sets = read_moments(std::io::BufReader::new(file))?;
        *out = Box::into_raw(Box::new(RsMoments { sets }));
        Ok(())
    })
}

/// Saves moments as a `.rsm` file. All sets must come from one pass.
///
/// # Safety
/// `moments` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_write(moments: *const RsMoments, path: *const c_char) -> RsStatus {
    guard(|| {
        let m = deref(moments, "moments")?;
        let path = PathBuf::from(text(path, "path")?);
        let file = std::fs::File::create(&path).map_err(Error::at(&path))?;
        let mut w = std::io::BufWriter::new(file);
        write_moments(&m.sets, &mut w)?;
        std::io::Write::flush(&mut w).map_err(Error::at(&path))?;
        Ok(())
    })
}

/// Number of layer pairs held; 0 for a null handle.
///
/// # Safety
/// `moments` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_len(moments: *const RsMoments) -> usize {
    moments.as_ref().map_or(0, |m| m.sets.len())
}

/// Layers, frame count and unit counts of pair `index`.
///
/// # Safety
/// `moments` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_pair(
    moments: *const RsMoments,
    index: usize,
    layer_x: *mut u16,
    layer_y: *mut u16,
    n_frames: *mut u64,
) -> RsStatus {
    guard(|| {
        let m = deref(moments, "moments")?;
        let s = m
            .sets
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("pair index {index} out of range ({})", m.sets.len())))?;
        *out_ptr(layer_x, "layer_x")? = s.meta.layer_x;
        *out_ptr(layer_y, "layer_y")? = s.meta.layer_y;
        *out_ptr(n_frames, "n_frames")? = s.n();
        Ok(())
    })
}

/// Releases a moments handle. Null is ignored.
///
/// # Safety
/// `moments` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rs_moments_free(moments: *mut RsMoments) {
    if !moments.is_null() {
        drop(Box::from_raw(moments));
    }
}

/// Scores pair `index` with one measure. `params` may be null for defaults.
///
/// # Safety
/// `moments` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_score(
    moments: *const RsMoments,
    index: usize,
    measure_code: c_int,
    params_in: *const RsParams,
    value: *mut f64,
    flags: *mut u32,
) -> RsStatus {
    guard(|| {
        let m = deref(moments, "moments")?;
        let s = m
            .sets
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("pair index {index} out of range ({})", m.sets.len())))?;
        let value = out_ptr(value, "value")?;
        let flags = out_ptr(flags, "flags")?;
        let score = score_pair(measure(measure_code)?, s, &params(params_in)?)?;
        *value = score.value;
        *flags = score.flags.0;
        Ok(())
    })
}

/// Scores every pair and arranges the results as a grid. The pairs must
/// cover every combination of the layers they mention.
///
/// # Safety
/// `moments` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_build(
    moments: *const RsMoments,
    measure_code: c_int,
    params_in: *const RsParams,
    out: *mut *mut RsGrid,
) -> RsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let m = deref(moments, "moments")?;
        let measure = measure(measure_code)?;
        let p = params(params_in)?;
        let scores = score_sets(measure, &m.sets, &p)?;
        let grid = grid_from_scores(measure, &scores, p.provenance(measure))?;
        *out = Box::into_raw(Box::new(RsGrid { grid }));
        Ok(())
    })
}

/// Parses grid CSV text.
///
/// # Safety
/// `csv` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_from_csv(csv: *const c_char, out: *mut *mut RsGrid) -> RsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let grid = heatmap::from_csv(text(csv, "csv")?)?;
        *out = Box::into_raw(Box::new(RsGrid { grid }));
        Ok(())
    })
}

/// # Safety
/// `grid` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_dims(grid: *const RsGrid, rows: *mut usize, cols: *mut usize) -> RsStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.grid;
        *out_ptr(rows, "rows")? = g.rows();
        *out_ptr(cols, "cols")? = g.cols();
        Ok(())
    })
}

/// Value and warning flags of cell (`row`, `col`).
///
/// # Safety
/// `grid` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_cell(grid: *const RsGrid, row: usize, col: usize, value: *mut f64, flags: *mut u32) -> RsStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.grid;
        if row >= g.rows() || col >= g.cols() {
            return Err(Error::InvalidArgument(format!("cell ({row}, {col}) outside {}x{} grid", g.rows(), g.cols())).into());
        }
        *out_ptr(value, "value")? = g.value(row, col);
        *out_ptr(flags, "flags")? = g.flag(row, col).0;
        Ok(())
    })
}

/// Grid as CSV text; release with [`rs_string_free`]. Null on failure.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_to_csv(grid: *const RsGrid) -> *mut c_char {
    let mut s = ptr::null_mut();
    let status = guard(|| {
        s = into_c_string(heatmap::to_csv(&deref(grid, "grid")?.grid));
        Ok(())
    });
    if status == RsStatus::Ok {
        s
    } else {
        ptr::null_mut()
    }
}

/// Grid as an SVG heatmap with default styling; release with [`rs_string_free`].
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_to_svg(grid: *const RsGrid) -> *mut c_char {
    let mut s = ptr::null_mut();
    let status = guard(|| {
        s = into_c_string(heatmap::to_svg(&deref(grid, "grid")?.grid, &SvgOptions::default()));
        Ok(())
    });
    if status == RsStatus::Ok {
        s
    } else {
        ptr::null_mut()
    }
}

/// Releases a grid handle. Null is ignored.
///
/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rs_grid_free(grid: *mut RsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of bottom layers to freeze: the longest prefix of `similarity`
/// (bottom layer first) at or above `threshold`.
///
/// # Safety
/// `similarity` must hold `n` doubles; `freeze_prefix` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_advise(similarity: *const f64, n: usize, threshold: f64, freeze_prefix: *mut usize) -> RsStatus {
    guard(|| {
        let out = out_ptr(freeze_prefix, "freeze_prefix")?;
        let values = if n == 0 { &[][..] } else { std::slice::from_raw_parts(deref(similarity, "similarity")?, n) };
        *out = advise(values, threshold)?.freeze_prefix;
        Ok(())
    })
}
