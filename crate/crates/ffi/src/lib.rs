//! C ABI over the s2fgl library.
//!
//! Graphs cross the boundary as opaque `S2fglGraph` handles. Every function
//! returns an [`S2fglStatus`]; on failure the message is available from
//! [`s2fgl_last_error_message`] on the same thread. Panics are caught and
//! reported as `S2FGL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use s2fgl::config::ConfigBuilder;
use s2fgl::experiments::run_experiment;
use s2fgl::graph::{load_graph, sbm_generate, Graph, SbmParams};
use s2fgl::ppr::{ppr, salc, sis};
use s2fgl::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum S2fglStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Runtime = 7,
    Panic = 8,
}

/// Opaque graph handle.
pub struct S2fglGraph {
    graph: Graph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> S2fglStatus {
    match err {
        Error::Config(_) => S2fglStatus::Config,
        Error::Io(_) | Error::Parse { .. } => S2fglStatus::Io,
        Error::NonFinite(_) | Error::NotConverged { .. } | Error::Singular(_) => S2fglStatus::Numeric,
        Error::Dimension { .. } | Error::InvalidArgument(_) | Error::Graph(_) => S2fglStatus::InvalidArgument,
        Error::Diverged(_) => S2fglStatus::Runtime,
    }
}

struct Failure(S2fglStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> S2fglStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => S2fglStatus::Ok,
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
            S2fglStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(S2fglStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn graph_ref<'a>(g: *const S2fglGraph) -> Result<&'a Graph, Failure> {
    // SAFETY: the caller passes a handle from a constructor that was not freed.
    unsafe { g.as_ref() }.map(|h| &h.graph).ok_or_else(|| null("graph"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(Failure(
            S2fglStatus::BufferTooSmall,
            format!("`{what}` holds {len} values, {needed} required"),
        ));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, needed) })
}

unsafe fn put<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and, per the caller contract, writable.
    unsafe { p.write(value) };
    Ok(())
}

unsafe fn str_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(S2fglStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn s2fgl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn s2fgl_status_name(status: S2fglStatus) -> *const c_char {
    let s: &'static CStr = match status {
        S2fglStatus::Ok => c"ok",
        S2fglStatus::NullPointer => c"null pointer",
        S2fglStatus::InvalidArgument => c"invalid argument",
        S2fglStatus::Config => c"configuration error",
        S2fglStatus::Io => c"input/output error",
        S2fglStatus::Numeric => c"numerical failure",
        S2fglStatus::BufferTooSmall => c"buffer too small",
        S2fglStatus::Runtime => c"runtime failure",
        S2fglStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Loads a graph file into a new handle stored at `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_graph_load(path: *const c_char, out: *mut *mut S2fglGraph) -> S2fglStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path")? };
        let graph = load_graph(PathBuf::from(path))?;
        unsafe { put(out, Box::into_raw(Box::new(S2fglGraph { graph })), "out") }
    })
}

/// Generates a stochastic block model graph with one class per block.
///
/// # Safety
/// `block_sizes` must point to `num_blocks` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_graph_sbm(
    block_sizes: *const usize,
    num_blocks: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    seed: u64,
    out: *mut *mut S2fglGraph,
) -> S2fglStatus {
    guard(|| {
        let sizes = unsafe { slice_arg(block_sizes, num_blocks, "block_sizes")? };
        let params = SbmParams::uniform(sizes.to_vec(), p_in, p_out, feature_dim);
        let graph = sbm_generate(&params, seed)?;
        unsafe { put(out, Box::into_raw(Box::new(S2fglGraph { graph })), "out") }
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `graph` must come from a constructor of this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_graph_free(graph: *mut S2fglGraph) {
    if !graph.is_null() {
        // SAFETY: produced by Box::into_raw in a constructor.
        drop(unsafe { Box::from_raw(graph) });
    }
}

/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_graph_num_nodes(graph: *const S2fglGraph, out: *mut usize) -> S2fglStatus {
    guard(|| {
        let g = unsafe { graph_ref(graph)? };
        unsafe { put(out, g.num_nodes(), "out") }
    })
}

/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_graph_num_edges(graph: *const S2fglGraph, out: *mut usize) -> S2fglStatus {
    guard(|| {
        let g = unsafe { graph_ref(graph)? };
        unsafe { put(out, g.num_edges(), "out") }
    })
}

/// Dense row-major PPR matrix into `out` (at least N·N values).
///
/// # Safety
/// `graph` must be a live handle and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_ppr(
    graph: *const S2fglGraph,
    damping_alpha: f64,
    self_loops: bool,
    out: *mut f64,
    out_len: usize,
) -> S2fglStatus {
    guard(|| {
        let g = unsafe { graph_ref(graph)? };
        let n = g.num_nodes();
        let dst = unsafe { out_slice(out, out_len, n * n, "out")? };
        let p = ppr(g, damping_alpha, self_loops)?;
        dst.copy_from_slice(p.values.as_slice());
        Ok(())
    })
}

/// Structure inertia score of the whole graph for the given labeled nodes.
///
/// # Safety
/// `train` must point to `num_train` node ids and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_sis(
    graph: *const S2fglGraph,
    damping_alpha: f64,
    train: *const usize,
    num_train: usize,
    out: *mut f64,
) -> S2fglStatus {
    guard(|| {
        let g = unsafe { graph_ref(graph)? };
        let train = unsafe { slice_arg(train, num_train, "train")? };
        let p = ppr(g, damping_alpha, false)?;
        let value = sis(&p, train)?;
        unsafe { put(out, value, "out") }
    })
}

/// Per-node structure-aware label centrality with unit priors into `out`
/// (at least N values).
///
/// # Safety
/// `train` must point to `num_train` ids and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_salc(
    graph: *const S2fglGraph,
    damping_alpha: f64,
    train: *const usize,
    num_train: usize,
    out: *mut f64,
    out_len: usize,
) -> S2fglStatus {
    guard(|| {
        let g = unsafe { graph_ref(graph)? };
        let train = unsafe { slice_arg(train, num_train, "train")? };
        let n = g.num_nodes();
        let dst = unsafe { out_slice(out, out_len, n, "out")? };
        let scores = salc(g, train, damping_alpha, &vec![1.0; n])?;
        dst.copy_from_slice(&scores.salc);
        Ok(())
    })
}

/// Runs the `run` experiment for a config file (NULL for defaults) and
/// writes the mean and sample std of the final accuracy over seeds. When
/// `output_dir` is non-NULL it replaces the configured artifact directory.
///
/// # Safety
/// String arguments must be NUL-terminated or NULL; `mean` and `std` writable.
#[no_mangle]
pub unsafe extern "C" fn s2fgl_run_experiment(
    config_path: *const c_char,
    output_dir: *const c_char,
    mean: *mut f64,
    std: *mut f64,
) -> S2fglStatus {
    guard(|| {
        if mean.is_null() || std.is_null() {
            return Err(null("mean/std"));
        }
        let mut b = ConfigBuilder::new();
        if !config_path.is_null() {
            b = b.file(unsafe { str_arg(config_path, "config_path")? })?;
        }
        b = b.env();
        if !output_dir.is_null() {
            b.set("output_dir", unsafe { str_arg(output_dir, "output_dir")? })?;
        }
        let summary = run_experiment(&b.build()?)?;
        unsafe {
            put(mean, summary.mean, "mean")?;
            put(std, summary.std, "std")
        }
    })
}
