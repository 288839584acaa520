//! C interface to the drug-response graph transformer.
//!
//! Every fallible function returns a [`DrgtStatus`]; on failure the message is
//! available from [`drgt_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use drgt_core::cli::{CliError, RunConfig};
use drgt_core::dataset::{load_matrices, Dataset};
use drgt_core::eval::{auroc, r2};
use drgt_core::graph::{DgMode, NodeFeatures, UnifiedGraph};
use drgt_core::interpret::hypergeom_upper_tail;
use drgt_core::model::GtModel;
use drgt_core::smiles::{morgan_fingerprint, parse_smiles, Fingerprint};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrgtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Runtime = 6,
    Undefined = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut msg = msg.into();
    msg.retain(|c| c != '\0');
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DrgtStatus, msg: impl Into<String>) -> DrgtStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> DrgtStatus) -> DrgtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DrgtStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, DrgtStatus> {
    if p.is_null() {
        return Err(fail(DrgtStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DrgtStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], DrgtStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DrgtStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn drgt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drgt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Hashed circular fingerprint of one molecule.
pub struct DrgtFingerprint {
    inner: Fingerprint,
}

/// Parses `smiles` and computes its Morgan fingerprint.
///
/// # Safety
/// `smiles` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drgt_fingerprint_new(
    smiles: *const c_char,
    radius: usize,
    nbits: usize,
    out: *mut *mut DrgtFingerprint,
) -> DrgtStatus {
    guard(|| {
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = tri!(str_arg(smiles, "smiles"));
        if nbits == 0 {
            return fail(DrgtStatus::InvalidArgument, "nbits must be positive");
        }
        let mol = match parse_smiles(text) {
            Ok(m) => m,
            Err(e) => return fail(DrgtStatus::Parse, e.to_string()),
        };
        let fp = morgan_fingerprint(&mol, radius, nbits);
        *out = Box::into_raw(Box::new(DrgtFingerprint { inner: fp }));
        DrgtStatus::Ok
    })
}

/// # Safety
/// `fp` must come from [`drgt_fingerprint_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn drgt_fingerprint_free(fp: *mut DrgtFingerprint) {
    if !fp.is_null() {
        drop(Box::from_raw(fp));
    }
}

/// # Safety
/// `fp` must be a live fingerprint handle.
#[no_mangle]
pub unsafe extern "C" fn drgt_fingerprint_len(fp: *const DrgtFingerprint) -> usize {
    fp.as_ref().map_or(0, |f| f.inner.len())
}

/// # Safety
/// `fp` must be a live fingerprint handle.
#[no_mangle]
pub unsafe extern "C" fn drgt_fingerprint_count_ones(fp: *const DrgtFingerprint) -> usize {
    fp.as_ref().map_or(0, |f| f.inner.count_ones())
}

/// Copies the bits as 0/1 bytes into `buf`, which must hold `len` bytes and
/// `len` must equal the fingerprint length.
///
/// # Safety
/// `fp` must be live and `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn drgt_fingerprint_bits(
    fp: *const DrgtFingerprint,
    buf: *mut u8,
    len: usize,
) -> DrgtStatus {
    guard(|| {
        let Some(f) = fp.as_ref() else {
            return fail(DrgtStatus::NullPointer, "fingerprint is null");
        };
        if buf.is_null() {
            return fail(DrgtStatus::NullPointer, "buf is null");
        }
        if len != f.inner.len() {
            return fail(
                DrgtStatus::InvalidArgument,
                format!(
                    "buffer holds {len} bytes, fingerprint has {}",
                    f.inner.len()
                ),
            );
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from(f.inner.get(i));
        }
        DrgtStatus::Ok
    })
}

/// Tanimoto similarity of two fingerprints of equal length.
///
/// # Safety
/// Both handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drgt_fingerprint_tanimoto(
    a: *const DrgtFingerprint,
    b: *const DrgtFingerprint,
    out: *mut f64,
) -> DrgtStatus {
    guard(|| {
        let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
            return fail(DrgtStatus::NullPointer, "fingerprint is null");
        };
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        if a.inner.len() != b.inner.len() {
            return fail(DrgtStatus::InvalidArgument, "fingerprint lengths differ");
        }
        *out = a.inner.tanimoto(&b.inner);
        DrgtStatus::Ok
    })
}

/// Area under the ROC curve with midranks for ties. Labels are 0 or 1.
/// Returns `Undefined` when either class is empty.
///
/// # Safety
/// `scores` and `labels` must point to `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn drgt_auroc(
    scores: *const f64,
    labels: *const f64,
    n: usize,
    out: *mut f64,
) -> DrgtStatus {
    guard(|| {
        let s = tri!(slice_arg(scores, n, "scores"));
        let l = tri!(slice_arg(labels, n, "labels"));
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        if s.iter().any(|v| !v.is_finite()) {
            return fail(DrgtStatus::InvalidArgument, "non-finite score");
        }
        if l.iter().any(|&v| v != 0.0 && v != 1.0) {
            return fail(DrgtStatus::InvalidArgument, "labels must be 0 or 1");
        }
        match auroc(s, l) {
            Some(v) => {
                *out = v;
                DrgtStatus::Ok
            }
            None => fail(DrgtStatus::Undefined, "both classes must be present"),
        }
    })
}

/// Coefficient of determination. Returns `Undefined` for constant targets.
///
/// # Safety
/// `y` and `pred` must point to `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn drgt_r2(
    y: *const f64,
    pred: *const f64,
    n: usize,
    out: *mut f64,
) -> DrgtStatus {
    guard(|| {
        let y = tri!(slice_arg(y, n, "y"));
        let p = tri!(slice_arg(pred, n, "pred"));
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        match r2(y, p) {
            Some(v) => {
                *out = v;
                DrgtStatus::Ok
            }
            None => fail(
                DrgtStatus::Undefined,
                "R2 is undefined for constant targets",
            ),
        }
    })
}

/// Probability of drawing at least `k` marked items in `n` draws without
/// replacement from `universe` items of which `marked` are marked.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn drgt_hypergeom_upper_tail(
    universe: u64,
    marked: u64,
    n: u64,
    k: u64,
    out: *mut f64,
) -> DrgtStatus {
    guard(|| {
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        if marked > universe || n > universe {
            return fail(
                DrgtStatus::InvalidArgument,
                "marked and n must not exceed universe",
            );
        }
        *out = hypergeom_upper_tail(universe, marked, n, k);
        DrgtStatus::Ok
    })
}

/// A loaded dataset, graph and trained checkpoint ready for scoring.
pub struct DrgtSession {
    dataset: Dataset,
    graph: UnifiedGraph,
    features: NodeFeatures,
    model: GtModel,
}

fn open_session(
    config: &Path,
    checkpoint: Option<&Path>,
) -> Result<DrgtSession, (DrgtStatus, String)> {
    let cli = |e: CliError| {
        let status = match e {
            CliError::Validation(_) => DrgtStatus::InvalidArgument,
            _ => DrgtStatus::Runtime,
        };
        (status, e.to_string())
    };
    let cfg = RunConfig::load(Some(config), &[]).map_err(cli)?;
    let paths = cfg.data().map_err(cli)?;
    let raw = load_matrices(paths).map_err(|e| (DrgtStatus::Io, e.to_string()))?;
    let dataset = Dataset::prepare(&raw, &cfg.prepare_options())
        .map_err(|e| (DrgtStatus::InvalidArgument, e.to_string()))?;
    let graph = UnifiedGraph::build(&dataset, &HashSet::new(), DgMode::Train, &cfg.graph)
        .map_err(|e| (DrgtStatus::Runtime, e.to_string()))?;
    let features =
        NodeFeatures::from_dataset(&dataset).map_err(|e| (DrgtStatus::Runtime, e.to_string()))?;
    let path = checkpoint.map_or_else(|| cfg.checkpoint_path(), Path::to_path_buf);
    let model = GtModel::load(&path).map_err(|e| (DrgtStatus::Io, e.to_string()))?;
    model
        .check_dims(&graph)
        .map_err(|e| (DrgtStatus::InvalidArgument, e.to_string()))?;
    Ok(DrgtSession {
        dataset,
        graph,
        features,
        model,
    })
}

/// Opens a session from a TOML run configuration and a checkpoint. A null
/// `checkpoint` uses the configured one.
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drgt_session_open(
    config: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut DrgtSession,
) -> DrgtStatus {
    guard(|| {
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let config = tri!(str_arg(config, "config"));
        let checkpoint = if checkpoint.is_null() {
            None
        } else {
            Some(Path::new(tri!(str_arg(checkpoint, "checkpoint"))))
        };
        match open_session(Path::new(config), checkpoint) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(s));
                DrgtStatus::Ok
            }
            Err((status, msg)) => fail(status, msg),
        }
    })
}

/// # Safety
/// `s` must come from [`drgt_session_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn drgt_session_free(s: *mut DrgtSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn drgt_session_num_drugs(s: *const DrgtSession) -> usize {
    s.as_ref().map_or(0, |s| s.dataset.labels.drugs.len())
}

/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn drgt_session_num_cells(s: *const DrgtSession) -> usize {
    s.as_ref().map_or(0, |s| s.dataset.labels.cells.len())
}

/// Scores one drug-cell pair by name: a probability of sensitivity for
/// classification models, a response value for regression models.
///
/// # Safety
/// `s` must be live, names NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drgt_session_predict(
    s: *const DrgtSession,
    drug: *const c_char,
    cell: *const c_char,
    out: *mut f64,
) -> DrgtStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(DrgtStatus::NullPointer, "session is null");
        };
        if out.is_null() {
            return fail(DrgtStatus::NullPointer, "out is null");
        }
        let drug = tri!(str_arg(drug, "drug"));
        let cell = tri!(str_arg(cell, "cell"));
        let labels = &s.dataset.labels;
        let Some(d) = labels.drugs.iter().position(|x| x == drug) else {
            return fail(DrgtStatus::InvalidArgument, format!("unknown drug {drug}"));
        };
        let Some(c) = labels.cells.iter().position(|x| x == cell) else {
            return fail(
                DrgtStatus::InvalidArgument,
                format!("unknown cell line {cell}"),
            );
        };
        match s.model.predict_pairs(&s.graph, &s.features, &[(d, c)]) {
            Ok(v) => {
                *out = v[0];
                DrgtStatus::Ok
            }
            Err(e) => fail(DrgtStatus::Runtime, e.to_string()),
        }
    })
}
