//! C interface to `coref-mt`.
//!
//! Every function returns a [`CmtStatus`]. Results come back through out
//! pointers; strings allocated here must be released with
//! [`cmt_string_free`]. On failure [`cmt_last_error`] describes the error
//! raised on the calling thread.
//!
//! Token sequences cross the boundary as whitespace-separated UTF-8, corpora
//! as newline-separated sentences and cluster sets as JSON arrays of clusters
//! of `{"start": s, "end": e}` spans (1-based, inclusive).

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use coref_mt::coref::coref_log_prob;
use coref_mt::corpus::CorefClusterSet;
use coref_mt::eval::{corpus_bleu, muc_score};
use coref_mt::inference::{beam_search, rerank_cached, score_coref};
use coref_mt::model::EncodedWindow;
use coref_mt::{Error, Model};

/// Status codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    CheckpointMismatch = 5,
    Runtime = 6,
    Panic = 7,
}

/// A loaded model. Only ever handled through a pointer.
pub struct CmtModel {
    model: Model,
}

/// MUC precision, recall and F1.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CmtMuc {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(CmtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::MissingCheckpoint { .. } => CmtStatus::Io,
            Error::CheckpointMismatch(_) | Error::Checkpoint(_) | Error::Config(_) => CmtStatus::CheckpointMismatch,
            Error::NonFiniteLoss { .. } | Error::DegenerateGold | Error::EmptyValidationSet => CmtStatus::Runtime,
            _ => CmtStatus::InvalidArgument,
        };
        Fail(code, e.to_string())
    }
}

type Res<T> = std::result::Result<T, Fail>;

fn guard(f: impl FnOnce() -> Res<()>) -> CmtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CmtStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            CmtStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(Fail(CmtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CmtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn deref_model<'a>(p: *const CmtModel) -> Res<&'a Model> {
    p.as_ref()
        .map(|m| &m.model)
        .ok_or_else(|| Fail(CmtStatus::NullPointer, "model is null".into()))
}

fn out<T>(p: *mut T) -> Res<&'static mut T> {
    unsafe { p.as_mut() }.ok_or_else(|| Fail(CmtStatus::NullPointer, "output pointer is null".into()))
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn lines(s: &str) -> Vec<Vec<String>> {
    s.lines().map(tokens).collect()
}

unsafe fn clusters(p: *const c_char) -> Res<CorefClusterSet> {
    if p.is_null() {
        return Ok(CorefClusterSet::empty());
    }
    let s = text(p, "clusters")?;
    serde_json::from_str(s).map_err(|e| Fail(CmtStatus::InvalidArgument, format!("clusters: {e}")))
}

fn c_string(s: String) -> Res<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(CmtStatus::Runtime, "output contains a NUL byte".into()))
}

/// Loads a checkpoint into `*out_model`.
#[no_mangle]
pub unsafe extern "C" fn cmt_model_load(path: *const c_char, out_model: *mut *mut CmtModel) -> CmtStatus {
    guard(|| {
        let slot = out(out_model)?;
        *slot = ptr::null_mut();
        let m = Model::load(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(CmtModel { model: m }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cmt_model_free(model: *mut CmtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Beam-decodes one window and writes its N-best list as JSON to `*out_json`,
/// reranked with weight `beta` when the model has a coreference head.
/// `clusters_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn cmt_translate(
    model: *const CmtModel,
    source: *const c_char,
    clusters_json: *const c_char,
    beam: usize,
    beta: f64,
    out_json: *mut *mut c_char,
) -> CmtStatus {
    guard(|| {
        let slot = out(out_json)?;
        *slot = ptr::null_mut();
        let m = deref_model(model)?;
        let src = m.vocab.encode(&tokens(text(source, "source")?));
        let c = clusters(clusters_json)?;
        if beam == 0 || !beta.is_finite() {
            return Err(Fail(CmtStatus::InvalidArgument, "beam must be positive and beta finite".into()));
        }
        let mut list = beam_search(m, &src, &c, beam)?;
        if m.config.variant.has_coref_head() {
            score_coref(m, &mut list, &src, &c)?;
            list = rerank_cached(&list, beta);
        }
        let json = serde_json::to_string(&list).map_err(|e| Fail(CmtStatus::Runtime, e.to_string()))?;
        *slot = c_string(json)?;
        Ok(())
    })
}

/// `log p(C | y, x)` of the gold clusters with the decoder teacher-forced on
/// `target`.
#[no_mangle]
pub unsafe extern "C" fn cmt_coref_log_prob(
    model: *const CmtModel,
    source: *const c_char,
    target: *const c_char,
    clusters_json: *const c_char,
    out_value: *mut f64,
) -> CmtStatus {
    guard(|| {
        let slot = out(out_value)?;
        let m = deref_model(model)?;
        let w = EncodedWindow {
            src: m.vocab.encode(&tokens(text(source, "source")?)),
            tgt: m.vocab.encode(&tokens(text(target, "target")?)),
            clusters: clusters(clusters_json)?,
        };
        *slot = coref_log_prob(m, &w)?;
        Ok(())
    })
}

/// Corpus BLEU in `[0, 100]` over newline-separated sentences.
#[no_mangle]
pub unsafe extern "C" fn cmt_corpus_bleu(
    hypotheses: *const c_char,
    references: *const c_char,
    out_value: *mut f64,
) -> CmtStatus {
    guard(|| {
        let slot = out(out_value)?;
        let h = lines(text(hypotheses, "hypotheses")?);
        let r = lines(text(references, "references")?);
        *slot = corpus_bleu(&h, &r)?;
        Ok(())
    })
}

/// MUC of a predicted against a gold cluster set.
#[no_mangle]
pub unsafe extern "C" fn cmt_muc_score(
    predicted_json: *const c_char,
    gold_json: *const c_char,
    out_muc: *mut CmtMuc,
) -> CmtStatus {
    guard(|| {
        let slot = out(out_muc)?;
        if predicted_json.is_null() || gold_json.is_null() {
            return Err(Fail(CmtStatus::NullPointer, "cluster sets must not be null".into()));
        }
        let r = muc_score(&clusters(predicted_json)?, &clusters(gold_json)?)?;
        *slot = CmtMuc {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        };
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the next
/// call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn cmt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cmt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
