//! C ABI over the sequence-labeling toolkit.
//!
//! The surface follows the usual opaque-handle pattern: constructors
//! return a status code and write a handle through an out-pointer, every
//! handle has a matching `_free`, and string outputs are allocated here
//! and released with [`seqtag_string_free`] / [`seqtag_tags_free`]. On
//! any non-OK status, [`seqtag_last_error_message`] returns a
//! thread-local human-readable description.
//!
//! The generated header lives at `include/seqtag.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, size_t};

use seqtag_core::checkpoint;
use seqtag_core::corpus::{parse_conll, Tagset};
use seqtag_core::eval::{
    check_tokens_match, phrase_f1, render_metrics, render_report, word_f1, EvalReport,
    ReportStyle,
};
use seqtag_core::trainer::CrfModel;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqtagStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input text could not be parsed (CoNLL syntax, unknown tag, ...).
    ParseError = 3,
    /// The checkpoint file could not be read or verified.
    ModelError = 4,
    /// Prediction failed (e.g. a word exceeds the subword budget).
    PredictError = 5,
    /// Gold and prediction texts are inconsistent.
    EvalError = 6,
    /// Invalid argument value (unknown tagset or style name, ...).
    InvalidArgument = 7,
    /// An internal panic was caught; this is a bug.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn fail(status: SeqtagStatus, message: impl Into<String>) -> SeqtagStatus {
    set_error(message);
    status
}

/// Message for the most recent non-OK status on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn seqtag_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static string.
#[no_mangle]
pub extern "C" fn seqtag_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Opaque tagset handle.
pub struct SeqtagTagset {
    inner: Tagset,
}

/// Opaque trained-model handle.
pub struct SeqtagModel {
    inner: CrfModel,
}

fn guard(body: impl FnOnce() -> SeqtagStatus) -> SeqtagStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(SeqtagStatus::Internal, "internal panic"),
    }
}

unsafe fn required_str<'a>(
    pointer: *const c_char,
    what: &str,
) -> Result<&'a str, SeqtagStatus> {
    if pointer.is_null() {
        return Err(fail(SeqtagStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(pointer).to_str().map_err(|_| {
        fail(
            SeqtagStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn export_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Creates a builtin tagset (`"peyma"` or `"arman"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
/// A returned handle must be released with [`seqtag_tagset_free`].
#[no_mangle]
pub unsafe extern "C" fn seqtag_tagset_builtin(
    name: *const c_char,
    out: *mut *mut SeqtagTagset,
) -> SeqtagStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeqtagStatus::NullArgument, "out is null");
        }
        let name = match required_str(name, "name") {
            Ok(name) => name,
            Err(status) => return status,
        };
        let tagset = match name {
            "peyma" => Tagset::peyma(),
            "arman" => Tagset::arman(),
            other => {
                return fail(
                    SeqtagStatus::InvalidArgument,
                    format!("unknown builtin tagset {other:?}"),
                )
            }
        };
        *out = Box::into_raw(Box::new(SeqtagTagset { inner: tagset }));
        SeqtagStatus::Ok
    })
}

/// Creates a tagset from `class_count` class-name strings.
///
/// # Safety
/// `classes` must point to `class_count` NUL-terminated strings; `name`
/// and `out` as in [`seqtag_tagset_builtin`].
#[no_mangle]
pub unsafe extern "C" fn seqtag_tagset_from_classes(
    name: *const c_char,
    classes: *const *const c_char,
    class_count: size_t,
    out: *mut *mut SeqtagTagset,
) -> SeqtagStatus {
    guard(|| {
        if out.is_null() || classes.is_null() {
            return fail(SeqtagStatus::NullArgument, "classes/out is null");
        }
        let name = match required_str(name, "name") {
            Ok(name) => name,
            Err(status) => return status,
        };
        let mut class_names = Vec::with_capacity(class_count);
        for index in 0..class_count {
            let class = match required_str(*classes.add(index), "class name") {
                Ok(class) => class,
                Err(status) => return status,
            };
            class_names.push(class);
        }
        match Tagset::new(name, &class_names) {
            Ok(tagset) => {
                *out = Box::into_raw(Box::new(SeqtagTagset { inner: tagset }));
                SeqtagStatus::Ok
            }
            Err(error) => fail(SeqtagStatus::InvalidArgument, error.to_string()),
        }
    })
}

/// Number of classes in a tagset; 0 for a null handle.
///
/// # Safety
/// `tagset` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn seqtag_tagset_class_count(tagset: *const SeqtagTagset) -> size_t {
    if tagset.is_null() {
        0
    } else {
        (*tagset).inner.classes().len()
    }
}

/// Releases a tagset handle. Null is a no-op.
///
/// # Safety
/// `tagset` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn seqtag_tagset_free(tagset: *mut SeqtagTagset) {
    if !tagset.is_null() {
        drop(Box::from_raw(tagset));
    }
}

/// Loads the best model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
/// A returned handle must be released with [`seqtag_model_free`].
#[no_mangle]
pub unsafe extern "C" fn seqtag_model_load(
    path: *const c_char,
    out: *mut *mut SeqtagModel,
) -> SeqtagStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeqtagStatus::NullArgument, "out is null");
        }
        let path = match required_str(path, "path") {
            Ok(path) => path,
            Err(status) => return status,
        };
        match checkpoint::load(Path::new(path)) {
            Ok(loaded) => {
                *out = Box::into_raw(Box::new(SeqtagModel {
                    inner: loaded.best_model(),
                }));
                SeqtagStatus::Ok
            }
            Err(error) => fail(SeqtagStatus::ModelError, error.to_string()),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn seqtag_model_free(model: *mut SeqtagModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Tags one tokenized sentence. On success, `*out_tags` receives an
/// array of `token_count` newly allocated tag strings (`O`, `B-c`,
/// `I-c`), to be released with [`seqtag_tags_free`].
///
/// # Safety
/// `model` must be a live handle; `tokens` must point to `token_count`
/// NUL-terminated strings; `out_tags` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn seqtag_model_predict(
    model: *const SeqtagModel,
    tokens: *const *const c_char,
    token_count: size_t,
    out_tags: *mut *mut *mut c_char,
) -> SeqtagStatus {
    guard(|| {
        if model.is_null() || tokens.is_null() || out_tags.is_null() {
            return fail(SeqtagStatus::NullArgument, "model/tokens/out_tags is null");
        }
        if token_count == 0 {
            return fail(SeqtagStatus::InvalidArgument, "token_count is zero");
        }
        let mut words = Vec::with_capacity(token_count);
        for index in 0..token_count {
            let token = match required_str(*tokens.add(index), "token") {
                Ok(token) => token,
                Err(status) => return status,
            };
            words.push(token.to_string());
        }
        let model = &(*model).inner;
        match model.predict_sentence(&words) {
            Ok(tags) => {
                let mut exported: Vec<*mut c_char> = tags
                    .iter()
                    .map(|&tag| export_string(model.tagset.label_name(tag).to_string()))
                    .collect();
                exported.shrink_to_fit();
                let pointer = exported.as_mut_ptr();
                std::mem::forget(exported);
                *out_tags = pointer;
                SeqtagStatus::Ok
            }
            Err(error) => fail(SeqtagStatus::PredictError, error.to_string()),
        }
    })
}

/// Releases a tag array from [`seqtag_model_predict`]. Null is a no-op.
///
/// # Safety
/// `tags` must be an array of exactly `count` strings returned by this
/// library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn seqtag_tags_free(tags: *mut *mut c_char, count: size_t) {
    if tags.is_null() {
        return;
    }
    let exported = Vec::from_raw_parts(tags, count, count);
    for tag in exported {
        if !tag.is_null() {
            drop(CString::from_raw(tag));
        }
    }
}

/// Scores prediction text against gold text (both CoNLL, same token
/// column) and writes a rendered report to `*out_report`. `style` is
/// `"per-tag"`, `"per-class"`, `"summary"`, or `"metrics"` for the flat
/// machine-readable key=value form.
///
/// # Safety
/// All strings NUL-terminated; `tagset` a live handle; `out_report` a
/// valid pointer. The returned string is released with
/// [`seqtag_string_free`].
#[no_mangle]
pub unsafe extern "C" fn seqtag_eval_conll(
    tagset: *const SeqtagTagset,
    gold_text: *const c_char,
    pred_text: *const c_char,
    style: *const c_char,
    out_report: *mut *mut c_char,
) -> SeqtagStatus {
    guard(|| {
        if tagset.is_null() || out_report.is_null() {
            return fail(SeqtagStatus::NullArgument, "tagset/out_report is null");
        }
        let gold_text = match required_str(gold_text, "gold_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let pred_text = match required_str(pred_text, "pred_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let style = match required_str(style, "style") {
            Ok(style) => style,
            Err(status) => return status,
        };
        let tagset = &(*tagset).inner;
        let gold = match parse_conll(gold_text, tagset, "gold") {
            Ok(corpus) => corpus,
            Err(error) => return fail(SeqtagStatus::ParseError, error.to_string()),
        };
        let pred = match parse_conll(pred_text, tagset, "pred") {
            Ok(corpus) => corpus,
            Err(error) => return fail(SeqtagStatus::ParseError, error.to_string()),
        };
        if let Err(error) = check_tokens_match(&gold, &pred) {
            return fail(SeqtagStatus::EvalError, error.to_string());
        }
        let gold_tags: Vec<_> = gold.sentences.iter().map(|s| s.tags.clone()).collect();
        let pred_tags: Vec<_> = pred.sentences.iter().map(|s| s.tags.clone()).collect();
        let report = EvalReport {
            word_tags: match word_f1(&gold_tags, &pred_tags, tagset) {
                Ok(counts) => counts,
                Err(error) => return fail(SeqtagStatus::EvalError, error.to_string()),
            },
            phrase_classes: match phrase_f1(&gold_tags, &pred_tags, tagset) {
                Ok(counts) => counts,
                Err(error) => return fail(SeqtagStatus::EvalError, error.to_string()),
            },
            tagset: tagset.clone(),
        };
        let text = if style == "metrics" {
            render_metrics(&report)
        } else {
            match ReportStyle::parse(style) {
                Some(style) => render_report(&report, style),
                None => {
                    return fail(
                        SeqtagStatus::InvalidArgument,
                        format!("unknown style {style:?}"),
                    )
                }
            }
        };
        *out_report = export_string(text);
        SeqtagStatus::Ok
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `text` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn seqtag_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
