//! C ABI for the vcop engine.
//!
//! Engines are opaque handles. Every entry point returns a [`VcopStatus`];
//! on failure a message is available from [`vcop_last_error_message`] on the
//! same thread. Strings handed out by the library must be released with
//! [`vcop_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vcop::pipeline::{Engine, InputSetting, PipelineError};
use vcop::situation::DisplayKind;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcopStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InputError = 4,
    ProviderError = 5,
    NotFound = 6,
    ParseError = 7,
    Internal = 8,
    Panic = 9,
}

/// Opaque engine handle.
pub struct VcopEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let c = CString::new(message).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Fail(VcopStatus, String);

impl From<PipelineError> for Fail {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::MissingInput { .. } | PipelineError::ExtraneousInput { .. } => {
                VcopStatus::InputError
            }
            PipelineError::Provider { .. } | PipelineError::GroundingViolation { .. } => {
                VcopStatus::ProviderError
            }
            PipelineError::Manual(_) | PipelineError::Situation(_) => VcopStatus::ParseError,
            PipelineError::Retrieval(_) => VcopStatus::Internal,
        };
        Fail(status, format!("{}: {e}", e.code()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VcopStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcopStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside vcop");
            VcopStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(VcopStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VcopStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn engine_ref<'a>(engine: *const VcopEngine) -> Result<&'a Engine, Fail> {
    // SAFETY: callers pass a handle from `vcop_engine_new*` that has not been freed.
    unsafe { engine.as_ref() }
        .map(|e| &e.engine)
        .ok_or_else(|| Fail(VcopStatus::NullArgument, "`engine` is null".into()))
}

fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(
            VcopStatus::NullArgument,
            "output pointer is null".into(),
        ));
    }
    // SAFETY: non-null and, per the API contract, writable.
    unsafe { out.write(value) };
    Ok(())
}

fn json_out(out: *mut *mut c_char, json: String) -> Result<(), Fail> {
    let c = CString::new(json).map_err(|e| Fail(VcopStatus::Internal, e.to_string()))?;
    if out.is_null() {
        return Err(Fail(VcopStatus::NullArgument, "`out_json` is null".into()));
    }
    write_out(out, c.into_raw())
}

fn parse_arg<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, Fail> {
    s.parse().map_err(|e| Fail(VcopStatus::InvalidArgument, e))
}

/// Create an engine over the bundled corpus and rules.
#[no_mangle]
pub extern "C" fn vcop_engine_new_bundled(out: *mut *mut VcopEngine) -> VcopStatus {
    guard(|| {
        let handle = Box::new(VcopEngine {
            engine: Engine::bundled(),
        });
        write_out(out, Box::into_raw(handle))
    })
}

/// Create an engine from manual texts and a rule set.
///
/// # Safety
/// `manuals` points to `manual_count` valid NUL-terminated strings; `rules`
/// is a valid NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vcop_engine_new(
    manuals: *const *const c_char,
    manual_count: usize,
    rules: *const c_char,
    out: *mut *mut VcopEngine,
) -> VcopStatus {
    guard(|| {
        if manuals.is_null() && manual_count > 0 {
            return Err(Fail(VcopStatus::NullArgument, "`manuals` is null".into()));
        }
        let mut texts = Vec::with_capacity(manual_count);
        for i in 0..manual_count {
            texts.push(str_arg(*manuals.add(i), "manuals[i]")?.to_string());
        }
        let rules = str_arg(rules, "rules")?;
        let engine = Engine::from_texts(texts, rules)?;
        write_out(out, Box::into_raw(Box::new(VcopEngine { engine })))
    })
}

/// Release an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or a handle from `vcop_engine_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vcop_engine_free(engine: *mut VcopEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

/// Number of procedures in the engine's corpus.
///
/// # Safety
/// `engine` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vcop_procedure_count(
    engine: *const VcopEngine,
    out: *mut usize,
) -> VcopStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        write_out(out, engine.corpus().procedure_count())
    })
}

/// Run one query. `setting` and `display` take the names used by the CLI
/// (`SNAPSHOT_PLUS_INSTRUCTION`, `ENGINE_WARNING`, ...). `instruction` may be
/// null. On success `*out_json` holds the response as JSON.
///
/// # Safety
/// String arguments are null or valid NUL-terminated strings; `engine` is a
/// live handle; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn vcop_query(
    engine: *const VcopEngine,
    setting: *const c_char,
    panel: *const c_char,
    display: *const c_char,
    instruction: *const c_char,
    out_json: *mut *mut c_char,
) -> VcopStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        let setting: InputSetting = parse_arg(str_arg(setting, "setting")?)?;
        let display: DisplayKind = parse_arg(str_arg(display, "display")?)?;
        let panel = str_arg(panel, "panel")?;
        let instruction = opt_str_arg(instruction, "instruction")?;
        let ctx = engine.query_from_panel(setting, panel, display, instruction)?;
        let response = engine.respond(&ctx)?;
        let json = serde_json::to_string(&response)
            .map_err(|e| Fail(VcopStatus::Internal, e.to_string()))?;
        json_out(out_json, json)
    })
}

/// Procedure with its verbatim excerpt, as JSON `{procedure, excerpt}`.
///
/// # Safety
/// `engine` is a live handle; `id` is a valid NUL-terminated string;
/// `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn vcop_procedure_json(
    engine: *const VcopEngine,
    id: *const c_char,
    out_json: *mut *mut c_char,
) -> VcopStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        let id = str_arg(id, "id")?;
        let corpus = engine.corpus();
        let procedure = corpus
            .procedure(id)
            .ok_or_else(|| Fail(VcopStatus::NotFound, format!("no procedure `{id}`")))?;
        let excerpt = corpus
            .verbatim_excerpt(&procedure.source)
            .map_err(|e| Fail(VcopStatus::Internal, e.to_string()))?;
        let json = serde_json::json!({ "procedure": procedure, "excerpt": excerpt });
        json_out(out_json, json.to_string())
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vcop_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn vcop_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn vcop_status_name(status: VcopStatus) -> *const c_char {
    let name: &'static CStr = match status {
        VcopStatus::Ok => c"OK",
        VcopStatus::NullArgument => c"NULL_ARGUMENT",
        VcopStatus::InvalidUtf8 => c"INVALID_UTF8",
        VcopStatus::InvalidArgument => c"INVALID_ARGUMENT",
        VcopStatus::InputError => c"INPUT_ERROR",
        VcopStatus::ProviderError => c"PROVIDER_ERROR",
        VcopStatus::NotFound => c"NOT_FOUND",
        VcopStatus::ParseError => c"PARSE_ERROR",
        VcopStatus::Internal => c"INTERNAL",
        VcopStatus::Panic => c"PANIC",
    };
    name.as_ptr()
}
