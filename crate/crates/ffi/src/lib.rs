//! C interface to `spsim`.
//!
//! Every fallible call returns an [`SpsimStatus`]; on failure the message is
//! available from [`spsim_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Strings handed
//! out by the library are released with [`spsim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spsim::choice_model::{estimate_mixl, estimate_mnl, predict_choices, ChoiceData, ChoiceModelFit, ModelSpec};
use spsim::metrics_lab;
use spsim::prompt_forge::{test_scenario, PromptForge};
use spsim::response_codec::{parse_response, ResponseStatus};
use spsim::survey_data::{load_dataset, parse_dataset, Dataset, ExperimentId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Data = 5,
    Model = 6,
    Panic = 99,
}

/// Codec outcome of a model reply.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsimResponseStatus {
    Valid = 0,
    InvalidFormat = 1,
    InvalidChoice = 2,
    InconsistentSchema = 3,
}

impl From<ResponseStatus> for SpsimResponseStatus {
    fn from(s: ResponseStatus) -> Self {
        match s {
            ResponseStatus::Valid => SpsimResponseStatus::Valid,
            ResponseStatus::InvalidFormat => SpsimResponseStatus::InvalidFormat,
            ResponseStatus::InvalidChoice => SpsimResponseStatus::InvalidChoice,
            ResponseStatus::InconsistentSchema => SpsimResponseStatus::InconsistentSchema,
        }
    }
}

/// A loaded, validated survey dataset.
pub struct SpsimDataset {
    inner: Dataset,
}

/// A fitted choice model.
pub struct SpsimFit {
    inner: ChoiceModelFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SpsimStatus, String);

type Res<T> = Result<T, Failure>;

fn fail<T>(status: SpsimStatus, msg: impl Into<String>) -> Res<T> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res<()>) -> SpsimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpsimStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SpsimStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return fail(SpsimStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(SpsimStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    p.as_ref().map_or_else(|| fail(SpsimStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut().map_or_else(|| fail(SpsimStatus::NullPointer, format!("{what} is null")), Ok)
}

fn experiment(code: u8) -> Res<ExperimentId> {
    match code {
        1 => Ok(ExperimentId::SP1),
        2 => Ok(ExperimentId::SP2),
        3 => Ok(ExperimentId::SP3),
        _ => fail(SpsimStatus::InvalidArgument, format!("experiment must be 1, 2 or 3, got {code}")),
    }
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn spsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn spsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn spsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads and validates a dataset from a JSON file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_dataset_load(path: *const c_char, out: *mut *mut SpsimDataset) -> SpsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = load_dataset(path).or_else(|e| {
            let status = if matches!(e, spsim::survey_data::SurveyError::Io { .. }) { SpsimStatus::Io } else { SpsimStatus::Data };
            fail(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(SpsimDataset { inner }));
        Ok(())
    })
}

/// Parses and validates a dataset from JSON text.
///
/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_dataset_from_json(json: *const c_char, out: *mut *mut SpsimDataset) -> SpsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = parse_dataset(str_arg(json, "json")?).or_else(|e| fail(SpsimStatus::Data, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpsimDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spsim_dataset_free(ds: *mut SpsimDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_dataset_respondent_count(ds: *const SpsimDataset, out: *mut usize) -> SpsimStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.inner.respondents.len();
        Ok(())
    })
}

/// Renders the prompt for one respondent. `experiment` is 1..3, `scenario`
/// 1..12 (scenario 10 is not available here). Both output strings must be
/// released with [`spsim_string_free`].
///
/// # Safety
/// `ds` must be a live handle, `respondent_id` a valid C string, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_render_prompt(
    ds: *const SpsimDataset,
    respondent_id: *const c_char,
    experiment_code: u8,
    scenario: u8,
    out_system: *mut *mut c_char,
    out_user: *mut *mut c_char,
) -> SpsimStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.inner;
        let rid = str_arg(respondent_id, "respondent_id")?;
        let (os, ou) = (out_arg(out_system, "out_system")?, out_arg(out_user, "out_user")?);
        let exp = experiment(experiment_code)?;
        let r = ds.respondent(rid).map_or_else(|| fail(SpsimStatus::InvalidArgument, format!("no respondent '{rid}'")), Ok)?;
        let design = ds.design(exp).map_or_else(|| fail(SpsimStatus::Data, format!("no design for {exp}")), Ok)?;
        let cfg = test_scenario(scenario)
            .filter(|c| c.is_llm_scenario)
            .map_or_else(|| fail(SpsimStatus::InvalidArgument, format!("scenario {scenario} is not 1..12")), Ok)?;
        let bundle = PromptForge::default()
            .assemble_prompt(r, design, &cfg)
            .or_else(|e| fail(SpsimStatus::InvalidArgument, e.to_string()))?;
        *os = c_string(bundle.system_message);
        *ou = c_string(bundle.user_message);
        Ok(())
    })
}

/// Parses a raw model reply. `out_choice` receives 1..3, or 0 when the
/// reply is not valid.
///
/// # Safety
/// `raw` must be a valid C string; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_parse_response(
    raw: *const c_char,
    require_explanation: bool,
    out_status: *mut SpsimResponseStatus,
    out_choice: *mut u8,
) -> SpsimStatus {
    guard(|| {
        let (st, ch) = (out_arg(out_status, "out_status")?, out_arg(out_choice, "out_choice")?);
        let raw = str_arg(raw, "raw")?;
        let resp = parse_response(raw, require_explanation);
        *st = resp.status.into();
        *ch = if resp.is_valid() { resp.choice.unwrap_or(0) } else { 0 };
        Ok(())
    })
}

/// Share of matching entries of two choice arrays of length `n`.
///
/// # Safety
/// `preds` and `truths` must point to `n` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_accuracy(preds: *const u8, truths: *const u8, n: usize, out: *mut f64) -> SpsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if preds.is_null() || truths.is_null() {
            return fail(SpsimStatus::NullPointer, "choice array is null");
        }
        let (p, t) = (std::slice::from_raw_parts(preds, n), std::slice::from_raw_parts(truths, n));
        *out = metrics_lab::accuracy(p, t).or_else(|e| fail(SpsimStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Fits the default model for `experiment` (1..3). With `mnl` set, random
/// coefficients are dropped.
///
/// # Safety
/// `ds` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_estimate(
    ds: *const SpsimDataset,
    experiment_code: u8,
    mnl: bool,
    n_draws: usize,
    seed: u64,
    out: *mut *mut SpsimFit,
) -> SpsimStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.inner;
        let out = out_arg(out, "out")?;
        let exp = experiment(experiment_code)?;
        let mut spec = if mnl { ModelSpec::mnl_for(exp) } else { ModelSpec::default_for(exp) };
        spec.n_draws = n_draws;
        spec.seed = seed;
        let model_err = |e: spsim::choice_model::ModelError| Failure(SpsimStatus::Model, e.to_string());
        let data = ChoiceData::from_dataset(ds, &spec).map_err(model_err)?;
        let inner = if mnl { estimate_mnl(&spec, &data) } else { estimate_mixl(&spec, &data) }.map_err(model_err)?;
        *out = Box::into_raw(Box::new(SpsimFit { inner }));
        Ok(())
    })
}

/// Loads a fit previously serialized with [`spsim_fit_to_json`].
///
/// # Safety
/// `json` must be a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_fit_from_json(json: *const c_char, out: *mut *mut SpsimFit) -> SpsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner: ChoiceModelFit =
            serde_json::from_str(str_arg(json, "json")?).or_else(|e| fail(SpsimStatus::Data, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpsimFit { inner }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spsim_fit_free(fit: *mut SpsimFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_fit_log_likelihood(fit: *const SpsimFit, out: *mut f64, out_converged: *mut bool) -> SpsimStatus {
    guard(|| {
        let fit = &ref_arg(fit, "fit")?.inner;
        *out_arg(out, "out")? = fit.log_likelihood;
        *out_arg(out_converged, "out_converged")? = fit.converged;
        Ok(())
    })
}

/// Serialized fit; release with [`spsim_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_fit_to_json(fit: *const SpsimFit, out: *mut *mut c_char) -> SpsimStatus {
    guard(|| {
        let fit = &ref_arg(fit, "fit")?.inner;
        let text = serde_json::to_string(fit).or_else(|e| fail(SpsimStatus::Model, e.to_string()))?;
        *out_arg(out, "out")? = c_string(text);
        Ok(())
    })
}

/// Scenario-6 predictions of `fit` on `ds` as a JSON document; release with
/// [`spsim_string_free`]. `out_accuracy` receives NaN when no respondent has
/// a recorded choice.
///
/// # Safety
/// Handles must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn spsim_predict(
    fit: *const SpsimFit,
    ds: *const SpsimDataset,
    out_json: *mut *mut c_char,
    out_accuracy: *mut f64,
) -> SpsimStatus {
    guard(|| {
        let fit = &ref_arg(fit, "fit")?.inner;
        let ds = &ref_arg(ds, "dataset")?.inner;
        let (oj, oa) = (out_arg(out_json, "out_json")?, out_arg(out_accuracy, "out_accuracy")?);
        let set = predict_choices(fit, ds).or_else(|e| fail(SpsimStatus::Model, e.to_string()))?;
        *oa = set.accuracy().unwrap_or(f64::NAN);
        *oj = c_string(serde_json::to_string(&set).or_else(|e| fail(SpsimStatus::Model, e.to_string()))?);
        Ok(())
    })
}
