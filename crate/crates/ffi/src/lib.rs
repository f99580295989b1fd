//! C ABI over the deterministic parts of `prefrules`: label unification,
//! the intervention gate, candidate shuffling, decision-block parsing and
//! the efficiency score.
//!
//! Every fallible function returns a `PrStatus`. On failure the message is
//! available from `pr_last_error` on the same thread until the next call.
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with `pr_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use prefrules::critic::{history_stats, intervention_gate};
use prefrules::forge::{
    assign_unified_label, unify_ambik, HierarchySet, RawAmbikScenario, RuleChain,
};
use prefrules::inference::deterministic_shuffle;
use prefrules::metrics::efficiency;
use prefrules::prompts::parse_decision_blocks;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    Undefined = 5,
    Panic = 6,
}

/// Request-type hierarchies used by `pr_assign_unified_label`.
pub struct PrHierarchies(HierarchySet);

/// Ranked unification rules used by `pr_unify_ambik`.
pub struct PrRuleChain(RuleChain);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PrStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside prefrules");
            PrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(PrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(PrStatus::NullArgument, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(PrStatus::NullArgument, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn owned(s: String) -> FfiResult<*mut c_char> {
    CString::new(s).map(CString::into_raw).map_err(|_| {
        Failure(
            PrStatus::InvalidArgument,
            "result contains a NUL byte".into(),
        )
    })
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(PrStatus::InvalidArgument, e.to_string())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Bundled hierarchies. Never NULL.
#[no_mangle]
pub extern "C" fn pr_hierarchies_builtin() -> *mut PrHierarchies {
    Box::into_raw(Box::new(PrHierarchies(HierarchySet::builtin())))
}

/// Parses a hierarchy table from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_hierarchies_from_json(
    json: *const c_char,
    out: *mut *mut PrHierarchies,
) -> PrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = HierarchySet::from_json(text(json, "json")?, "<ffi>").map_err(invalid)?;
        *out = Box::into_raw(Box::new(PrHierarchies(set)));
        Ok(())
    })
}

/// # Safety
/// `h` must come from this library and not have been freed; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn pr_hierarchies_free(h: *mut PrHierarchies) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Relabels one scenario. `out_label` receives a new string;
/// `out_fallback` is set when the original label was kept.
///
/// # Safety
/// Pointers must be valid; `options` must hold `n_options` strings.
#[no_mangle]
pub unsafe extern "C" fn pr_assign_unified_label(
    h: *const PrHierarchies,
    task_text: *const c_char,
    options: *const *const c_char,
    n_options: usize,
    original_label: *const c_char,
    out_label: *mut *mut c_char,
    out_fallback: *mut bool,
) -> PrStatus {
    guard(|| {
        let h = h
            .as_ref()
            .ok_or_else(|| Failure(PrStatus::NullArgument, "hierarchies is null".into()))?;
        let task = text(task_text, "task_text")?;
        let orig = text(original_label, "original_label")?;
        let opts = slice(options, n_options, "options")?
            .iter()
            .enumerate()
            .map(|(i, &p)| text(p, &format!("options[{i}]")).map(str::to_string))
            .collect::<FfiResult<Vec<_>>>()?;
        let out_label = out_ptr(out_label, "out_label")?;
        let out_fallback = out_ptr(out_fallback, "out_fallback")?;
        let a = assign_unified_label(task, &opts, orig, &h.0);
        *out_label = owned(a.label)?;
        *out_fallback = a.fallback;
        Ok(())
    })
}

/// Bundled unification rule chain. Never NULL.
#[no_mangle]
pub extern "C" fn pr_rule_chain_builtin() -> *mut PrRuleChain {
    Box::into_raw(Box::new(PrRuleChain(RuleChain::builtin())))
}

/// Parses a rule chain from JSON; duplicate ranks are rejected.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_rule_chain_from_json(
    json: *const c_char,
    out: *mut *mut PrRuleChain,
) -> PrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let chain = RuleChain::from_json(text(json, "json")?, "<ffi>").map_err(invalid)?;
        *out = Box::into_raw(Box::new(PrRuleChain(chain)));
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library and not have been freed; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn pr_rule_chain_free(c: *mut PrRuleChain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Unifies one raw scenario given as JSON
/// (`{"task_text", "variants", "actions", "original_label"}`). Writes
/// `{"label", "rule", "fallback"}` to `out_json`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_unify_ambik(
    chain: *const PrRuleChain,
    scenario_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PrStatus {
    guard(|| {
        let chain = chain
            .as_ref()
            .ok_or_else(|| Failure(PrStatus::NullArgument, "chain is null".into()))?;
        let raw: RawAmbikScenario = serde_json::from_str(text(scenario_json, "scenario_json")?)
            .map_err(|e| Failure(PrStatus::ParseError, e.to_string()))?;
        let out_json = out_ptr(out_json, "out_json")?;
        let outcome = unify_ambik(&raw, &chain.0);
        *out_json = owned(serde_json::to_string(&outcome).map_err(invalid)?)?;
        Ok(())
    })
}

/// Mean and population standard deviation of `history`.
///
/// # Safety
/// `history` must hold `n` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_history_stats(
    history: *const f64,
    n: usize,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> PrStatus {
    guard(|| {
        let h = slice(history, n, "history")?;
        let (mu, sigma) =
            history_stats(h).map_err(|e| Failure(PrStatus::Undefined, e.to_string()))?;
        *out_ptr(out_mean, "out_mean")? = mu;
        *out_ptr(out_std, "out_std")? = sigma;
        Ok(())
    })
}

/// Intervention gate. `history` already includes `acc` as its last entry.
///
/// # Safety
/// `history` must hold `n` doubles; `out_triggered` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_intervention_gate(
    history: *const f64,
    n: usize,
    acc: f64,
    alpha: f64,
    out_triggered: *mut bool,
) -> PrStatus {
    guard(|| {
        let h = slice(history, n, "history")?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid(format!(
                "alpha must be a non-negative number, got {alpha}"
            )));
        }
        *out_ptr(out_triggered, "out_triggered")? = intervention_gate(h, acc, alpha, n).triggered;
        Ok(())
    })
}

/// Writes the display permutation of `1..=n` for a scenario and model:
/// `out[p]` is the original index shown at position `p + 1`.
///
/// # Safety
/// `out` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn pr_deterministic_shuffle(
    scenario_id: *const c_char,
    model_id: *const c_char,
    n: usize,
    out: *mut usize,
) -> PrStatus {
    guard(|| {
        let perm = deterministic_shuffle(
            text(scenario_id, "scenario_id")?,
            text(model_id, "model_id")?,
            n,
        );
        if n > 0 {
            if out.is_null() {
                return Err(Failure(PrStatus::NullArgument, "out is null".into()));
            }
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&perm);
        }
        Ok(())
    })
}

/// Strict parse of `expected_count` decision blocks; writes a JSON array of
/// `{"scenario_ordinal", "action", "reasoning", "confidence"}`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pr_parse_decision_blocks(
    reply: *const c_char,
    expected_count: usize,
    out_json: *mut *mut c_char,
) -> PrStatus {
    guard(|| {
        let out_json = out_ptr(out_json, "out_json")?;
        let blocks = parse_decision_blocks(text(reply, "reply")?, expected_count).map_err(|e| {
            let status = if e.is_parse() {
                PrStatus::ParseError
            } else {
                PrStatus::InvalidArgument
            };
            Failure(status, e.to_string())
        })?;
        *out_json = owned(serde_json::to_string(&blocks).map_err(invalid)?)?;
        Ok(())
    })
}

/// Efficiency score `accuracy * decisions / llm_calls`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_efficiency(
    accuracy: f64,
    decisions: usize,
    llm_calls: usize,
    out: *mut f64,
) -> PrStatus {
    guard(|| {
        let e = efficiency(accuracy, decisions, llm_calls)
            .map_err(|e| Failure(PrStatus::Undefined, e.to_string()))?;
        *out_ptr(out, "out")? = e;
        Ok(())
    })
}
