use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use prefrules_ffi::*;
use serde_json::Value;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> Option<String> {
    let p = pr_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    pr_string_free(p);
    s
}

#[test]
fn unified_label_uses_builtin_hierarchies() {
    let h = pr_hierarchies_builtin();
    let task = c("bring me a cola");
    let opts = [c("Pepsi"), c("Coke")];
    let ptrs: Vec<*const c_char> = opts.iter().map(|o| o.as_ptr()).collect();
    let orig = c("Pepsi");
    let mut label = ptr::null_mut();
    let mut fallback = true;
    let st = unsafe {
        pr_assign_unified_label(
            h,
            task.as_ptr(),
            ptrs.as_ptr(),
            2,
            orig.as_ptr(),
            &mut label,
            &mut fallback,
        )
    };
    assert_eq!(st, PrStatus::Ok);
    assert_eq!(unsafe { take(label) }, "Coke");
    assert!(!fallback);
    assert_eq!(last_error(), None);
    unsafe { pr_hierarchies_free(h) };
}

#[test]
fn null_arguments_are_reported() {
    let mut label = ptr::null_mut();
    let mut fallback = false;
    let st = unsafe {
        pr_assign_unified_label(
            ptr::null(),
            ptr::null(),
            ptr::null(),
            0,
            ptr::null(),
            &mut label,
            &mut fallback,
        )
    };
    assert_eq!(st, PrStatus::NullArgument);
    assert!(last_error().unwrap().contains("hierarchies"));

    let st = unsafe { pr_efficiency(0.5, 10, 2, ptr::null_mut()) };
    assert_eq!(st, PrStatus::NullArgument);

    // A later success clears the message.
    let mut e = 0.0;
    assert_eq!(unsafe { pr_efficiency(0.5, 10, 2, &mut e) }, PrStatus::Ok);
    assert_eq!(e, 2.5);
    assert_eq!(last_error(), None);

    // Freeing NULL is a no-op.
    unsafe {
        pr_string_free(ptr::null_mut());
        pr_hierarchies_free(ptr::null_mut());
        pr_rule_chain_free(ptr::null_mut());
    }
}

#[test]
fn bad_utf8_and_bad_json_are_distinguished() {
    let bad = [0xffu8, 0xfe, 0];
    let mut out = ptr::null_mut();
    let st = unsafe { pr_hierarchies_from_json(bad.as_ptr().cast(), &mut out) };
    assert_eq!(st, PrStatus::InvalidUtf8);
    let st = unsafe { pr_hierarchies_from_json(c("{not json").as_ptr(), &mut out) };
    assert_eq!(st, PrStatus::InvalidArgument);
    assert!(out.is_null());

    let chain = pr_rule_chain_builtin();
    let mut json = ptr::null_mut();
    let st = unsafe { pr_unify_ambik(chain, c("[]").as_ptr(), &mut json) };
    assert_eq!(st, PrStatus::ParseError);
    assert!(last_error().is_some());
    unsafe { pr_rule_chain_free(chain) };
}

#[test]
fn unify_returns_label_and_rule() {
    let chain = pr_rule_chain_builtin();
    let scenario = c(
        r#"{"task_text": "Heat up the pasta for dinner", "actions": ["spaghetti", "lasagna", "penne"], "original_label": "penne"}"#,
    );
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { pr_unify_ambik(chain, scenario.as_ptr(), &mut json) },
        PrStatus::Ok
    );
    let v: Value = serde_json::from_str(&unsafe { take(json) }).unwrap();
    assert_eq!(v["label"], "lasagna");
    assert_eq!(v["rule"], "pasta_type");
    assert_eq!(v["fallback"], false);
    unsafe { pr_rule_chain_free(chain) };
}

#[test]
fn gate_and_stats() {
    let h = [1.0, 1.0, 1.0, 0.2];
    let mut fired = false;
    assert_eq!(
        unsafe { pr_intervention_gate(h.as_ptr(), 4, 0.2, 1.5, &mut fired) },
        PrStatus::Ok
    );
    assert!(fired);
    assert_eq!(
        unsafe { pr_intervention_gate(h.as_ptr(), 1, 1.0, 1.5, &mut fired) },
        PrStatus::Ok
    );
    assert!(fired, "cold start always fires");
    let flat = [0.7, 0.7, 0.7];
    assert_eq!(
        unsafe { pr_intervention_gate(flat.as_ptr(), 3, 0.7, 1.5, &mut fired) },
        PrStatus::Ok
    );
    assert!(!fired);
    assert_eq!(
        unsafe { pr_intervention_gate(h.as_ptr(), 4, 0.2, -1.0, &mut fired) },
        PrStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { pr_intervention_gate(h.as_ptr(), 4, 0.2, f64::NAN, &mut fired) },
        PrStatus::InvalidArgument
    );

    let (mut mu, mut sd) = (0.0, 0.0);
    assert_eq!(
        unsafe { pr_history_stats(h.as_ptr(), 4, &mut mu, &mut sd) },
        PrStatus::Ok
    );
    assert!((mu - 0.8).abs() < 1e-12);
    assert!((sd - 0.12f64.sqrt()).abs() < 1e-12);
    assert_eq!(
        unsafe { pr_history_stats(ptr::null(), 0, &mut mu, &mut sd) },
        PrStatus::Undefined
    );
    assert!(last_error().is_some());
}

#[test]
fn shuffle_matches_the_library() {
    let mut out = [0usize; 7];
    let st = unsafe {
        pr_deterministic_shuffle(c("k12").as_ptr(), c("m3").as_ptr(), 7, out.as_mut_ptr())
    };
    assert_eq!(st, PrStatus::Ok);
    assert_eq!(
        out.to_vec(),
        prefrules::inference::deterministic_shuffle("k12", "m3", 7)
    );
    let mut sorted = out;
    sorted.sort();
    assert_eq!(sorted, [1, 2, 3, 4, 5, 6, 7]);
    let st = unsafe {
        pr_deterministic_shuffle(c("k12").as_ptr(), c("m3").as_ptr(), 3, ptr::null_mut())
    };
    assert_eq!(st, PrStatus::NullArgument);
    let st = unsafe {
        pr_deterministic_shuffle(c("k12").as_ptr(), c("m3").as_ptr(), 0, ptr::null_mut())
    };
    assert_eq!(st, PrStatus::Ok);
}

#[test]
fn decision_blocks_parse_or_fail() {
    let reply = c("SCENARIO 1:\nAction: 2\nReasoning: cold milk\n\nSCENARIO 2:\nAction: 1\nReasoning: cast iron\nConfidence: 4\n");
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { pr_parse_decision_blocks(reply.as_ptr(), 2, &mut json) },
        PrStatus::Ok
    );
    let v: Value = serde_json::from_str(&unsafe { take(json) }).unwrap();
    assert_eq!(v[0]["action"], 2);
    assert_eq!(v[1]["confidence"], 4);

    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { pr_parse_decision_blocks(reply.as_ptr(), 3, &mut json) },
        PrStatus::ParseError
    );
    assert!(json.is_null());
    assert!(last_error().is_some());
}

#[test]
fn efficiency_without_calls_is_undefined() {
    let mut e = -1.0;
    assert_eq!(
        unsafe { pr_efficiency(0.9, 10, 0, &mut e) },
        PrStatus::Undefined
    );
    assert_eq!(e, -1.0);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/prefrules.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert_eq!(exports.len(), 15);
    for f in exports {
        assert!(
            h.contains(&format!(" {f}(")) || h.contains(&format!("*{f}(")),
            "{f} missing from header"
        );
    }
    assert!(h.contains("PR_STATUS_UNDEFINED = 5"));
}

/// Compiles and runs a small C program against the static library, when a C
/// compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // The test binary lives in target/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libprefrules_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new(&cc)
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("Coke 0\n"), "{stdout}");
}

fn which_cc() -> Result<String, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(str::to_string)
        .ok_or(())
}
