use std::ffi::{c_char, CStr, CString};
use std::ptr;

use remac_ffi::*;

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { remac_string_free(s) };
    text
}

fn last_error() -> String {
    let p = remac_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn new_episode(options: &str) -> Result<*mut RemacEpisode, (RemacStatus, String)> {
    let json = CString::new(options).unwrap();
    let mut h = ptr::null_mut();
    match unsafe { remac_episode_new(json.as_ptr(), &mut h) } {
        RemacStatus::Ok => Ok(h),
        s => Err((s, last_error())),
    }
}

#[test]
fn episode_lifecycle() {
    let h = new_episode(r#"{"task": "OpenMicrowavePnP", "setting": "REMAC", "seed": 4, "success_prob": 1.0}"#).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { remac_episode_metrics_json(h, &mut out) }, RemacStatus::NotRun);
    assert_eq!(unsafe { remac_episode_run(h) }, RemacStatus::Ok);
    assert!(remac_last_error().is_null());

    let mut status = RemacEpisodeStatus::BackendAbort;
    assert_eq!(unsafe { remac_episode_status(h, &mut status) }, RemacStatus::Ok);
    assert_eq!(status, RemacEpisodeStatus::Success);

    assert_eq!(unsafe { remac_episode_metrics_json(h, &mut out) }, RemacStatus::Ok);
    let metrics: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(metrics["initial_plan_length"], 4);

    assert_eq!(unsafe { remac_episode_trace_jsonl(h, &mut out) }, RemacStatus::Ok);
    let trace = take(out);
    assert!(trace.lines().count() > 10);
    assert!(trace.lines().last().unwrap().contains("\"episode_end\""));

    assert_eq!(unsafe { remac_episode_reflections_json(h, &mut out) }, RemacStatus::Ok);
    let db: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(db["entries"].as_array().unwrap().len(), 2);
    unsafe { remac_episode_free(h) };
}

#[test]
fn blind_setting_reports_blind_failure() {
    let h = new_episode(r#"{"task": "HeatOnStove", "setting": "BASE"}"#).unwrap();
    assert_eq!(unsafe { remac_episode_run(h) }, RemacStatus::Ok);
    let mut status = RemacEpisodeStatus::Success;
    assert_eq!(unsafe { remac_episode_status(h, &mut status) }, RemacStatus::Ok);
    assert_eq!(status, RemacEpisodeStatus::BlindFailure);
    unsafe { remac_episode_free(h) };
}

#[test]
fn bad_arguments_are_reported() {
    let (s, msg) = new_episode(r#"{"setting": "CC"}"#).unwrap_err();
    assert_eq!(s, RemacStatus::InvalidArgument);
    assert!(msg.contains("task"), "{msg}");

    let (s, msg) = new_episode(r#"{"task": "HeatOnStove", "colour": 1}"#).unwrap_err();
    assert_eq!(s, RemacStatus::InvalidArgument);
    assert!(msg.contains("colour"), "{msg}");

    let (s, _) = new_episode(r#"{"task": "HeatOnStove", "setting": "REMAC", "robot_count": 1}"#).unwrap_err();
    assert_eq!(s, RemacStatus::InvalidArgument);

    let (s, _) = new_episode("not json").unwrap_err();
    assert_eq!(s, RemacStatus::InvalidArgument);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { remac_episode_new(ptr::null(), &mut h) }, RemacStatus::NullPointer);
    assert_eq!(unsafe { remac_episode_run(ptr::null_mut()) }, RemacStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { remac_episode_new(bad.as_ptr().cast(), &mut h) }, RemacStatus::InvalidUtf8);
    unsafe {
        remac_episode_free(ptr::null_mut());
        remac_string_free(ptr::null_mut());
    }
}

#[test]
fn canonical_plans_and_bench() {
    let task = CString::new("DefrostInBowl").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { remac_canonical_plan_json(task.as_ptr(), 0, 2, &mut out) }, RemacStatus::Ok);
    let plan: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert!(!plan["subtasks"].as_array().unwrap().is_empty());

    let config = CString::new(r#"{"tasks": ["OpenCabinetPnP"], "settings": ["RE"], "trials": 2}"#).unwrap();
    assert_eq!(unsafe { remac_bench_run(config.as_ptr(), &mut out) }, RemacStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["aggregates"][0]["plan_length"], 6.0);
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(remac_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// The generated header must stand on its own as C and as C++.
#[test]
fn header_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/remac.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\n\
             int main(void) {{\n\
               RemacEpisode *h = 0;\n\
               RemacStatus s = remac_episode_new(\"{{}}\", &h);\n\
               return s == REMAC_STATUS_OK ? 0 : (int)REMAC_EPISODE_STATUS_PLAN_FAILURE;\n\
             }}\n"
        ),
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = match std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&src)
            .status()
        {
            Ok(s) => s,
            Err(_) => {
                eprintln!("{compiler} not available; skipping");
                continue;
            }
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
