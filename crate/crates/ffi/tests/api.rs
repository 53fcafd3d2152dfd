use std::ffi::{c_char, CStr, CString};
use std::ptr;

use agentsim_ffi::*;

const TRACE: &str = r#"{"program_id":"a","arrival_time_s":0.0,"turns":[{"new_prompt_tokens":200,"decode_tokens":8,"tool_name":"ls","tool_duration_s":0.5},{"new_prompt_tokens":40,"decode_tokens":4}]}
{"program_id":"b","arrival_time_s":0.2,"turns":[{"new_prompt_tokens":100,"decode_tokens":5}]}
"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = agentsim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    agentsim_string_free(p);
    s
}

fn trace() -> *mut AgentsimTrace {
    let mut t = ptr::null_mut();
    let text = c(TRACE);
    assert_eq!(unsafe { agentsim_trace_from_jsonl(text.as_ptr(), &mut t) }, AgentsimStatus::Ok);
    t
}

#[test]
fn run_round_trip() {
    unsafe {
        let t = trace();
        assert_eq!(agentsim_trace_len(t), 2);
        let mut cfg = ptr::null_mut();
        assert_eq!(agentsim_config_default(c("continuum").as_ptr(), &mut cfg), AgentsimStatus::Ok);
        let mut report = ptr::null_mut();
        assert_eq!(agentsim_run(cfg, t, 7, &mut report), AgentsimStatus::Ok);
        assert!(agentsim_report_complete(report));
        assert!(agentsim_report_jct_mean(report) > 0.0);
        assert!(agentsim_report_throughput(report) > 0.0);
        assert!(agentsim_report_bubble_total(report) >= 0.0);

        let mut json = ptr::null_mut();
        assert_eq!(agentsim_report_to_json(report, &mut json), AgentsimStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert_eq!(v["policy"], "continuum");
        assert_eq!(v["seed"], 7);

        agentsim_report_free(report);
        agentsim_config_free(cfg);
        agentsim_trace_free(t);
    }
}

#[test]
fn policies_differ_on_the_same_trace() {
    unsafe {
        let t = trace();
        let mut cfg = ptr::null_mut();
        agentsim_config_default(c("fcfs").as_ptr(), &mut cfg);
        let mut jct = Vec::new();
        for policy in ["fcfs", "continuum"] {
            assert_eq!(agentsim_config_set_policy(cfg, c(policy).as_ptr()), AgentsimStatus::Ok);
            let mut r = ptr::null_mut();
            assert_eq!(agentsim_run(cfg, t, 0, &mut r), AgentsimStatus::Ok);
            jct.push(agentsim_report_jct_mean(r));
            agentsim_report_free(r);
        }
        // pinning across the 0.5 s tool call avoids re-prefilling program a
        assert!(jct[1] < jct[0], "{jct:?}");
        agentsim_config_free(cfg);
        agentsim_trace_free(t);
    }
}

#[test]
fn config_from_toml() {
    let toml = c("policies = [\"plas\"]\n[trace]\npath = \"unused.jsonl\"\n[memory]\ngpu_capacity_blocks = 512\n");
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(agentsim_config_from_toml(toml.as_ptr(), &mut cfg), AgentsimStatus::Ok);
        let t = trace();
        let mut r = ptr::null_mut();
        assert_eq!(agentsim_run(cfg, t, 0, &mut r), AgentsimStatus::Ok);
        let mut json = ptr::null_mut();
        agentsim_report_to_json(r, &mut json);
        let v: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert_eq!(v["config"]["memory"]["gpu_capacity_blocks"], 512);
        agentsim_report_free(r);
        agentsim_trace_free(t);
        agentsim_config_free(cfg);

        let bad = c("policies = [\"plas\"]\n[trace]\npath = \"x\"\n[estimator]\ndelta = 2.0\n");
        assert_eq!(agentsim_config_from_toml(bad.as_ptr(), &mut cfg), AgentsimStatus::Config);
        assert!(last_error().contains("delta"), "{}", last_error());
    }
}

#[test]
fn errors_are_reported() {
    let mut t = ptr::null_mut();
    let mut cfg = ptr::null_mut();
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(agentsim_trace_load(ptr::null(), &mut t), AgentsimStatus::NullPointer);
        assert_eq!(agentsim_trace_load(c("/nonexistent/t.jsonl").as_ptr(), &mut t), AgentsimStatus::Io);
        assert!(last_error().contains("/nonexistent/t.jsonl"));
        assert_eq!(agentsim_trace_from_jsonl(c("{not json").as_ptr(), &mut t), AgentsimStatus::Parse);
        assert!(last_error().contains(":1:"), "{}", last_error());
        assert!(t.is_null());

        assert_eq!(agentsim_config_default(c("lru").as_ptr(), &mut cfg), AgentsimStatus::InvalidArgument);
        assert!(last_error().contains("continuum"));
        let invalid = [0xffu8, 0];
        assert_eq!(
            agentsim_config_default(invalid.as_ptr().cast(), &mut cfg),
            AgentsimStatus::InvalidUtf8
        );
        assert_eq!(agentsim_run(ptr::null(), ptr::null(), 0, &mut r), AgentsimStatus::NullPointer);
        assert!(agentsim_report_jct_mean(ptr::null()).is_nan());
        assert!(!agentsim_report_complete(ptr::null()));
        assert_eq!(agentsim_trace_len(ptr::null()), 0);

        // the GPU cannot hold program a
        let tiny = c("policies = [\"fcfs\"]\n[trace]\npath = \"x\"\n[memory]\ngpu_capacity_blocks = 4\n");
        agentsim_config_from_toml(tiny.as_ptr(), &mut cfg);
        let tr = trace();
        assert_eq!(agentsim_run(cfg, tr, 0, &mut r), AgentsimStatus::Config);
        assert!(last_error().contains("KV blocks"), "{}", last_error());
        agentsim_trace_free(tr);
        agentsim_config_free(cfg);

        // freeing null is a no-op
        agentsim_trace_free(ptr::null_mut());
        agentsim_config_free(ptr::null_mut());
        agentsim_report_free(ptr::null_mut());
        agentsim_string_free(ptr::null_mut());
    }
}

#[test]
fn bernstein_bound_matches_formula() {
    let xs = [1.0, 2.0, 4.0, 7.0];
    let mut b = 0.0;
    let status = unsafe { agentsim_bernstein_bound(xs.as_ptr(), xs.len(), 0.05, 60.0, &mut b) };
    assert_eq!(status, AgentsimStatus::Ok);
    let n = 4.0;
    let mean = 3.5;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let l = (3.0f64 / 0.05).ln();
    let expected = mean + (2.0 * var * l / n).sqrt() + 3.0 * 60.0 * l / n;
    assert!((b - expected).abs() <= 1e-12 * expected, "{b} vs {expected}");

    unsafe {
        assert_eq!(agentsim_bernstein_bound(xs.as_ptr(), 0, 0.05, 60.0, &mut b), AgentsimStatus::InvalidArgument);
        assert_eq!(agentsim_bernstein_bound(xs.as_ptr(), 4, 1.5, 60.0, &mut b), AgentsimStatus::InvalidArgument);
        assert_eq!(agentsim_bernstein_bound(ptr::null(), 4, 0.05, 60.0, &mut b), AgentsimStatus::NullPointer);
    }
}

#[test]
fn tool_names() {
    let cases = [
        (r#"[{"type":"function_call","name":"search","arguments":{}}]"#, false, Some("search")),
        ("cd repo && pytest -x", true, Some("cd")),
        ("Here is my answer.", false, None),
    ];
    for (text, bash, want) in cases {
        let mut out = ptr::null_mut();
        let status = unsafe { agentsim_parse_tool_name(c(text).as_ptr(), bash, &mut out) };
        match want {
            Some(name) => {
                assert_eq!(status, AgentsimStatus::Ok, "{text}");
                assert_eq!(unsafe { take_string(out) }, name);
            }
            None => assert_eq!(status, AgentsimStatus::NotFound, "{text}"),
        }
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(agentsim_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
