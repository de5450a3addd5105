use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ssm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn first_question(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("scene/questions.jsonl")).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

#[test]
fn synth_build_ask_inspect_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(ssm(&["synth", "--out", "scene", "--rooms", "2", "--objects", "2", "--seed", "3"], d));
    ok(ssm(&["build", "scene", "--out", "mem", "--scripted", "scene/scripted.json"], d));

    let canonical = ok(ssm(&["inspect", "mem"], d));
    assert_eq!(canonical.trim_end(), std::fs::read_to_string(d.join("mem/ssm.json")).unwrap());
    let frames = ok(ssm(&["inspect", "mem", "--frames", "--n-img", "9"], d));
    assert_eq!(frames.lines().count(), 5, "{frames}");

    let q = first_question(d);
    let question = q["question"].as_str().unwrap();
    let out = ok(ssm(
        &["ask", "mem", question, "--scripted", "scene/scripted.json", "--m", "3", "--transcript", "t.jsonl", "--commit"],
        d,
    ));
    let a: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(a["answer"], q["answer"]);
    assert_eq!(a["status"], "compliant");
    assert!(a["calls_used"].as_u64().unwrap() <= 3);
    let transcript = std::fs::read_to_string(d.join("t.jsonl")).unwrap();
    assert!(transcript.lines().last().unwrap().contains("\"event\":\"final\""));
    // --commit kept the note the answer cites.
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(d.join("mem/ssm.json")).unwrap()).unwrap();
    assert!(saved["scratchpad"].as_array().unwrap().iter().any(|e| !e["notes"].as_array().unwrap().is_empty()));

    let report: Value = serde_json::from_str(&ok(ssm(
        &["eval", "scene", "--scripted", "scene/scripted.json", "--m", "5", "--out", "evalmem"],
        d,
    )))
    .unwrap();
    assert_eq!(report["graph"]["track_recall"], 1.0);
    assert_eq!(report["overall"]["accuracy"], 1.0);
    assert!(d.join("evalmem/metrics.json").is_file());

    // m = 0 forces an immediate answer with no API calls.
    let zero: Value = serde_json::from_str(&ok(ssm(
        &["eval", "scene", "--scripted", "scene/scripted.json", "--m", "0", "--api", "node"],
        d,
    )))
    .unwrap();
    assert_eq!(zero["calls"]["mean"], 0.0);
}

#[test]
fn configuration_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(ssm(&["synth", "--out", "scene", "--rooms", "1", "--objects", "2"], d));

    let missing_backend = ssm(&["build", "scene", "--out", "mem"], d);
    assert!(!missing_backend.status.success());
    assert!(String::from_utf8_lossy(&missing_backend.stderr).contains("--backend-url"));

    std::fs::write(d.join("bad.cfg"), "tau_v = 0.7\nnot_a_key = 3\n").unwrap();
    let bad = ssm(&["build", "scene", "--out", "mem", "--scripted", "scene/scripted.json", "--config", "bad.cfg"], d);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));

    std::fs::write(d.join("good.cfg"), "# smaller initial frame memory\nn_img = 2\n").unwrap();
    ok(ssm(&["build", "scene", "--out", "mem", "--scripted", "scene/scripted.json", "--config", "good.cfg", "--k", "2"], d));
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(d.join("mem/ssm.json")).unwrap()).unwrap();
    assert_eq!(saved["episode"]["frame_memory"]["initial_count"], 2);
    assert_eq!(saved["episode"]["k"], 2);

    assert!(!ssm(&["ask", "mem", "q", "--api", "telepathy", "--scripted", "scene/scripted.json"], d).status.success());
    assert!(!ssm(&["synth", "--out", "x", "--objects", "40"], d).status.success());
}
