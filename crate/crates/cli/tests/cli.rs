use std::path::Path;
use std::process::{Command, Output};

fn lazysub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lazysub"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn records(o: &Output) -> Vec<serde_json::Value> {
    stdout(o)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

#[test]
fn list_names_every_builtin() {
    let o = lazysub(&["list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["indirect_branch", "nested_wrong_lock", "false_share", "nt_wait", "inflation"] {
        assert!(out.contains(name), "{name} missing from\n{out}");
    }
}

#[test]
fn unsafe_verdict_writes_a_replayable_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lazysub(&["litmus", "--name", "indirect_branch", "--expect", "unsafe", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &records(&o)[0];
    assert_eq!(r["verdict"], "UNSAFE");
    assert_eq!(r["complete"], true);
    assert!(dir.path().join("report.jsonl").exists());

    let trace = dir.path().join("indirect_branch.lazy_unsafe.trace");
    assert!(trace.exists());
    let o = lazysub(&["replay", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let replayed = &records(&o)[0];
    assert_eq!(replayed["window"], r["bad_state"]);
}

#[test]
fn unexpected_verdict_exits_one() {
    let o = lazysub(&["litmus", "--name", "indirect_branch", "--variant", "lazy_ext", "--expect", "unsafe"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(records(&o)[0]["verdict"], "safe");
}

#[test]
fn set_overrides_reach_the_engine() {
    let args = ["litmus", "--name", "nt_store_hazard", "--variant", "lazy_ext", "--set"];
    let off = lazysub(&[&args[..], &["all_stores_transactional=false", "--expect", "unsafe"]].concat());
    let on = lazysub(&[&args[..], &["all_stores_transactional=true", "--expect", "safe"]].concat());
    assert_eq!(off.status.code(), Some(0));
    assert_eq!(on.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(lazysub(&["litmus", "--name", "no_such_scenario"]).status.code(), Some(2));
    assert_eq!(lazysub(&["litmus", "--name", "wrong_lock", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(lazysub(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn replay_rejects_a_tampered_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    lazysub(&["litmus", "--name", "wrong_lock", "--out", out]);
    let trace = dir.path().join("wrong_lock.lazy_unsafe.trace");
    let text = std::fs::read_to_string(&trace).unwrap();
    let cut: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    std::fs::write(&trace, cut.join("\n") + "\n0\n").unwrap();
    assert_eq!(lazysub(&["replay", trace.to_str().unwrap()]).status.code(), Some(1));
}

fn write_bundle(dir: &Path) {
    std::fs::write(
        dir.join("scenario.cfg"),
        "name = bundled_race\ndescription = lost update without a lock\n\
         lock.L = simple_zero 640\nshared = shared.asm\n\
         thread.0 = body.asm elide\nthread.1 = body.asm lock\n",
    )
    .unwrap();
    std::fs::write(dir.join("shared.asm"), ".org 16\ncount: .word 0\n.observe count\n").unwrap();
    std::fs::write(
        dir.join("body.asm"),
        "@main:\n    ACQUIRE L\n    LOAD r4, r0, count\n    ADDI r4, r4, 1\n    STORE r4, r0, count\n    RELEASE L\n    HALT\n",
    )
    .unwrap();
}

#[test]
fn bundles_run_like_builtins() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path());
    let b = dir.path().to_str().unwrap();
    let o = lazysub(&["litmus", "--bundle", b, "--variant", "eager", "--expect", "safe"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(records(&o)[0]["scenario"], "bundled_race");
    assert!(stdout(&lazysub(&["list", "--bundle", b])).contains("bundled_race"));
}

#[test]
fn bench_reports_both_variants() {
    let o = lazysub(&["bench", "--seeds", "3", "--iterations", "10", "--threads", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let variants: Vec<String> = records(&o)
        .iter()
        .map(|r| r["variant"].as_str().unwrap_or_default().to_string())
        .collect();
    assert!(variants.contains(&"eager".to_string()), "{variants:?}");
    assert!(variants.contains(&"lazy_ext".to_string()), "{variants:?}");
}
