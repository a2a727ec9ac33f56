use std::process::Command;

fn mcsched(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mcsched"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("y.csv");
    let o = mcsched(&[
        "bench",
        "yield",
        "--strategy",
        "single",
        "--cores",
        "1",
        "--iterations",
        "5",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("benchmark,strategy,cores,iterations,metric,mean,stddev\n"));
    assert!(text.contains("yield,single,1,5,makespan_ticks,"));
}

#[test]
fn check_passes_and_reports_count() {
    let o = mcsched(&[
        "check",
        "work-conservation",
        "--sequences",
        "20",
        "--cores",
        "2",
        "--seed",
        "4",
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("20 sequences, 0 violations"));
}

#[test]
fn trace_is_jsonl_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let o = mcsched(&[
            "trace",
            "flags",
            "--seed",
            "7",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["t", "core", "kind", "from", "to", "data"] {
            assert!(v.get(key).is_some(), "{line}");
        }
    }
}

#[test]
fn bad_arguments_fail() {
    assert!(
        !mcsched(&["bench", "flags", "--cores", "9", "--out", "/tmp/never.csv"])
            .status
            .success()
    );
    assert!(!mcsched(&["bench", "nope", "--out", "/tmp/never.csv"])
        .status
        .success());
}
