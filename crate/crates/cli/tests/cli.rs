use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvpformer")).args(args).output().expect("spawn mvpformer")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn metric(csv: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(csv).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{key},"))).unwrap_or_else(|| panic!("{key} missing"));
    line.split_once(',').unwrap().1.parse().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn quick_verify_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--quick", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(report.starts_with("check,status,seconds,detail\n"));
    assert!(!report.contains(",FAIL,"));
    assert!(dir.path().join("manifest.txt").exists());
}

#[test]
fn corrupted_shift_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--quick", "--corrupt", "shift_time", "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL shift_time")), "{stdout}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("shift_time"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(code(&run(&["pretrain", "--out", out])), 2);
    assert_eq!(code(&run(&["pretrain", "--data", "/does/not/exist", "--out", out])), 2);
    assert_eq!(code(&run(&["finetune", "--data", "/does/not/exist", "--out", out])), 2);
    assert_eq!(code(&run(&["eval", "--pred", "/nope.csv", "--truth", "/nope.csv", "--out", out])), 2);
    assert_eq!(code(&run(&["eval", "--out", out])), 2);
    assert_eq!(code(&run(&["verify", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["verify", "--profile", "huge", "--out", out])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn eval_of_identical_event_files_is_perfect_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("events.csv");
    fs::write(&ev, "30,70\n200,260\n").unwrap();
    let out = dir.path().join("eval");
    let o = run(&["eval", "--pred", p(&ev), "--truth", p(&ev), "--duration-s", "600", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metric(&out.join("eval.csv"), "kappa"), 1.0);
    assert_eq!(metric(&out.join("eval.csv"), "kappa_estimate"), 1.0);
    assert_eq!(metric(&out.join("eval.csv"), "f1"), 1.0);
    let running = fs::read_to_string(out.join("kappa_running.csv")).unwrap();
    assert_eq!(running.lines().count(), 251);
}

#[test]
fn quickstart_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let ok = |o: Output| assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    ok(run(&["gen-data", "--recordings", "4", "--duration-s", "60", "--seed", "1", "--out", p(&d("data"))]));
    assert!(d("data/recording_000.csv").exists() && d("data/recording_000.events.csv").exists());
    ok(run(&["pretrain", "--data", p(&d("data")), "--steps", "20", "--out", p(&d("pre")), "--emit-gnuplot"]));
    for f in ["trace.csv", "trace.gp", "eval.csv", "manifest.txt", "checkpoint"] {
        assert!(d("pre").join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(d("pre/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);

    ok(run(&[
        "gen-data",
        "--recordings",
        "1",
        "--duration-s",
        "600",
        "--bursts-per-hour",
        "30",
        "--seed",
        "2",
        "--out",
        p(&d("bursts")),
    ]));
    ok(run(&[
        "finetune",
        "--checkpoint",
        p(&d("pre/checkpoint")),
        "--data",
        p(&d("bursts")),
        "--steps",
        "20",
        "--out",
        p(&d("ft")),
    ]));
    assert!(metric(&d("ft/finetune.csv"), "positive_windows") > 0.0);
    ok(run(&["eval", "--checkpoint", p(&d("ft/checkpoint")), "--data", p(&d("bursts")), "--out", p(&d("ev"))]));
    let kappa = metric(&d("ev/eval.csv"), "kappa");
    assert!((-1.0..=1.0).contains(&kappa));

    // A pretrained checkpoint has no classifier to score.
    assert_eq!(
        code(&run(&["eval", "--checkpoint", p(&d("pre/checkpoint")), "--data", p(&d("bursts")), "--out", p(&d("x"))])),
        2
    );
}

#[test]
fn forecaster_beats_last_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("fc");
    assert_eq!(
        code(&run(&["gen-data", "--recordings", "1", "--duration-s", "120", "--seed", "4", "--out", p(&data)])),
        0
    );
    let o = run(&["forecast", "--data", p(&data), "--steps", "150", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out.join("forecast.csv");
    assert!(metric(&csv, "model_mse") < metric(&csv, "last_value_mse"));
}

#[test]
fn manifest_reproduces_a_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    assert_eq!(
        code(&run(&["gen-data", "--recordings", "3", "--duration-s", "40", "--seed", "9", "--out", p(&d("data"))])),
        0
    );
    let first = run(&["pretrain", "--data", p(&d("data")), "--steps", "15", "--seed", "5", "--out", p(&d("a"))]);
    assert_eq!(code(&first), 0);
    let again = run(&["pretrain", "--config", p(&d("a/manifest.txt")), "--out", p(&d("b"))]);
    assert_eq!(code(&again), 0, "{}", String::from_utf8_lossy(&again.stderr));
    for f in ["manifest.txt", "trace.csv", "eval.csv", "checkpoint/manifest.txt", "checkpoint/tensors.bin"] {
        assert_eq!(fs::read(d("a").join(f)).unwrap(), fs::read(d("b").join(f)).unwrap(), "{f}");
    }
    // A manifest from one command is refused by another.
    assert_eq!(code(&run(&["forecast", "--config", p(&d("a/manifest.txt")), "--out", p(&d("c"))])), 2);
}

#[test]
fn bench_counters_follow_the_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench-attn", "--times", "4,8,16", "--channels", "2,4", "--reps", "1", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<Vec<u64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let time_dots = |t: u64, c: u64| rows.iter().find(|r| r[0] == t && r[1] == c).unwrap()[5];
    for c in [2, 4] {
        assert_eq!(time_dots(8, c), 4 * time_dots(4, c));
        assert_eq!(time_dots(16, c), 4 * time_dots(8, c));
    }
}
